"""A small synthetic benchmark, the same thing `radipose bench-synth` runs."""
from radipose import RansacConfig, parse_method_list
from radipose.bench import ScenarioSpec, report_row, run_synthetic

methods = parse_method_list("7pt:0+shared,7pt:-0.6,-0.9,-1.2+shared,9ptFlambda+shared")
spec = ScenarioSpec("C", True, pairs=20, points_per_pair=300, noise_px=1.0, outlier_fraction=0.3, seed=7)
evals = run_synthetic(spec, methods, RansacConfig(seed=7))

print(f"{'method':34s} {'median pose':>11s} {'AUC@10':>7s} {'median eps':>10s}")
for m, e in zip(methods, evals):
    row = report_row(m, e)
    print(f"{row['method']:34s} {row['med_pose']:11.3f} {row['auc10']:7.3f} {row['med_eps']:10.3f}")
