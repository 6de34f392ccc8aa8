"""Command-line entry point: ``radipose {estimate,bench-synth,bench-data,report}``.

Pair files are JSON lines, one record per pair::

    {"pair_id": "p0", "dims1": [w, h], "dims2": [w, h],
     "matches": [[x1, y1, x2, y2], ...],            # pixels
     "gt_rotation": [w, x, y, z], "gt_translation": [tx, ty, tz],
     "gt_f1": f, "gt_f2": f,                         # focal / max(w, h)
     "gt_lambda1": l, "gt_lambda2": l,               # optional
     "image1_id": "...", "image2_id": "..."}         # optional

Prior files are JSON lines ``{"image_id": ..., "focal": f, "lambda": l,
"gravity": [gx, gy, gz]}`` with every field but the id optional; focals are
normalized like the ground truth.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from . import methods as methods_mod
from .bench import (
    KINDS,
    REPORT_COLUMNS,
    GroundTruth,
    PairTask,
    ScenarioSpec,
    pair_seed,
    report_row,
    run_synthetic,
    run_tasks,
)
from .errors import NoModelFound, RadiposeError
from .geometry import CameraModel, DivisionModel, ImageDims, RelativePose, normalize_matches
from .methods import MethodSpecError, parse_method, parse_method_list
from .robust import PriorInjection, RansacConfig, ransac_estimate

MIN_MATCHES = 20
SEED_ENV = "RADIPOSE_SEED"


class SchemaError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- file schemas ----------------------------------------------------------------


@dataclass
class PairRecord:
    pair_id: str
    dims1: ImageDims
    dims2: ImageDims
    matches: np.ndarray
    gt_rotation: Optional[np.ndarray] = None
    gt_translation: Optional[np.ndarray] = None
    gt_f1: Optional[float] = None
    gt_f2: Optional[float] = None
    gt_lambda1: Optional[float] = None
    gt_lambda2: Optional[float] = None
    image1_id: str = ""
    image2_id: str = ""

    @property
    def has_gt(self) -> bool:
        return self.gt_rotation is not None and self.gt_translation is not None

    def ground_truth(self) -> GroundTruth:
        q = self.gt_rotation
        R = Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()
        cam1 = CameraModel(self.gt_f1, DivisionModel(self.gt_lambda1 or 0.0))
        cam2 = CameraModel(self.gt_f2, DivisionModel(self.gt_lambda2 or 0.0))
        return GroundTruth(RelativePose(R, self.gt_translation), cam1, cam2)

    @property
    def corrs(self) -> np.ndarray:
        return normalize_matches(self.matches, self.dims1, self.dims2)


def _dims(value, what):
    if not (isinstance(value, (list, tuple)) and len(value) == 2):
        raise SchemaError(f"{what} must be [width, height]")
    w, h = value
    if not (isinstance(w, int) and isinstance(h, int)):
        raise SchemaError(f"{what} must hold integers")
    return ImageDims(w, h)


def _vec(value, n, what):
    a = np.asarray(value, dtype=float)
    if a.shape != (n,) or not np.all(np.isfinite(a)):
        raise SchemaError(f"{what} must be {n} finite numbers")
    return a


def _opt_float(rec, key):
    v = rec.get(key)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise SchemaError(f"{key} must be a finite number")
    return float(v)


def parse_pair(rec: dict, require_gt: bool = True) -> PairRecord:
    if not isinstance(rec, dict):
        raise SchemaError("record must be a JSON object")
    for key in ("pair_id", "dims1", "dims2", "matches"):
        if key not in rec:
            raise SchemaError(f"missing field {key}")
    pid = str(rec["pair_id"])
    m = np.asarray(rec["matches"], dtype=float) if rec["matches"] else np.zeros((0, 4))
    if m.ndim != 2 or m.shape[1] != 4 or not np.all(np.isfinite(m)):
        raise SchemaError("matches must be a list of finite [x1, y1, x2, y2]")
    out = PairRecord(pid, _dims(rec["dims1"], "dims1"), _dims(rec["dims2"], "dims2"), m,
                     image1_id=str(rec.get("image1_id", f"{pid}/1")),
                     image2_id=str(rec.get("image2_id", f"{pid}/2")))
    if "gt_rotation" in rec or require_gt:
        q = _vec(rec.get("gt_rotation"), 4, "gt_rotation")
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise SchemaError("gt_rotation must be a unit quaternion")
        t = _vec(rec.get("gt_translation"), 3, "gt_translation")
        if np.linalg.norm(t) == 0:
            raise SchemaError("gt_translation must be nonzero")
        out.gt_rotation, out.gt_translation = q, t
    for key in ("gt_f1", "gt_f2", "gt_lambda1", "gt_lambda2"):
        setattr(out, key, _opt_float(rec, key))
    for key in ("gt_f1", "gt_f2"):
        if getattr(out, key) is not None and getattr(out, key) <= 0:
            raise SchemaError(f"{key} must be positive")
    return out


def _jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None


def read_pairs(path, require_gt: bool = True) -> list[PairRecord]:
    out = []
    for lineno, rec in _jsonl(path):
        try:
            out.append(parse_pair(rec, require_gt))
        except (SchemaError, ValueError, TypeError) as exc:
            pid = rec.get("pair_id", "?") if isinstance(rec, dict) else "?"
            raise SchemaError(f"{path}:{lineno}: pair {pid}: {exc}") from None
    return out


def read_priors(path) -> dict:
    out = {}
    for lineno, rec in _jsonl(path):
        try:
            if not isinstance(rec, dict) or "image_id" not in rec:
                raise SchemaError("missing field image_id")
            focal, lam = _opt_float(rec, "focal"), _opt_float(rec, "lambda")
            grav = rec.get("gravity")
            if grav is not None:
                grav = tuple(_vec(grav, 3, "gravity"))
            # validates ranges and norms the same way estimation will
            PriorInjection(lam, None, focal, None, grav)
        except (SchemaError, ValueError, TypeError) as exc:
            raise SchemaError(f"{path}:{lineno}: prior record: {exc}") from None
        out[str(rec["image_id"])] = {"focal": focal, "lambda": lam, "gravity": grav}
    return out


def priors_for(pair: PairRecord, priors: dict, mode: str) -> PriorInjection:
    got = []
    for img in (pair.image1_id, pair.image2_id):
        if img not in priors:
            raise SchemaError(f"no prior for image id {img!r} (pair {pair.pair_id})")
        p = priors[img]
        if p["lambda"] is None:
            raise SchemaError(f"prior for image id {img!r} has no lambda")
        if mode == "prior-calibrated" and p["focal"] is None:
            raise SchemaError(f"prior for image id {img!r} has no focal")
        got.append(p)
    a, b = got
    return PriorInjection(a["lambda"], b["lambda"], a["focal"], b["focal"], a["gravity"], b["gravity"])


# -- reports ---------------------------------------------------------------------


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([_cell(r[k]) for k in REPORT_COLUMNS])
    return buf.getvalue()


def render_json(rows, seed: int, config: dict, skipped: int = 0) -> str:
    doc = {"meta": {"seed": seed, "config": config},
           "rows": [{k: r[k] for k in REPORT_COLUMNS} for r in rows],
           "warnings": {"skipped_pairs": skipped}}
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def render_table(rows) -> str:
    cells = [list(REPORT_COLUMNS)]
    for r in rows:
        line = []
        for k in REPORT_COLUMNS:
            v = r[k]
            line.append("-" if v is None else f"{v:.3f}" if isinstance(v, float) else str(v))
        cells.append(line)
    widths = [max(len(c[i]) for c in cells) for i in range(len(REPORT_COLUMNS))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip()
                     for line in cells) + "\n"


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _emit(args, rows, seed, config, skipped=0):
    if args.csv:
        _write(args.csv, render_csv(rows))
    if args.json:
        _write(args.json, render_json(rows, seed, config, skipped))
    if not args.csv and not args.json:
        sys.stdout.write(render_csv(rows))


# -- commands --------------------------------------------------------------------


def _seed(args) -> int:
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise SchemaError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return args.seed


def _ransac_config(args, seed: int) -> RansacConfig:
    return RansacConfig(max_iterations=args.max_iterations, min_iterations=args.min_iterations,
                        confidence=args.confidence, inlier_threshold_px=args.threshold_px,
                        seed=seed, lo_max_lm_iterations=args.lo_iterations)


def _config_meta(args, skip=("csv", "json", "jobs", "func", "command", "seed")) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def cmd_estimate(args) -> int:
    method = parse_method(args.method)
    pairs = read_pairs(args.pairs, require_gt=False)
    if args.pair_id is not None:
        pairs = [p for p in pairs if p.pair_id == args.pair_id]
        if not pairs:
            raise SchemaError(f"pair {args.pair_id!r} not found in {args.pairs}")
    if not pairs:
        raise SchemaError(f"{args.pairs} holds no pairs")
    pair = pairs[0]
    priors = None
    if method.prior:
        if not args.priors:
            raise SchemaError(f"method {method.render()} needs --priors")
        priors = priors_for(pair, read_priors(args.priors), method.prior)
    seed = _seed(args)
    cfg = method.config(_ransac_config(args, seed))
    try:
        res = ransac_estimate(pair.corrs, pair.dims1, pair.dims2, method.engine,
                              method.strategy(priors), cfg)
    except NoModelFound as exc:
        print(f"radipose: no model found: {exc}", file=sys.stderr)
        return 2
    m = res.model
    q = Rotation.from_matrix(m.pose.rotation).as_quat() if m.pose is not None else None
    out = {
        "pair_id": pair.pair_id,
        "method": method.render(),
        "fundamental": [float(v) for v in m.fundamental.ravel()],
        "rotation": None if q is None else [float(q[3]), float(q[0]), float(q[1]), float(q[2])],
        "translation": None if m.pose is None else [float(v) for v in m.pose.translation],
        "f1": m.cam1.focal,
        "f2": m.cam2.focal,
        "lambda1": m.cam1.lam,
        "lambda2": m.cam2.lam,
        "inliers": res.num_inliers,
        "iterations": res.iterations_run,
        "wall_time": res.wall_time,
        "info": res.info,
    }
    print(json.dumps(out, indent=2))
    return 0


def cmd_bench_synth(args) -> int:
    specs = parse_method_list(args.methods)
    seed = _seed(args)
    scen = ScenarioSpec(args.scenario, args.shared, args.pairs, args.points, args.noise_px,
                        args.outliers, seed)
    cfg = _ransac_config(args, seed)
    evals = run_synthetic(scen, specs, cfg, args.jobs, args.timing,
                          (args.prior_lambda_noise, args.prior_focal_noise))
    rows = [report_row(m, e) for m, e in zip(specs, evals)]
    _emit(args, rows, seed, _config_meta(args))
    return 0


def cmd_bench_data(args) -> int:
    specs = parse_method_list(args.methods)
    seed = _seed(args)
    pairs = read_pairs(args.pairs, require_gt=True)
    kept = [p for p in pairs if p.matches.shape[0] >= MIN_MATCHES]
    skipped = len(pairs) - len(kept)
    if not kept:
        raise SchemaError(f"no pair in {args.pairs} has at least {MIN_MATCHES} matches")
    modes = {m.prior for m in specs if m.prior}
    priors = read_priors(args.priors) if args.priors else None
    if modes and priors is None:
        raise SchemaError("prior-based methods need --priors")
    cfg = _ransac_config(args, seed)
    tasks = {mode: [] for mode in modes | {None}}
    for i, p in enumerate(kept):
        gt = p.ground_truth()
        for mode in tasks:
            inj = priors_for(p, priors, mode) if mode else None
            tasks[mode].append(PairTask(
                p.corrs, gt, p.dims1, p.dims2, pair_seed(seed, i), priors=inj,
                has_gt_lambda=p.gt_lambda1 is not None and p.gt_lambda2 is not None,
                has_gt_focal=p.gt_f1 is not None and p.gt_f2 is not None))
    rows = []
    for m in specs:
        evals = run_tasks(tasks[m.prior], [m], cfg, args.jobs, args.timing)[0]
        rows.append(report_row(m, evals))
    _emit(args, rows, seed, _config_meta(args), skipped)
    return 0


def cmd_report(args) -> int:
    try:
        with open(args.report, encoding="utf-8") as fh:
            doc = json.load(fh)
        rows = doc["rows"]
        for r in rows:
            missing = [k for k in REPORT_COLUMNS if k not in r]
            if missing:
                raise SchemaError(f"report row lacks {missing}")
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise SchemaError(f"{args.report}: not a report file ({exc})") from None
    if args.format == "csv":
        sys.stdout.write(render_csv(rows))
    elif args.format == "json":
        sys.stdout.write(render_json(rows, doc.get("meta", {}).get("seed"),
                                     doc.get("meta", {}).get("config", {}),
                                     doc.get("warnings", {}).get("skipped_pairs", 0)))
    else:
        sys.stdout.write(render_table(rows))
        skipped = doc.get("warnings", {}).get("skipped_pairs", 0)
        if skipped:
            sys.stdout.write(f"skipped pairs: {skipped}\n")
    return 0


# -- argument parsing ------------------------------------------------------------


def _positive_int(text):
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {v}")
    return v


def _add_ransac_flags(p):
    g = p.add_argument_group("robust estimation")
    g.add_argument("--seed", type=int, default=0, help=f"base seed (env {SEED_ENV} overrides)")
    g.add_argument("--max-iterations", type=_positive_int, default=1000)
    g.add_argument("--min-iterations", type=int, default=10)
    g.add_argument("--confidence", type=float, default=0.9999)
    g.add_argument("--threshold-px", type=float, default=3.0, help="inlier threshold in pixels")
    g.add_argument("--lo-iterations", type=int, default=25, help="LM iterations per local optimization")


def _add_bench_flags(p):
    p.add_argument("--methods", required=True, help="comma-separated method specs")
    p.add_argument("--jobs", type=_positive_int, default=os.cpu_count() or 1, help="worker processes")
    p.add_argument("--timing", action="store_true",
                   help="report wall time (off by default so reports are byte-reproducible)")
    p.add_argument("--csv", help="write the CSV report here")
    p.add_argument("--json", help="write the JSON report here")
    _add_ransac_flags(p)


def build_parser() -> argparse.ArgumentParser:
    grammar = methods_mod.__doc__.split("\n", 1)[1]
    parser = _Parser(prog="radipose", description="Two-view pose estimation under radial distortion.",
                     epilog="method specs: ENGINE[:lambda-list][+prior|+prior-calibrated][+shared][@blocks]\n"
                            + grammar, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="estimate one pair and print the model as JSON",
                       epilog=grammar, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("pairs", help="JSON-lines pair file")
    p.add_argument("--method", required=True, help="method spec, e.g. 7pt:0,-0.6,-1.2+shared")
    p.add_argument("--pair-id", help="which record to use (default: the first)")
    p.add_argument("--priors", help="JSON-lines prior file for +prior methods")
    _add_ransac_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bench-synth", help="benchmark methods on a synthetic scenario",
                       epilog=grammar, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--scenario", choices=KINDS, default="C")
    p.add_argument("--shared", action="store_true", help="both cameras share focal and lambda")
    p.add_argument("--pairs", type=_positive_int, default=100)
    p.add_argument("--points", type=_positive_int, default=500)
    p.add_argument("--noise-px", type=float, default=1.0)
    p.add_argument("--outliers", type=float, default=0.3)
    p.add_argument("--prior-lambda-noise", type=float, default=0.0,
                   help="std. dev. added to ground-truth lambdas for +prior methods")
    p.add_argument("--prior-focal-noise", type=float, default=0.0,
                   help="relative std. dev. applied to ground-truth focals for +prior methods")
    _add_bench_flags(p)
    p.set_defaults(func=cmd_bench_synth)

    p = sub.add_parser("bench-data", help="benchmark methods on precomputed correspondences",
                       epilog=grammar, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("pairs", help="JSON-lines pair file")
    p.add_argument("--priors", help="JSON-lines prior file")
    _add_bench_flags(p)
    p.set_defaults(func=cmd_bench_data)

    p = sub.add_parser("report", help="render a JSON report")
    p.add_argument("report", help="JSON report written by a bench command")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "noise_px", 0) < 0 or not 0 <= getattr(args, "outliers", 0) < 1:
            raise SchemaError("noise must be >= 0 and outliers in [0, 1)")
        return args.func(args)
    except MethodSpecError as exc:
        print(f"radipose: {exc}\nvalid methods: ENGINE[:lambda-list][+prior|+prior-calibrated][+shared][@blocks]"
              f" with ENGINE one of {', '.join(methods_mod.ENGINES)}", file=sys.stderr)
        return 1
    except (SchemaError, OSError, ValueError) as exc:
        print(f"radipose: {exc}", file=sys.stderr)
        return 1
    except RadiposeError as exc:
        print(f"radipose: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
