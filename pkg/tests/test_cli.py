import csv
import io
import json

import numpy as np
import pytest

from conftest import write_pairs
from radipose.bench import REPORT_COLUMNS
from radipose.cli import main, read_pairs


@pytest.fixture
def pair_file(tmp_path, synthetic_pairs):
    path = tmp_path / "pairs.jsonl"
    write_pairs(path, synthetic_pairs)
    return path


@pytest.fixture
def prior_file(tmp_path, synthetic_pairs):
    path = tmp_path / "priors.jsonl"
    with open(path, "w") as fh:
        for i, (_, gt, _, _) in enumerate(synthetic_pairs):
            for k, cam in ((1, gt.cam1), (2, gt.cam2)):
                fh.write(json.dumps({"image_id": f"p{i}/{k}", "focal": cam.focal, "lambda": cam.lam}) + "\n")
    return path


def run(capsys, *argv):
    try:
        code = main([str(a) for a in argv])
    except SystemExit as exc:  # argparse usage errors
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


class TestEstimate:
    def test_nine_point(self, capsys, pair_file):
        code, out, _ = run(capsys, "estimate", pair_file, "--method", "9ptFlambda")
        assert code == 0
        doc = json.loads(out)
        assert doc["inliers"] > 0
        assert len(doc["fundamental"]) == 9 and len(doc["rotation"]) == 4
        assert np.linalg.norm(doc["rotation"]) == pytest.approx(1.0)
        for key in ("translation", "f1", "f2", "lambda1", "lambda2", "iterations", "wall_time"):
            assert key in doc

    def test_select_pair_and_prior(self, capsys, pair_file, prior_file):
        code, out, _ = run(capsys, "estimate", pair_file, "--method", "8pt+prior-calibrated",
                           "--pair-id", "p2", "--priors", prior_file)
        assert code == 0 and json.loads(out)["pair_id"] == "p2"

    def test_malformed_file(self, capsys, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"pair_id": "x", "dims1": [10, 10]\n')
        code, _, err = run(capsys, "estimate", bad, "--method", "7pt")
        assert code == 1 and "invalid JSON" in err

    def test_schema_violation_names_record(self, capsys, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text(json.dumps({"pair_id": "oops", "dims1": [10, 10], "dims2": [10, 10],
                                   "matches": [[1, 2, 3]]}) + "\n")
        code, _, err = run(capsys, "estimate", bad, "--method", "7pt")
        assert code == 1 and "oops" in err

    def test_unknown_method(self, capsys, pair_file):
        code, _, err = run(capsys, "estimate", pair_file, "--method", "5pt")
        assert code == 1
        assert "7pt" in err and "8pt" in err and "9ptFlambda" in err

    def test_no_model(self, capsys, tmp_path):
        x = np.linspace(0, 1000, 30)
        rec = {"pair_id": "line", "dims1": [1000, 1000], "dims2": [1000, 1000],
               "matches": np.column_stack([x, x, x, x]).tolist()}
        path = tmp_path / "line.jsonl"
        path.write_text(json.dumps(rec) + "\n")
        code, _, err = run(capsys, "estimate", path, "--method", "7pt", "--max-iterations", "20")
        assert code == 2 and "no model" in err

    def test_missing_file(self, capsys, tmp_path):
        code, _, _ = run(capsys, "estimate", tmp_path / "nope.jsonl", "--method", "7pt")
        assert code == 1


class TestBenchSynth:
    def test_two_rows_finite(self, capsys, tmp_path):
        out_csv = tmp_path / "r.csv"
        out_json = tmp_path / "r.json"
        code, _, _ = run(capsys, "bench-synth", "--scenario", "B", "--shared", "--pairs", 50, "--points", 100,
                         "--methods", "7pt:0,9ptFlambda", "--csv", out_csv, "--json", out_json, "--jobs", 1)
        assert code == 0
        rows = list(csv.DictReader(io.StringIO(out_csv.read_text())))
        assert [r["method"] for r in rows] == ["7pt:0", "9ptFlambda"]
        for r in rows:
            for k in REPORT_COLUMNS[3:]:
                assert np.isfinite(float(r[k]))
        doc = json.loads(out_json.read_text())
        assert set(doc) == {"meta", "rows", "warnings"}
        assert doc["warnings"] == {"skipped_pairs": 0}
        # JSON and CSV agree field for field
        for r, j in zip(rows, doc["rows"]):
            assert list(j) == list(REPORT_COLUMNS)
            for k in REPORT_COLUMNS:
                assert r[k] == ("" if j[k] is None else str(j[k]))

    def test_zero_pairs(self, capsys):
        code, _, _ = run(capsys, "bench-synth", "--pairs", 0, "--methods", "7pt")
        assert code == 1

    def test_bad_outliers(self, capsys):
        code, _, _ = run(capsys, "bench-synth", "--outliers", 1.5, "--methods", "7pt")
        assert code == 1

    def test_same_seed_same_bytes(self, capsys, tmp_path):
        outs = []
        for k in range(2):
            path = tmp_path / f"{k}.csv"
            run(capsys, "bench-synth", "--pairs", 3, "--points", 120, "--methods", "7pt:0,-1", "--seed", 4,
                "--csv", path, "--jobs", 1)
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]

    def test_seed_from_environment(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv("RADIPOSE_SEED", "17")
        path = tmp_path / "r.json"
        run(capsys, "bench-synth", "--pairs", 2, "--points", 80, "--methods", "7pt", "--seed", 3,
            "--json", path, "--jobs", 1)
        assert json.loads(path.read_text())["meta"]["seed"] == 17

    def test_stdout_when_no_files(self, capsys):
        code, out, _ = run(capsys, "bench-synth", "--pairs", 2, "--points", 80, "--methods", "7pt", "--jobs", 1)
        assert code == 0 and out.splitlines()[0] == ",".join(REPORT_COLUMNS)


class TestBenchData:
    def test_one_row_over_all_pairs(self, capsys, pair_file, tmp_path):
        path = tmp_path / "r.json"
        code, _, _ = run(capsys, "bench-data", pair_file, "--methods", "7pt:0,-0.6,-1.2", "--json", path,
                         "--jobs", 1)
        assert code == 0
        rows = json.loads(path.read_text())["rows"]
        assert len(rows) == 1 and rows[0]["pairs"] == 5

    def test_missing_prior_is_named(self, capsys, pair_file, prior_file, tmp_path):
        lines = prior_file.read_text().splitlines()
        trimmed = tmp_path / "trimmed.jsonl"
        trimmed.write_text("\n".join(l for l in lines if '"p3/2"' not in l) + "\n")
        code, _, err = run(capsys, "bench-data", pair_file, "--priors", trimmed, "--methods", "7pt+prior")
        assert code == 1 and "p3/2" in err

    def test_short_pair_skipped(self, capsys, tmp_path, synthetic_pairs):
        pairs = list(synthetic_pairs)
        c, gt, d1, d2 = pairs[0]
        pairs[0] = (c[:19], gt, d1, d2)
        path = tmp_path / "pairs.jsonl"
        write_pairs(path, pairs)
        out = tmp_path / "r.json"
        code, _, _ = run(capsys, "bench-data", path, "--methods", "9ptFlambda", "--json", out, "--jobs", 1)
        doc = json.loads(out.read_text())
        assert code == 0
        assert doc["warnings"]["skipped_pairs"] == 1 and doc["rows"][0]["pairs"] == 4

    def test_pose_only_without_lambda(self, capsys, tmp_path, synthetic_pairs):
        path = tmp_path / "pairs.jsonl"
        write_pairs(path, synthetic_pairs[:2], drop_lambda=True)
        out = tmp_path / "r.json"
        run(capsys, "bench-data", path, "--methods", "7pt", "--json", out, "--jobs", 1)
        row = json.loads(out.read_text())["rows"][0]
        assert row["avg_eps"] is None and row["avg_pose"] is not None

    def test_prior_methods(self, capsys, pair_file, prior_file, tmp_path):
        out = tmp_path / "r.json"
        code, _, _ = run(capsys, "bench-data", pair_file, "--priors", prior_file,
                         "--methods", "7pt+prior,8pt+prior-calibrated", "--json", out, "--jobs", 1)
        rows = json.loads(out.read_text())["rows"]
        assert code == 0 and [r["sample"] for r in rows] == ["prior", "prior-calibrated"]

    def test_bad_quaternion(self, capsys, tmp_path, pair_file):
        rec = json.loads(pair_file.read_text().splitlines()[0])
        rec["gt_rotation"] = [1.0, 1.0, 0.0, 0.0]
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(rec) + "\n")
        code, _, err = run(capsys, "bench-data", path, "--methods", "7pt")
        assert code == 1 and "p0" in err and "quaternion" in err


class TestReport:
    def test_render(self, capsys, tmp_path):
        path = tmp_path / "r.json"
        run(capsys, "bench-synth", "--pairs", 2, "--points", 80, "--methods", "7pt,9ptFlambda",
            "--json", path, "--jobs", 1)
        code, out, _ = run(capsys, "report", path)
        assert code == 0 and "9ptFlambda" in out and "auc10" in out
        code, out, _ = run(capsys, "report", path, "--format", "csv")
        assert out.splitlines()[0] == ",".join(REPORT_COLUMNS)

    def test_not_a_report(self, capsys, tmp_path):
        path = tmp_path / "x.json"
        path.write_text("[1, 2]")
        code, _, _ = run(capsys, "report", path)
        assert code == 1


def test_pair_reader_defaults(pair_file):
    pairs = read_pairs(pair_file)
    assert pairs[0].image1_id == "p0/1" and pairs[0].image2_id == "p0/2"
    assert pairs[0].corrs.shape[1] == 4


def test_help_documents_grammar(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bench-synth", "--help"])
    assert exc.value.code == 0
    assert "+shared" in capsys.readouterr().out
