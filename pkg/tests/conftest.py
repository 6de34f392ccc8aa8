import json
import math
import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from scipy.spatial.transform import Rotation

sys.path.insert(0, os.path.dirname(__file__))

from radipose import robust  # noqa: E402
from radipose.bench import ScenarioSpec, generate_pair  # noqa: E402
from radipose.geometry import denormalize  # noqa: E402

settings.register_profile("repo", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

LO_CALLS = {"checked": 0}
_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criteria checks")


@pytest.fixture(autouse=True)
def monotone_lo(monkeypatch):
    """Every lo_refine call made anywhere in a test must not raise the truncated cost."""
    original = robust.lo_refine

    def checked(model, corrs, mask, cfg, threshold_sq=None):
        out = original(model, corrs, mask, cfg, threshold_sq)
        if model.pose is not None and model.cam1.focal is not None and model.cam2.focal is not None:
            c = np.asarray(corrs, float).reshape(-1, 4)[np.asarray(mask, bool)]
            thr = math.inf if threshold_sq is None else threshold_sq
            before = robust.truncated_cost(model, c, thr)
            after = robust.truncated_cost(out, c, thr)
            assert after <= before, f"lo_refine raised the cost {before} -> {after}"
            LO_CALLS["checked"] += 1
        return out

    monkeypatch.setattr(robust, "lo_refine", checked)
    yield


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    for key, value in report.user_properties:
        if key == "criterion":
            _CRITERIA.append((value, report.outcome, dict(report.user_properties).get("measured", "")))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (num, text), outcome, measured in sorted(_CRITERIA):
        flag = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{flag}] criterion {num}: {text} | {measured}")


def write_pairs(path, pairs, drop_lambda=False):
    """Write (corrs, gt, d1, d2) tuples as a JSON-lines pair file."""
    with open(path, "w") as fh:
        for i, (c, gt, d1, d2) in enumerate(pairs):
            m = np.hstack([denormalize(c[:, :2], d1), denormalize(c[:, 2:], d2)])
            q = Rotation.from_matrix(gt.pose.rotation).as_quat()
            rec = {"pair_id": f"p{i}", "dims1": [d1.width, d1.height], "dims2": [d2.width, d2.height],
                   "matches": m.tolist(), "gt_rotation": [q[3], q[0], q[1], q[2]],
                   "gt_translation": gt.pose.translation.tolist(),
                   "gt_f1": gt.cam1.focal, "gt_f2": gt.cam2.focal}
            if not drop_lambda:
                rec["gt_lambda1"], rec["gt_lambda2"] = gt.cam1.lam, gt.cam2.lam
            fh.write(json.dumps(rec) + "\n")


@pytest.fixture(scope="session")
def synthetic_pairs():
    spec = ScenarioSpec("C", True, 1, 200, 0.5, 0.2)
    rng = np.random.default_rng(11)
    return [generate_pair(spec, rng) for _ in range(5)]
