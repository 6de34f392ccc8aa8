"""Synthetic scenarios, pose/intrinsics error metrics and report aggregation."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyInput, RadiposeError
from .geometry import (
    LAMBDA_RANGE,
    CameraModel,
    DivisionModel,
    ImageDims,
    RelativePose,
    TwoViewModel,
    as_correspondences,
    cross3,
    distort,
    model_from_pose,
    undistort,
)
from .robust import PriorInjection, RansacConfig, ransac_estimate

DEFAULT_DIMS = ImageDims(1600, 1200)
SENTINEL_DEG = 180.0
SENTINEL_EPS = 10.0
SENTINEL_XI = 10.0
KINDS = ("A", "B", "C")

# scenario A: uniform on [-1.5, 0] plus a ramp on [-1.8, -1.5] falling to half height
_A_UNIFORM_MASS = 1.5 / 1.725


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str = "C"
    shared_lambda: bool = True
    pairs: int = 100
    points_per_pair: int = 500
    noise_px: float = 1.0
    outlier_fraction: float = 0.3
    seed: int = 0
    dims: ImageDims = DEFAULT_DIMS

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"scenario kind must be one of {KINDS}")
        if self.pairs <= 0 or self.points_per_pair <= 0:
            raise ValueError("pairs and points_per_pair must be positive")
        if self.noise_px < 0:
            raise ValueError("noise must be nonnegative")
        if not 0 <= self.outlier_fraction < 1:
            raise ValueError("outlier fraction must be in [0, 1)")


@dataclass(frozen=True)
class GroundTruth:
    pose: RelativePose
    cam1: CameraModel
    cam2: CameraModel

    @property
    def model(self) -> TwoViewModel:
        return model_from_pose(self.pose, self.cam1, self.cam2)


@dataclass
class PairEvaluation:
    rot_err_deg: float
    trans_err_deg: float
    pose_err_deg: float
    eps_lambda: Optional[float]
    xi_focal: Optional[float]
    runtime: float
    failed: bool = False
    flags: tuple = ()


@dataclass
class AggregateReport:
    avg_pose: float
    med_pose: float
    auc_at_10: float
    avg_eps: Optional[float]
    med_eps: Optional[float]
    avg_xi: Optional[float]
    med_xi: Optional[float]
    avg_runtime: float
    count: int = 0
    failures: int = 0


# -- distortion sampling ---------------------------------------------------------


def sample_lambda(kind: str, rng: np.random.Generator, size=None):
    """Draw undistortion parameters for scenario ``A`` (wild), ``B`` (small) or ``C`` (visible)."""
    if kind == "B":
        return rng.uniform(-0.3, 0.0, size)
    if kind == "C":
        return rng.uniform(-1.8, -0.5, size)
    if kind != "A":
        raise ValueError(f"unknown scenario kind {kind!r}")
    u = rng.random(size)
    v = rng.random(size)
    flat = -1.5 * v
    # ramp density ~ (1 + s) on s in [0, 1]; inverse CDF of (s + s^2/2) / 1.5
    ramp = -1.8 + 0.3 * (np.sqrt(1.0 + 3.0 * v) - 1.0)
    out = np.where(u < _A_UNIFORM_MASS, flat, ramp)
    return float(out) if size is None else out


# -- scene generation ---------------------------------------------------------------


def _look_at(center: np.ndarray, target: np.ndarray, roll: float) -> np.ndarray:
    z = target - center
    z /= np.linalg.norm(z)
    up = np.array([0.0, 1.0, 0.0])
    x = cross3(up, z)
    x /= np.linalg.norm(x)
    y = cross3(z, x)
    R = np.vstack([x, y, z])  # world -> camera
    c, s = math.cos(roll), math.sin(roll)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]) @ R


def _inside(p: np.ndarray, dims: ImageDims) -> np.ndarray:
    hw = dims.width / dims.scale / 2.0
    hh = dims.height / dims.scale / 2.0
    return (np.abs(p[:, 0]) <= hw) & (np.abs(p[:, 1]) <= hh)


def _uniform_in_image(rng, n: int, dims: ImageDims) -> np.ndarray:
    hw = dims.width / dims.scale / 2.0
    hh = dims.height / dims.scale / 2.0
    return np.column_stack([rng.uniform(-hw, hw, n), rng.uniform(-hh, hh, n)])


def generate_pair(spec: ScenarioSpec, rng: np.random.Generator):
    """One synthetic image pair: ``(corrs, GroundTruth, dims1, dims2)``.

    Points are drawn uniformly over the first (distorted) image, back-projected
    at random depth, seen by a second camera placed at a baseline of 5-50% of
    the scene depth and looking at a random spot near the first optical axis,
    and finally distorted with the forward division model.
    """
    dims = spec.dims
    lam1 = sample_lambda(spec.kind, rng)
    lam2 = lam1 if spec.shared_lambda else sample_lambda(spec.kind, rng)
    f1 = rng.uniform(0.6, 1.5)
    f2 = f1 if spec.shared_lambda else rng.uniform(0.6, 1.5)
    cam1 = CameraModel(f1, DivisionModel(lam1))
    cam2 = CameraModel(f2, DivisionModel(lam2))

    depth = rng.uniform(3.0, 6.0)
    while True:
        baseline = rng.uniform(0.05, 0.5) * depth
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        center2 = baseline * direction
        target = np.array([rng.uniform(-0.2, 0.2) * depth, rng.uniform(-0.2, 0.2) * depth, depth])
        R = _look_at(center2, target, rng.uniform(-0.5, 0.5))
        t = -R @ center2
        pose = RelativePose(R, t)

        n = spec.points_per_pair
        p1_all, p2_all = [], []
        have = 0
        for _ in range(50):
            p1 = _uniform_in_image(rng, 2 * n, dims)
            ray = np.column_stack([undistort(p1, lam1) / f1, np.ones(2 * n)])
            X = ray * rng.uniform(0.6 * depth, 1.4 * depth, (2 * n, 1))
            X2 = X @ R.T + t
            ok = X2[:, 2] > 1e-3
            p2u = f2 * X2[:, :2] / np.where(ok, X2[:, 2], 1.0)[:, None]
            p2 = distort(p2u, lam2)
            ok &= _inside(p2, dims)
            p1_all.append(p1[ok])
            p2_all.append(p2[ok])
            have += int(ok.sum())
            if have >= n:
                break
        if have >= n:
            break
    p1 = np.vstack(p1_all)[:n]
    p2 = np.vstack(p2_all)[:n]

    sigma = spec.noise_px / dims.scale
    if sigma > 0:
        p1 = p1 + rng.normal(0.0, sigma, p1.shape)
        p2 = p2 + rng.normal(0.0, sigma, p2.shape)
    n_out = int(round(spec.outlier_fraction * n))
    if n_out:
        idx = rng.choice(n, size=n_out, replace=False)
        p2[idx] = _uniform_in_image(rng, n_out, dims)
    return as_correspondences(p1, p2), GroundTruth(pose, cam1, cam2), dims, dims


# -- metrics ------------------------------------------------------------------------


def rotation_error(R_gt, R_est) -> float:
    c = (np.trace(np.asarray(R_gt) @ np.asarray(R_est).T) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def translation_error(t_gt, t_est) -> float:
    c = float(np.dot(t_gt, t_est))
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def metric_errors(gt: GroundTruth, est: Optional[TwoViewModel], shared: bool,
                  runtime: float = 0.0, has_gt_lambda: bool = True,
                  has_gt_focal: bool = True) -> PairEvaluation:
    """Rotation/translation/pose errors in degrees plus distortion and focal errors.

    Missing estimates are recorded with sentinel values (180 degrees, 10.0) and
    flagged so failures still count in the aggregates.
    """
    flags = []
    if est is None or est.pose is None:
        rot = trans = SENTINEL_DEG
        flags.append("no_pose")
    else:
        rot = rotation_error(gt.pose.rotation, est.pose.rotation)
        trans = translation_error(gt.pose.translation, est.pose.translation)

    eps = None
    if has_gt_lambda:
        if est is None:
            eps = SENTINEL_EPS
            flags.append("no_lambda")
        elif shared:
            eps = abs(gt.cam1.lam - est.cam1.lam)
        else:
            eps = 0.5 * (abs(gt.cam1.lam - est.cam1.lam) + abs(gt.cam2.lam - est.cam2.lam))

    xi = None
    if has_gt_focal:
        if est is None or est.cam1.focal is None or est.cam2.focal is None:
            xi = SENTINEL_XI
            flags.append("no_focal")
        else:
            x1 = abs(gt.cam1.focal - est.cam1.focal) / gt.cam1.focal
            x2 = abs(gt.cam2.focal - est.cam2.focal) / gt.cam2.focal
            xi = x1 if shared else 0.5 * (x1 + x2)
    return PairEvaluation(rot, trans, max(rot, trans), eps, xi, runtime,
                          failed=bool(flags), flags=tuple(flags))


def auc_at(errors: Sequence[float], tau: float = 10.0) -> float:
    """Normalized area under the recall curve of ``errors`` on ``[0, tau]``.

    Exact integral of the empirical step recall: ``sum(max(0, tau - e)) / (N tau)``.
    """
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise EmptyInput("auc_at needs at least one error")
    return float(np.sum(np.clip(tau - e, 0.0, None)) / (e.size * tau))


def lower_median(values) -> float:
    v = np.sort(np.asarray(values, dtype=float))
    return float(v[(v.size - 1) // 2])


def _avg_med(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), lower_median(vals)


def aggregate(evals: Sequence[PairEvaluation]) -> AggregateReport:
    if not evals:
        raise EmptyInput("aggregate needs at least one evaluation")
    pose = [e.pose_err_deg for e in evals]
    avg_eps, med_eps = _avg_med([e.eps_lambda for e in evals])
    avg_xi, med_xi = _avg_med([e.xi_focal for e in evals])
    return AggregateReport(
        avg_pose=float(np.mean(pose)),
        med_pose=lower_median(pose),
        auc_at_10=auc_at(pose, 10.0),
        avg_eps=avg_eps,
        med_eps=med_eps,
        avg_xi=avg_xi,
        med_xi=med_xi,
        avg_runtime=float(np.mean([e.runtime for e in evals])),
        count=len(evals),
        failures=sum(e.failed for e in evals),
    )


# -- benchmark runner ---------------------------------------------------------------

REPORT_COLUMNS = ("method", "refinement", "sample", "avg_pose", "med_pose", "auc10",
                  "avg_eps", "med_eps", "avg_xi", "med_xi", "time_ms", "pairs", "failures")


@dataclass(frozen=True, eq=False)
class PairTask:
    """Everything needed to evaluate the methods on one pair, picklable for workers."""

    corrs: np.ndarray
    gt: GroundTruth
    dims1: ImageDims
    dims2: ImageDims
    seed: int
    shared: bool = False
    priors: Optional[PriorInjection] = None
    has_gt_lambda: bool = True
    has_gt_focal: bool = True


def pair_seed(seed: int, index: int) -> int:
    return int(seed) ^ int(index)


def noisy_priors(gt: GroundTruth, rng: np.random.Generator, lambda_sigma: float = 0.0,
                 focal_rel_sigma: float = 0.0) -> PriorInjection:
    """Priors as a single-image calibrator would supply them: ground truth plus noise."""
    lo, hi = LAMBDA_RANGE
    lams = [float(np.clip(c.lam + rng.normal(0.0, lambda_sigma), lo, hi)) if lambda_sigma else c.lam
            for c in (gt.cam1, gt.cam2)]
    focals = [c.focal * max(0.1, 1.0 + rng.normal(0.0, focal_rel_sigma)) if focal_rel_sigma else c.focal
              for c in (gt.cam1, gt.cam2)]
    return PriorInjection(lams[0], lams[1], focals[0], focals[1])


def synthetic_task(spec: ScenarioSpec, index: int, prior_noise=(0.0, 0.0)) -> PairTask:
    ps = pair_seed(spec.seed, index)
    corrs, gt, d1, d2 = generate_pair(spec, np.random.default_rng(ps))
    priors = noisy_priors(gt, np.random.default_rng([ps, 1]), *prior_noise)
    return PairTask(corrs, gt, d1, d2, ps, spec.shared_lambda, priors)


def evaluate_method(task: PairTask, method, base_cfg: RansacConfig = RansacConfig(),
                    timing: bool = False) -> PairEvaluation:
    """Run one method on one pair; solver failures become sentinel evaluations."""
    cfg = replace(method.config(base_cfg), seed=task.seed)
    est, runtime = None, 0.0
    try:
        res = ransac_estimate(task.corrs, task.dims1, task.dims2, method.engine,
                              method.strategy(task.priors), cfg)
        est, runtime = res.model, res.wall_time
    except RadiposeError:
        pass
    return metric_errors(task.gt, est, task.shared, runtime if timing else 0.0,
                         task.has_gt_lambda, task.has_gt_focal)


def _evaluate_all(args):
    task, methods, cfg, timing = args
    if not isinstance(task, PairTask):
        task = synthetic_task(*task)
    return [evaluate_method(task, m, cfg, timing) for m in methods]


def run_tasks(tasks, methods, cfg: RansacConfig = RansacConfig(), jobs: int = 1,
              timing: bool = False) -> list:
    """Evaluate every method on every task; returns one evaluation list per method.

    A task is a :class:`PairTask` or the ``(spec, index, prior_noise)`` arguments of
    :func:`synthetic_task`, in which case the pair is generated inside the worker.
    Results keep task order whatever the pool size.
    """
    methods = list(methods)
    work = [(t, methods, cfg, timing) for t in tasks]
    if jobs <= 1 or len(work) <= 1:
        per_pair = [_evaluate_all(w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_pair = list(pool.map(_evaluate_all, work, chunksize=max(1, len(work) // (4 * jobs))))
    return [[evals[k] for evals in per_pair] for k in range(len(methods))]


def run_synthetic(spec: ScenarioSpec, methods, cfg: RansacConfig = RansacConfig(), jobs: int = 1,
                  timing: bool = False, prior_noise=(0.0, 0.0)) -> list:
    tasks = [(spec, i, tuple(prior_noise)) for i in range(spec.pairs)]
    return run_tasks(tasks, methods, cfg, jobs, timing)


def report_row(method, evals: Sequence[PairEvaluation]) -> dict:
    agg = aggregate(evals)
    return {
        "method": method.render(),
        "refinement": method.refinement,
        "sample": method.sample,
        "avg_pose": agg.avg_pose,
        "med_pose": agg.med_pose,
        "auc10": agg.auc_at_10,
        "avg_eps": agg.avg_eps,
        "med_eps": agg.med_eps,
        "avg_xi": agg.avg_xi,
        "med_xi": agg.med_xi,
        "time_ms": agg.avg_runtime * 1e3,
        "pairs": agg.count,
        "failures": agg.failures,
    }
