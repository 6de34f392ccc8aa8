"""LO-RANSAC with distortion sampling, prior injection and LM local optimization."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numba
import numpy as np
from scipy.spatial.transform import Rotation

from . import solvers
from .errors import (
    DecompositionFailed,
    DegenerateFocal,
    DegenerateSample,
    InvalidModel,
    NoCheiralityWinner,
    NoModelFound,
    NoRealSolutions,
    NotEnoughCorrespondences,
)
from .geometry import (
    LAMBDA_RANGE,
    CameraModel,
    DivisionModel,
    ImageDims,
    RelativePose,
    TwoViewModel,
    canonicalize,
    cross3,
    model_from_pose,
    skew,
    undistort,
)

ENGINES = {"7pt": 7, "8pt": 8, "9ptFlambda": 9}
BLOCKS = ("rotation", "translation", "focal1", "focal2", "lambda1", "lambda2")
FOCAL_BOX = (1e-3, 1e3)


def _in_range(lam: float) -> bool:
    return LAMBDA_RANGE[0] <= lam <= LAMBDA_RANGE[1]


@dataclass(frozen=True)
class SamplingStrategy:
    """Fixed undistortion candidates per camera.

    With ``shared`` the pairs ``(u1[i], u2[i])`` are enumerated (``u1 == u2``);
    otherwise all ``len(u1) * len(u2)`` combinations are tried.
    """

    u1: tuple = (0.0,)
    u2: tuple = (0.0,)
    shared: bool = False

    def __post_init__(self):
        u1 = tuple(float(v) for v in self.u1)
        u2 = tuple(float(v) for v in self.u2)
        if not u1 or not u2:
            raise ValueError("candidate lists must be nonempty")
        if not all(_in_range(v) for v in u1 + u2):
            raise ValueError(f"undistortion candidates must lie in {LAMBDA_RANGE}")
        if self.shared and u1 != u2:
            raise ValueError("shared strategy needs identical candidate lists")
        object.__setattr__(self, "u1", u1)
        object.__setattr__(self, "u2", u2)

    @classmethod
    def same(cls, lambdas: Sequence[float], shared: bool = False) -> "SamplingStrategy":
        return cls(tuple(lambdas), tuple(lambdas), shared)

    def pairs(self) -> list[tuple[float, float]]:
        if self.shared:
            return [(v, v) for v in self.u1]
        return [(a, b) for a in self.u1 for b in self.u2]


@dataclass(frozen=True)
class PriorInjection:
    """Per-camera priors supplied as data (e.g. from a single-image calibration network).

    Gravity directions are validated and carried along but no in-scope solver
    consumes them.
    """

    lambda1: Optional[float] = None
    lambda2: Optional[float] = None
    focal1: Optional[float] = None
    focal2: Optional[float] = None
    gravity1: Optional[tuple] = None
    gravity2: Optional[tuple] = None

    def __post_init__(self):
        for lam in (self.lambda1, self.lambda2):
            if lam is not None and not _in_range(lam):
                raise ValueError(f"prior lambda {lam} outside {LAMBDA_RANGE}")
        for f in (self.focal1, self.focal2):
            if f is not None and not f > 0:
                raise ValueError(f"prior focal must be positive, got {f}")
        for g in (self.gravity1, self.gravity2):
            if g is not None and abs(np.linalg.norm(g) - 1.0) > 1e-6:
                raise ValueError("gravity prior must be a unit vector")

    @property
    def calibrated(self) -> bool:
        return self.focal1 is not None and self.focal2 is not None

    @property
    def lambdas(self) -> tuple[float, float]:
        return (self.lambda1 or 0.0, self.lambda2 or 0.0)


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 1000
    min_iterations: int = 10
    confidence: float = 0.9999
    inlier_threshold_px: float = 3.0
    seed: int = 0
    refine_blocks: frozenset = frozenset(BLOCKS)
    lo_max_lm_iterations: int = 25
    # ties f1 = f2 and lambda1 = lambda2 in decomposition and refinement
    shared: bool = False

    def __post_init__(self):
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must be in (0, 1)")
        if not self.inlier_threshold_px > 0:
            raise ValueError("inlier threshold must be positive")
        if self.max_iterations < 1 or self.min_iterations < 0:
            raise ValueError("invalid iteration bounds")
        blocks = frozenset(self.refine_blocks)
        unknown = blocks - set(BLOCKS)
        if unknown:
            raise ValueError(f"unknown refinement blocks {sorted(unknown)}")
        object.__setattr__(self, "refine_blocks", blocks)


@dataclass(frozen=True)
class TruncatedScore:
    threshold_sq: float

    def __post_init__(self):
        if not self.threshold_sq > 0:
            raise ValueError("threshold must be positive")

    @classmethod
    def from_pixels(cls, px: float, *dims: ImageDims) -> "TruncatedScore":
        # the larger image gives the tighter normalized threshold
        scale = max(d.scale for d in dims)
        return cls((px / scale) ** 2)


@dataclass
class RansacResult:
    model: TwoViewModel
    inlier_mask: np.ndarray
    score: float
    iterations_run: int
    wall_time: float
    info: dict = field(default_factory=dict)

    @property
    def num_inliers(self) -> int:
        return int(np.count_nonzero(self.inlier_mask))


# -- scoring --------------------------------------------------------------------


@numba.njit(cache=True)
def _tsampson_kernel(c, F, l1, l2):
    n = c.shape[0]
    out = np.empty(n)
    for k in range(n):
        x1, y1, x2, y2 = c[k, 0], c[k, 1], c[k, 2], c[k, 3]
        w1 = 1.0 + l1 * (x1 * x1 + y1 * y1)
        w2 = 1.0 + l2 * (x2 * x2 + y2 * y2)
        a0 = F[0, 0] * x2 + F[0, 1] * y2 + F[0, 2] * w2
        a1 = F[1, 0] * x2 + F[1, 1] * y2 + F[1, 2] * w2
        a2 = F[2, 0] * x2 + F[2, 1] * y2 + F[2, 2] * w2
        b0 = F[0, 0] * x1 + F[1, 0] * y1 + F[2, 0] * w1
        b1 = F[0, 1] * x1 + F[1, 1] * y1 + F[2, 1] * w1
        b2 = F[0, 2] * x1 + F[1, 2] * y1 + F[2, 2] * w1
        eps = x1 * a0 + y1 * a1 + w1 * a2
        g0 = a0 + 2.0 * l1 * x1 * a2
        g1 = a1 + 2.0 * l1 * y1 * a2
        g2 = b0 + 2.0 * l2 * x2 * b2
        g3 = b1 + 2.0 * l2 * y2 * b2
        gg = g0 * g0 + g1 * g1 + g2 * g2 + g3 * g3
        if gg < 1e-28 or not math.isfinite(eps):
            out[k] = np.inf
        else:
            out[k] = eps * eps / gg
    return out


def model_errors(F, lam1: float, lam2: float, c: np.ndarray) -> np.ndarray:
    """Tangent-Sampson errors of every correspondence, ``inf`` where undefined.

    Same quantity as :func:`geometry.tangent_sampson_errors`, compiled for the
    inner loop.
    """
    return _tsampson_kernel(np.ascontiguousarray(c, dtype=float).reshape(-1, 4),
                            np.ascontiguousarray(F, dtype=float), float(lam1), float(lam2))


def _score_errors(errs: np.ndarray, thr: float):
    loss = np.minimum(errs, thr)  # inf (degenerate gradient) truncates to thr
    return float(np.sum(thr - loss)), errs < thr


def score_model(model: TwoViewModel, corrs, s: TruncatedScore):
    """MSAC score (higher is better) and inlier mask under the truncated tangent-Sampson error."""
    errs = model_errors(model.fundamental, model.cam1.lam, model.cam2.lam, corrs)
    return _score_errors(errs, s.threshold_sq)


def truncated_cost(model: TwoViewModel, corrs, threshold_sq: float) -> float:
    e = model_errors(model.fundamental, model.cam1.lam, model.cam2.lam, corrs)
    return float(np.sum(np.minimum(e, threshold_sq)))


# -- local optimization -------------------------------------------------------------


@dataclass
class _State:
    R: np.ndarray
    t: np.ndarray
    f1: float
    f2: float
    l1: float
    l2: float

    @classmethod
    def from_model(cls, m: TwoViewModel) -> "_State":
        return cls(m.pose.rotation.copy(), m.pose.translation.copy(), m.cam1.focal, m.cam2.focal,
                   m.cam1.lam, m.cam2.lam)

    def to_model(self) -> TwoViewModel:
        cam1 = CameraModel(self.f1, DivisionModel(self.l1))
        cam2 = CameraModel(self.f2, DivisionModel(self.l2))
        return model_from_pose(RelativePose(self.R, self.t), cam1, cam2)


def _tangent_basis(t: np.ndarray) -> np.ndarray:
    """Two orthonormal vectors spanning the tangent plane of the unit sphere at t."""
    axis = np.zeros(3)
    axis[np.argmin(np.abs(t))] = 1.0
    b1 = cross3(t, axis)
    b1 /= np.linalg.norm(b1)
    b2 = cross3(t, b1)
    return np.vstack([b1, b2])


class _Param:
    """Which scalar increments are active and how they map onto the state."""

    def __init__(self, blocks, shared: bool):
        names = []
        if "rotation" in blocks:
            names += ["r0", "r1", "r2"]
        if "translation" in blocks:
            names += ["t0", "t1"]
        if shared:
            if {"focal1", "focal2"} & blocks:
                names.append("f")
            if {"lambda1", "lambda2"} & blocks:
                names.append("l")
        else:
            for key, name in (("focal1", "f1"), ("focal2", "f2"), ("lambda1", "l1"), ("lambda2", "l2")):
                if key in blocks:
                    names.append(name)
        self.names = names

    def __len__(self):
        return len(self.names)

    def apply(self, st: _State, delta: np.ndarray) -> _State:
        R, t = st.R, st.t
        f1, f2, l1, l2 = st.f1, st.f2, st.l1, st.l2
        d = dict(zip(self.names, delta))
        if "r0" in d:
            w = np.array([d["r0"], d["r1"], d["r2"]])
            R = R @ Rotation.from_rotvec(w).as_matrix()
            u, _, vt = np.linalg.svd(R)
            R = u @ vt
        if "t0" in d:
            B = _tangent_basis(t)
            t = t + d["t0"] * B[0] + d["t1"] * B[1]
            t = t / np.linalg.norm(t)
        if "f" in d:
            f1 = f2 = float(np.clip(f1 + d["f"], *FOCAL_BOX))
        if "l" in d:
            l1 = l2 = float(np.clip(l1 + d["l"], *LAMBDA_RANGE))
        if "f1" in d:
            f1 = float(np.clip(f1 + d["f1"], *FOCAL_BOX))
        if "f2" in d:
            f2 = float(np.clip(f2 + d["f2"], *FOCAL_BOX))
        if "l1" in d:
            l1 = float(np.clip(l1 + d["l1"], *LAMBDA_RANGE))
        if "l2" in d:
            l2 = float(np.clip(l2 + d["l2"], *LAMBDA_RANGE))
        return _State(R, t, f1, f2, l1, l2)


_NO_PARAMS = (np.zeros((0, 3, 3)),) + (np.zeros(0),) * 4


def lm_residuals(st: _State, c: np.ndarray) -> np.ndarray:
    """Signed residuals whose squares are the tangent-Sampson errors (nan if degenerate)."""
    E = skew(st.t) @ st.R
    r, _ = _jacobian_kernel(np.ascontiguousarray(c), E, *_NO_PARAMS,
                            1.0 / st.f1, 1.0 / st.f2, st.l1, st.l2)
    return r


def lm_jacobian(st: _State, c: np.ndarray, param: _Param):
    """Residuals and their analytic derivatives w.r.t. the active increments."""
    E = skew(st.t) @ st.R
    s1, s2 = 1.0 / st.f1, 1.0 / st.f2
    P = len(param)
    # per-parameter perturbations: dE, d(1/f1), d(1/f2), dl1, dl2
    dE = np.zeros((P, 3, 3))
    ds1 = np.zeros(P)
    ds2 = np.zeros(P)
    dl1 = np.zeros(P)
    dl2 = np.zeros(P)
    B = _tangent_basis(st.t) if "t0" in param.names else None
    tx = skew(st.t)
    for k, name in enumerate(param.names):
        if name[0] == "r":
            e = np.zeros(3)
            e[int(name[1])] = 1.0
            dE[k] = tx @ st.R @ skew(e)
        elif name[0] == "t":
            dE[k] = skew(B[int(name[1])]) @ st.R
        elif name == "f":
            ds1[k] = -s1 * s1
            ds2[k] = -s2 * s2
        elif name == "l":
            dl1[k] = dl2[k] = 1.0
        elif name == "f1":
            ds1[k] = -s1 * s1
        elif name == "f2":
            ds2[k] = -s2 * s2
        elif name == "l1":
            dl1[k] = 1.0
        elif name == "l2":
            dl2[k] = 1.0

    return _jacobian_kernel(np.ascontiguousarray(c), E, dE, ds1, ds2, dl1, dl2,
                            s1, s2, st.l1, st.l2)


@numba.njit(cache=True)
def _jacobian_kernel(c, E, dE, ds1, ds2, dl1, dl2, s1, s2, l1, l2):
    n = c.shape[0]
    P = dE.shape[0]
    r = np.empty(n)
    J = np.empty((n, P))
    a = np.empty(3)
    b = np.empty(3)
    Ea = np.empty(3)
    Etb = np.empty(3)
    g = np.empty(4)
    da = np.empty(3)
    db = np.empty(3)
    dEa = np.empty(3)
    dEtb = np.empty(3)
    dg = np.empty(4)
    for k in range(n):
        x1, y1, x2, y2 = c[k, 0], c[k, 1], c[k, 2], c[k, 3]
        r1 = x1 * x1 + y1 * y1
        r2 = x2 * x2 + y2 * y2
        a[0], a[1], a[2] = x1 * s1, y1 * s1, 1.0 + l1 * r1
        b[0], b[1], b[2] = x2 * s2, y2 * s2, 1.0 + l2 * r2
        for i in range(3):
            Ea[i] = E[i, 0] * a[0] + E[i, 1] * a[1] + E[i, 2] * a[2]
            Etb[i] = E[0, i] * b[0] + E[1, i] * b[1] + E[2, i] * b[2]
        eps = b[0] * Ea[0] + b[1] * Ea[1] + b[2] * Ea[2]
        g[0] = Etb[0] * s1 + 2.0 * l1 * x1 * Etb[2]
        g[1] = Etb[1] * s1 + 2.0 * l1 * y1 * Etb[2]
        g[2] = Ea[0] * s2 + 2.0 * l2 * x2 * Ea[2]
        g[3] = Ea[1] * s2 + 2.0 * l2 * y2 * Ea[2]
        G2 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + g[3] * g[3]
        if G2 < 1e-28:
            r[k] = np.nan
            for p in range(P):
                J[k, p] = np.nan
            continue
        G = math.sqrt(G2)
        r[k] = eps / G
        for p in range(P):
            da[0], da[1], da[2] = ds1[p] * x1, ds1[p] * y1, dl1[p] * r1
            db[0], db[1], db[2] = ds2[p] * x2, ds2[p] * y2, dl2[p] * r2
            for i in range(3):
                dEa[i] = (dE[p, i, 0] * a[0] + dE[p, i, 1] * a[1] + dE[p, i, 2] * a[2]
                          + E[i, 0] * da[0] + E[i, 1] * da[1] + E[i, 2] * da[2])
                dEtb[i] = (dE[p, 0, i] * b[0] + dE[p, 1, i] * b[1] + dE[p, 2, i] * b[2]
                           + E[0, i] * db[0] + E[1, i] * db[1] + E[2, i] * db[2])
            deps = (db[0] * Ea[0] + db[1] * Ea[1] + db[2] * Ea[2]
                    + b[0] * dEa[0] + b[1] * dEa[1] + b[2] * dEa[2])
            dg[0] = dEtb[0] * s1 + Etb[0] * ds1[p] + 2.0 * x1 * (dEtb[2] * l1 + Etb[2] * dl1[p])
            dg[1] = dEtb[1] * s1 + Etb[1] * ds1[p] + 2.0 * y1 * (dEtb[2] * l1 + Etb[2] * dl1[p])
            dg[2] = dEa[0] * s2 + Ea[0] * ds2[p] + 2.0 * x2 * (dEa[2] * l2 + Ea[2] * dl2[p])
            dg[3] = dEa[1] * s2 + Ea[1] * ds2[p] + 2.0 * y2 * (dEa[2] * l2 + Ea[2] * dl2[p])
            gdg = g[0] * dg[0] + g[1] * dg[1] + g[2] * dg[2] + g[3] * dg[3]
            J[k, p] = deps / G - eps * gdg / (G2 * G)
    return r, J


def _state_cost(st: _State, c: np.ndarray, thr: float) -> float:
    r = lm_residuals(st, c)
    e = np.where(np.isfinite(r), r * r, thr)
    return float(np.sum(np.minimum(e, thr)))


def _decompose(model: TwoViewModel, c: np.ndarray, shared: bool,
               prior_focals: Optional[tuple] = None) -> TwoViewModel:
    """Attach focals and pose to an F-only model (principal points at the origin)."""
    F = model.fundamental
    if np.linalg.svd(F, compute_uv=False)[2] > 1e-12:
        F = solvers.project_rank2(F)
    if prior_focals is not None:
        f1, f2 = prior_focals
    else:
        try:
            if shared:
                f1 = f2 = solvers.focal_sturm_shared(F)
            else:
                f1, f2 = solvers.focal_bougnoux(F)
        except DegenerateFocal as exc:
            raise DecompositionFailed(str(exc)) from exc
    if not (FOCAL_BOX[0] <= f1 <= FOCAL_BOX[1] and FOCAL_BOX[0] <= f2 <= FOCAL_BOX[1]):
        raise DecompositionFailed("focal outside the admissible box")
    d1, d2 = model.cam1.division, model.cam2.division
    try:
        pose = solvers.decompose_to_pose(F, f1, f2, c, d1, d2)
    except (NoCheiralityWinner, ValueError) as exc:
        raise DecompositionFailed(str(exc)) from exc
    return model_from_pose(pose, CameraModel(f1, d1), CameraModel(f2, d2))


def lo_refine(model: TwoViewModel, corrs, mask, cfg: RansacConfig,
              threshold_sq: Optional[float] = None) -> TwoViewModel:
    """Levenberg-Marquardt on the truncated tangent-Sampson cost of the masked points.

    Models without a pose are decomposed first (Sturm for shared intrinsics,
    Bougnoux otherwise). ``threshold_sq`` is the truncation level in normalized
    units; without it the masked points are fitted by plain least squares. The
    input is returned unchanged unless refinement lowers the cost.
    """
    c = np.asarray(corrs, dtype=float).reshape(-1, 4)[np.asarray(mask, dtype=bool)]
    thr = math.inf if threshold_sq is None else threshold_sq
    if model.pose is None or model.cam1.focal is None or model.cam2.focal is None:
        model = _decompose(model, c, cfg.shared)
    if c.shape[0] < 8:
        return model
    param = _Param(cfg.refine_blocks, cfg.shared)
    if len(param) == 0:
        return model
    st0 = _State.from_model(model)
    if cfg.shared:
        st0.f2, st0.l2 = st0.f1, st0.l1
    st = st0
    cost0 = cost = _state_cost(st, c, thr)
    mu = 1e-3
    for _ in range(cfg.lo_max_lm_iterations):
        r, J = lm_jacobian(st, c, param)
        act = np.isfinite(r) & (r * r < thr) & np.all(np.isfinite(J), axis=1)
        if not act.any():
            break
        Ja, ra = J[act], r[act]
        H = Ja.T @ Ja
        g = Ja.T @ ra
        improved = False
        while mu < 1e12:
            A = H + mu * np.diag(np.diag(H) + 1e-12)
            try:
                delta = -np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            if np.linalg.norm(delta) < 1e-12:
                break
            cand = param.apply(st, delta)
            new_cost = _state_cost(cand, c, thr)
            if new_cost < cost:
                rel = (cost - new_cost) / max(cost, 1e-300)
                st, cost = cand, new_cost
                mu = max(mu / 10.0, 1e-12)
                improved = True
                break
            mu *= 10.0
        if not improved or rel < 1e-10:
            break
    if cost > cost0 or st is st0:
        return model
    refined = st.to_model()
    # the cost cannot tell E from -E; restore cheirality on the inliers
    try:
        pose = solvers.decompose_to_pose(refined.fundamental, st.f1, st.f2, c,
                                         refined.cam1.division, refined.cam2.division)
    except (NoCheiralityWinner, ValueError):
        return model
    out = model_from_pose(pose, refined.cam1, refined.cam2)
    if truncated_cost(out, c, thr) > truncated_cost(model, c, thr):
        return model
    return out


# -- the estimation loop ---------------------------------------------------------------


def _engine_solve(engine: str, sample: np.ndarray):
    """Run a solver on an already-undistorted sample; yields ``(F, lam_or_None)``."""
    if engine == "7pt":
        return [(F, None) for F in solvers.seven_point(sample)]
    if engine == "8pt":
        return [(solvers.eight_point(sample), None)]
    return solvers.nine_point_lambdas(sample)


def _undistort_corrs(c: np.ndarray, l1: float, l2: float) -> np.ndarray:
    return np.hstack([undistort(c[:, :2], l1), undistort(c[:, 2:], l2)])


def _essential_projection(F: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(F)
    return (U * np.array([1.0, 1.0, 0.0])) @ Vt


def _needed_iterations(ratio: float, s: int, conf: float) -> float:
    if ratio >= 1.0:
        return 0.0
    p = ratio**s
    denom = math.log1p(-p)
    if denom == 0.0:
        return math.inf
    return math.log(1.0 - conf) / denom


def ransac_estimate(corrs, dims1: ImageDims, dims2: ImageDims, engine: str,
                    strategy: Union[SamplingStrategy, PriorInjection, None],
                    cfg: RansacConfig = RansacConfig()) -> RansacResult:
    """Robustly estimate a two-view model with distortion.

    ``engine`` is one of ``"7pt"``, ``"8pt"`` or ``"9ptFlambda"``. Pinhole engines
    run once per undistortion pair of ``strategy``; a :class:`PriorInjection`
    undistorts with the prior lambdas and, if both focals are given, solves on
    calibrated rays and projects onto the essential manifold. The 9-point engine
    ignores the strategy and estimates a shared lambda from the raw points.
    """
    t_start = time.perf_counter()
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}; expected one of {sorted(ENGINES)}")
    c = np.ascontiguousarray(corrs, dtype=float).reshape(-1, 4)
    if not np.all(np.isfinite(c)):
        raise ValueError("correspondences must be finite")
    s = ENGINES[engine]
    n = c.shape[0]
    if n < max(s, 8):
        raise NotEnoughCorrespondences(f"{engine} needs at least {max(s, 8)} correspondences, got {n}")
    thr = TruncatedScore.from_pixels(cfg.inlier_threshold_px, dims1, dims2).threshold_sq

    prior_focals = None
    if engine == "9ptFlambda":
        pairs = [None]
    elif isinstance(strategy, PriorInjection):
        pairs = [strategy.lambdas]
        if strategy.calibrated:
            prior_focals = (strategy.focal1, strategy.focal2)
    else:
        pairs = (strategy or SamplingStrategy()).pairs()

    # undistorted (and calibrated) copies of all points per lambda pair
    views = {}
    for pair in pairs:
        if pair is None:
            views[pair] = c
            continue
        try:
            u = _undistort_corrs(c, *pair)
        except Exception:
            continue
        if prior_focals is not None:
            u = u / np.repeat(np.asarray(prior_focals), 2)
        views[pair] = u

    rng = np.random.default_rng(cfg.seed)
    everything = np.ones(n, dtype=bool)
    best = None
    best_score = -math.inf
    best_mask = np.zeros(n, dtype=bool)
    needed = math.inf
    it = 0
    lo_runs = 0
    rejected = 0

    def consider(model: TwoViewModel, score: float, mask: np.ndarray):
        nonlocal best, best_score, best_mask, needed, lo_runs
        try:
            dec = _decompose(model, c[mask], cfg.shared, prior_focals)
        except (DecompositionFailed, InvalidModel):
            return False
        cands = [dec]
        try:
            lo_runs += 1
            cands.append(lo_refine(dec, c, everything, cfg, thr))
        except (DecompositionFailed, InvalidModel):
            pass
        for m in cands:
            sc, mk = score_model(m, c, TruncatedScore(thr))
            if sc > best_score and _valid(m):
                best, best_score, best_mask = m, sc, mk
        needed = _needed_iterations(best_mask.mean(), s, cfg.confidence)
        return True

    while it < cfg.max_iterations:
        if it >= cfg.min_iterations and it >= needed:
            break
        it += 1
        idx = rng.choice(n, size=s, replace=False)
        for pair, pts in views.items():
            try:
                sols = _engine_solve(engine, pts[idx])
            except (DegenerateSample, NoRealSolutions, InvalidModel, np.linalg.LinAlgError):
                continue
            for F, lam in sols:
                if pair is None:
                    l1 = l2 = lam
                else:
                    l1, l2 = pair
                if not (_in_range(l1) and _in_range(l2)):
                    rejected += 1
                    continue
                if prior_focals is not None:
                    F = _essential_projection(F)
                    k1 = np.diag([1.0 / prior_focals[0]] * 2 + [1.0])
                    k2 = np.diag([1.0 / prior_focals[1]] * 2 + [1.0])
                    F = k1 @ F @ k2
                try:
                    F = canonicalize(F)
                except InvalidModel:
                    continue
                score, mask = _score_errors(model_errors(F, l1, l2, c), thr)
                if score > best_score and mask.sum() >= 5:
                    model = TwoViewModel(F, CameraModel(None, DivisionModel(l1)),
                                         CameraModel(None, DivisionModel(l2)))
                    if not consider(model, score, mask):
                        rejected += 1

    if best is None:
        raise NoModelFound("no valid model was found")

    # final polish over all inliers of the best model
    if best_mask.sum() >= 8:
        polished = lo_refine(best, c, best_mask, cfg, thr)
        sc, mk = score_model(polished, c, TruncatedScore(thr))
        if sc >= best_score and _valid(polished):
            best, best_score, best_mask = polished, sc, mk

    info = {"lo_runs": lo_runs, "rejected_candidates": rejected}
    if prior_focals is not None and engine != "9ptFlambda":
        info["calibrated_substitution"] = f"{engine}+essential-projection"
    return RansacResult(best, best_mask, best_score, it, time.perf_counter() - t_start, info)


def _valid(m: TwoViewModel) -> bool:
    for cam in (m.cam1, m.cam2):
        if not _in_range(cam.lam):
            return False
        if cam.focal is not None and not cam.focal > 0:
            return False
    return True
