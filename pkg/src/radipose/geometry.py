"""Core types, the one-parameter division model and epipolar residuals.

Conventions used throughout the package:

* Image points live in *normalized* coordinates: pixel position minus the
  image center, divided by the longer image side.
* Correspondences are stored as an ``(N, 4)`` float array with rows
  ``[x1, y1, x2, y2]`` (distorted points in image 1 and image 2).
* A fundamental matrix ``F`` satisfies ``u(p1, l1)^T F u(p2, l2) = 0`` with
  ``u(p, l) = [x, y, 1 + l (x^2 + y^2)]``.
* A relative pose ``(R, t)`` maps camera-1 coordinates to camera 2:
  ``X2 = R X1 + t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import (
    DegenerateUndistortion,
    GradientDegenerate,
    InvalidModel,
    NoRealRoot,
)

LAMBDA_RANGE = (-2.0, 0.5)
_W_EPS = 1e-12
_GRAD_EPS = 1e-14


@dataclass(frozen=True)
class ImageDims:
    width: int
    height: int

    def __post_init__(self):
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValueError(f"invalid image size {self.width}x{self.height}")

    @property
    def scale(self) -> float:
        return float(max(self.width, self.height))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.width / 2.0, self.height / 2.0])


@dataclass(frozen=True)
class DivisionModel:
    lam: float = 0.0

    @property
    def plausible(self) -> bool:
        return LAMBDA_RANGE[0] <= self.lam <= LAMBDA_RANGE[1]


@dataclass(frozen=True)
class CameraModel:
    """Focal length (normalized units) and division model of one camera.

    ``focal`` is ``None`` when a solver produced only a fundamental matrix and
    the intrinsics have not been decomposed yet.
    """

    focal: Optional[float] = None
    division: DivisionModel = field(default_factory=DivisionModel)

    def __post_init__(self):
        if self.focal is not None and not self.focal > 0:
            raise InvalidModel(f"focal must be positive, got {self.focal}")

    @property
    def lam(self) -> float:
        return self.division.lam


@dataclass(frozen=True, eq=False)
class RelativePose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        n = np.linalg.norm(t)
        if not n > 0:
            raise InvalidModel("translation must be nonzero")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t / n)


@dataclass(frozen=True, eq=False)
class TwoViewModel:
    fundamental: np.ndarray
    cam1: CameraModel = field(default_factory=CameraModel)
    cam2: CameraModel = field(default_factory=CameraModel)
    pose: Optional[RelativePose] = None

    def __post_init__(self):
        object.__setattr__(self, "fundamental", canonicalize(self.fundamental))

    @property
    def lambdas(self) -> tuple[float, float]:
        return self.cam1.lam, self.cam2.lam

    @property
    def focals(self) -> tuple[Optional[float], Optional[float]]:
        return self.cam1.focal, self.cam2.focal

    def with_cameras(self, cam1: CameraModel, cam2: CameraModel) -> "TwoViewModel":
        return replace(self, cam1=cam1, cam2=cam2)


# -- small linear-algebra helpers -------------------------------------------


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def cross3(a, b) -> np.ndarray:
    # np.cross carries a large per-call overhead for single 3-vectors
    return np.array([
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])


def canonicalize(F) -> np.ndarray:
    """Scale ``F`` to unit Frobenius norm with its largest-magnitude entry positive."""
    F = np.array(F, dtype=float).reshape(3, 3)
    n = np.linalg.norm(F)
    if not np.isfinite(n) or n == 0.0:
        raise InvalidModel("fundamental matrix is zero or non-finite")
    F = F / n
    flat = F.ravel()
    if flat[np.argmax(np.abs(flat))] < 0:
        F = -F
    return F


def essential_from_pose(pose: RelativePose) -> np.ndarray:
    return skew(pose.translation) @ pose.rotation


def compose_fundamental(pose: RelativePose, f1: float, f2: float) -> np.ndarray:
    """Fundamental matrix (in the ``u1^T F u2`` convention) of a calibrated pair."""
    E = essential_from_pose(pose)
    Kinv1 = np.diag([1.0 / f1, 1.0 / f1, 1.0])
    Kinv2 = np.diag([1.0 / f2, 1.0 / f2, 1.0])
    return canonicalize(Kinv1 @ E.T @ Kinv2)


def model_from_pose(pose: RelativePose, cam1: CameraModel, cam2: CameraModel) -> TwoViewModel:
    F = compose_fundamental(pose, cam1.focal, cam2.focal)
    return TwoViewModel(F, cam1, cam2, pose)


# -- coordinates and the division model --------------------------------------


def normalize(points_px, dims: ImageDims) -> np.ndarray:
    p = np.asarray(points_px, dtype=float)
    return (p - dims.center) / dims.scale


def denormalize(points, dims: ImageDims) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    return p * dims.scale + dims.center


def normalize_matches(matches_px, dims1: ImageDims, dims2: ImageDims) -> np.ndarray:
    """Pixel matches ``(N, 4)`` to a normalized correspondence array."""
    m = np.asarray(matches_px, dtype=float).reshape(-1, 4)
    return np.hstack([normalize(m[:, :2], dims1), normalize(m[:, 2:], dims2)])


def as_correspondences(p1, p2) -> np.ndarray:
    p1 = np.asarray(p1, dtype=float).reshape(-1, 2)
    p2 = np.asarray(p2, dtype=float).reshape(-1, 2)
    return np.hstack([p1, p2])


def _lam(d) -> float:
    return d.lam if isinstance(d, DivisionModel) else float(d)


def lift(points, lam) -> np.ndarray:
    """Homogeneous undistorted vectors ``[x, y, 1 + lam r^2]`` (not dehomogenized)."""
    p = np.asarray(points, dtype=float)
    lam = _lam(lam)
    w = 1.0 + lam * (p[..., 0] ** 2 + p[..., 1] ** 2)
    return np.stack([p[..., 0], p[..., 1], w], axis=-1)


def undistort(points, d) -> np.ndarray:
    """Apply the division model and dehomogenize.

    Accepts a single point ``(2,)`` or an array ``(N, 2)``; ``d`` is a
    :class:`DivisionModel` or a bare float.
    """
    u = lift(points, d)
    w = u[..., 2]
    if np.any(np.abs(w) < _W_EPS):
        raise DegenerateUndistortion("point maps to infinity under the division model")
    return u[..., :2] / w[..., None]


def distort(points, d) -> np.ndarray:
    """Inverse of :func:`undistort`: move undistorted points back onto the lens image."""
    p = np.asarray(points, dtype=float)
    lam = _lam(d)
    r2 = p[..., 0] ** 2 + p[..., 1] ** 2
    disc = 1.0 - 4.0 * lam * r2
    if np.any(disc < 0):
        raise NoRealRoot("no real distorted radius for lambda > 0 at this radius")
    # r_d / r_u, the root of lam r_u r_d^2 - r_d + r_u = 0 continuous at lam = 0
    scale = 2.0 / (1.0 + np.sqrt(disc))
    return p * scale[..., None]


# -- epipolar residuals -----------------------------------------------------


def _unpack(corrs):
    c = np.asarray(corrs, dtype=float)
    return c.reshape(-1, 4), c.ndim == 1


def algebraic_residuals(F, lam1, lam2, corrs) -> np.ndarray:
    c, _ = _unpack(corrs)
    u1 = lift(c[:, :2], lam1)
    u2 = lift(c[:, 2:], lam2)
    return np.einsum("ni,ij,nj->n", u1, F, u2)


def epipolar_residual(corrs, model: TwoViewModel):
    """``u(p1, l1)^T F u(p2, l2)`` for one correspondence or an ``(N, 4)`` array."""
    c, single = _unpack(corrs)
    _check_w(c, model.cam1.lam, model.cam2.lam)
    r = algebraic_residuals(model.fundamental, model.cam1.lam, model.cam2.lam, c)
    return float(r[0]) if single else r


def _check_w(c, lam1, lam2):
    w1 = 1.0 + lam1 * (c[:, 0] ** 2 + c[:, 1] ** 2)
    w2 = 1.0 + lam2 * (c[:, 2] ** 2 + c[:, 3] ** 2)
    if np.any(np.abs(w1) < _W_EPS) or np.any(np.abs(w2) < _W_EPS):
        raise DegenerateUndistortion("point maps to infinity under the division model")


def residual_and_gradient(F, lam1, lam2, corrs):
    """Algebraic residual and its gradient w.r.t. the distorted ``(x1, y1, x2, y2)``."""
    c, _ = _unpack(corrs)
    u1 = lift(c[:, :2], lam1)
    u2 = lift(c[:, 2:], lam2)
    Fu2 = u2 @ F.T
    Ftu1 = u1 @ F
    eps = np.sum(u1 * Fu2, axis=1)
    grad = np.empty((c.shape[0], 4))
    grad[:, 0] = Fu2[:, 0] + 2.0 * lam1 * c[:, 0] * Fu2[:, 2]
    grad[:, 1] = Fu2[:, 1] + 2.0 * lam1 * c[:, 1] * Fu2[:, 2]
    grad[:, 2] = Ftu1[:, 0] + 2.0 * lam2 * c[:, 2] * Ftu1[:, 2]
    grad[:, 3] = Ftu1[:, 1] + 2.0 * lam2 * c[:, 3] * Ftu1[:, 2]
    return eps, grad


def tangent_sampson_errors(F, lam1, lam2, corrs) -> np.ndarray:
    """Vectorized first-order error in distorted coordinates; ``inf`` where degenerate."""
    eps, grad = residual_and_gradient(F, lam1, lam2, corrs)
    g2 = np.sum(grad * grad, axis=1)
    out = np.full(eps.shape, np.inf)
    ok = g2 >= _GRAD_EPS**2
    out[ok] = eps[ok] ** 2 / g2[ok]
    return out


def tangent_sampson_error(corrs, model: TwoViewModel):
    """Squared first-order distance to the epipolar curve, measured in the distorted images.

    The gradient of the algebraic residual is taken with respect to the four
    distorted coordinates, chaining through the division model, so at
    ``lambda = 0`` this is the classical Sampson error.
    """
    c, single = _unpack(corrs)
    _check_w(c, model.cam1.lam, model.cam2.lam)
    eps, grad = residual_and_gradient(model.fundamental, model.cam1.lam, model.cam2.lam, c)
    gn = np.linalg.norm(grad, axis=1)
    if np.any(gn < _GRAD_EPS):
        raise GradientDegenerate("epipolar residual gradient vanishes")
    err = eps**2 / gn**2
    return float(err[0]) if single else err


# -- cheirality ---------------------------------------------------------------


def bearings(points, cam: CameraModel) -> np.ndarray:
    """Viewing rays ``K^-1 u(p)`` scaled so the third coordinate is 1."""
    p = undistort(np.asarray(points, dtype=float).reshape(-1, 2), cam.division)
    return np.hstack([p / cam.focal, np.ones((p.shape[0], 1))])


def midpoint_depths(corrs, pose: RelativePose, cam1: CameraModel, cam2: CameraModel):
    """Depths of the midpoint-triangulated points in camera 1 and camera 2.

    Returns ``(z1, z2)``; entries are ``nan`` for near-parallel rays.
    """
    c, _ = _unpack(corrs)
    R, t = pose.rotation, pose.translation
    d1 = bearings(c[:, :2], cam1)
    d2 = bearings(c[:, 2:], cam2) @ R  # rows are R^T d2: ray 2 in camera-1 frame
    c2 = -R.T @ t
    # minimize |s1 d1 - (c2 + s2 d2)|^2 over (s1, s2)
    a = np.sum(d1 * d1, axis=1)
    b = np.sum(d1 * d2, axis=1)
    cc = np.sum(d2 * d2, axis=1)
    p = d1 @ c2
    q = d2 @ c2
    den = a * cc - b * b
    ok = den > 1e-12 * a * cc
    with np.errstate(divide="ignore", invalid="ignore"):
        s1 = np.where(ok, (p * cc - b * q) / den, np.nan)
        s2 = np.where(ok, (b * p - a * q) / den, np.nan)
    X = 0.5 * (s1[:, None] * d1 + (c2 + s2[:, None] * d2))
    z1 = X[:, 2]
    z2 = (X @ R.T + t)[:, 2]
    return z1, z2


def triangulate_cheirality(corrs, pose: RelativePose, cam1: CameraModel, cam2: CameraModel):
    """True where the midpoint-triangulated point lies in front of both cameras."""
    c, single = _unpack(corrs)
    z1, z2 = midpoint_depths(c, pose, cam1, cam2)
    with np.errstate(invalid="ignore"):
        ok = (z1 > 0) & (z2 > 0)
    return bool(ok[0]) if single else ok
