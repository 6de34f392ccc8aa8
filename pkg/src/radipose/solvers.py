"""Fundamental-matrix solvers and decompositions of F into focals and pose.

All solvers work on the ``(N, 4)`` correspondence arrays described in
:mod:`radipose.geometry` and use the ``u1^T F u2 = 0`` convention, so one row
of a design matrix is ``kron(u1, u2)`` and ``f`` is ``F`` in row-major order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List

import numba
import numpy as np
import scipy.linalg

from .errors import (
    DegenerateFocal,
    DegenerateSample,
    InvalidModel,
    NoCheiralityWinner,
    NoRealSolutions,
    SingularA0,
)
from .geometry import (
    LAMBDA_RANGE,
    CameraModel,
    DivisionModel,
    RelativePose,
    TwoViewModel,
    canonicalize,
    midpoint_depths,
    skew,
)

SIGMA_CUTOFF = 1e-8
_RANK_TOL = 1e-10
# f indices (0-based) that survive the reduction: f9, then sigma*f{3,6,7,8,9}
_A1_COLS = [2, 5, 6, 7, 8]


@dataclass
class SolverOutput:
    candidates: List[TwoViewModel]

    def __len__(self):
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)


@dataclass
class PencilMatrices:
    """Coefficients of ``(A0 + lam A1 + lam^2 A2) f = 0``, each ``n x 9``."""

    A0: np.ndarray
    A1: np.ndarray
    A2: np.ndarray

    def at(self, lam: float) -> np.ndarray:
        return self.A0 + lam * self.A1 + lam * lam * self.A2


def design_matrix(u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    """Rows ``kron(u1_i, u2_i)`` for homogeneous points ``u1, u2`` of shape ``(n, 3)``."""
    return (u1[:, :, None] * u2[:, None, :]).reshape(-1, 9)


def _homog(p: np.ndarray) -> np.ndarray:
    return np.hstack([p, np.ones((p.shape[0], 1))])


# -- seven point --------------------------------------------------------------


@numba.njit(cache=True)
def _cubic_real_roots(a, b, c, d):
    """Real roots of ``a x^3 + b x^2 + c x + d`` (Cardano / trigonometric form).

    Returns ``(roots, count)``. Each root gets one Newton polish step.
    """
    roots = np.zeros(3)
    scale = max(max(abs(a), abs(b)), max(abs(c), abs(d)))
    if scale == 0.0:
        return roots, 0
    if abs(a) < 1e-14 * scale:
        if abs(b) < 1e-14 * scale:
            if c == 0.0:
                return roots, 0
            roots[0] = -d / c
            return roots, 1
        disc = c * c - 4.0 * b * d
        if disc < 0:
            return roots, 0
        s = math.sqrt(disc)
        q = -0.5 * (c + math.copysign(s, c))
        roots[0] = q / b
        if q == 0.0:
            return roots, 1
        roots[1] = d / q
        return roots, 2
    b, c, d = b / a, c / a, d / a
    p = c - b * b / 3.0
    q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d
    shift = -b / 3.0
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    if disc > 0:
        s = math.sqrt(disc)
        u = math.copysign(abs(-q / 2.0 + s) ** (1.0 / 3.0), -q / 2.0 + s)
        v = math.copysign(abs(-q / 2.0 - s) ** (1.0 / 3.0), -q / 2.0 - s)
        roots[0] = u + v + shift
        n = 1
    elif p == 0.0:
        roots[0] = shift
        n = 1
    else:
        m = 2.0 * math.sqrt(-p / 3.0)
        arg = max(-1.0, min(1.0, 3.0 * q / (p * m)))
        theta = math.acos(arg) / 3.0
        for k in range(3):
            roots[k] = m * math.cos(theta - 2.0 * math.pi * k / 3.0) + shift
        n = 3
    for k in range(n):
        x = roots[k]
        fx = ((x + b) * x + c) * x + d
        dfx = (3.0 * x + 2.0 * b) * x + c
        if dfx != 0.0:
            roots[k] = x - fx / dfx
    return roots, n


@numba.njit(cache=True)
def _det3(M):
    return (
        M[0, 0] * (M[1, 1] * M[2, 2] - M[1, 2] * M[2, 1])
        - M[0, 1] * (M[1, 0] * M[2, 2] - M[1, 2] * M[2, 0])
        + M[0, 2] * (M[1, 0] * M[2, 1] - M[1, 1] * M[2, 0])
    )


@numba.njit(cache=True)
def _det_pencil_coeffs(A, B):
    """Coefficients ``(c3, c2, c1, c0)`` of the cubic ``det(A + x B)``."""
    c0 = _det3(A)
    c3 = _det3(B)
    dp = _det3(A + B)
    dm = _det3(A - B)
    c2 = 0.5 * (dp + dm) - c0
    c1 = 0.5 * (dp - dm) - c3
    return c3, c2, c1, c0


@numba.njit(cache=True)
def _null_space_7x9(c):
    """Two null vectors of the 7x9 design matrix by Gauss-Jordan with full pivoting."""
    A = np.empty((7, 9))
    for i in range(7):
        x, y, xp, yp = c[i, 0], c[i, 1], c[i, 2], c[i, 3]
        A[i, 0] = x * xp
        A[i, 1] = x * yp
        A[i, 2] = x
        A[i, 3] = y * xp
        A[i, 4] = y * yp
        A[i, 5] = y
        A[i, 6] = xp
        A[i, 7] = yp
        A[i, 8] = 1.0
    cols = np.arange(9)
    amax = np.max(np.abs(A))
    ok = True
    for k in range(7):
        best, bi, bj = -1.0, k, k
        for i in range(k, 7):
            for j in range(k, 9):
                v = abs(A[i, j])
                if v > best:
                    best, bi, bj = v, i, j
        if best <= 1e-11 * amax:
            ok = False
            break
        if bi != k:
            for j in range(9):
                A[k, j], A[bi, j] = A[bi, j], A[k, j]
        if bj != k:
            for i in range(7):
                A[i, k], A[i, bj] = A[i, bj], A[i, k]
            cols[k], cols[bj] = cols[bj], cols[k]
        piv = A[k, k]
        for j in range(k, 9):
            A[k, j] /= piv
        for i in range(7):
            if i != k and A[i, k] != 0.0:
                m = A[i, k]
                for j in range(k, 9):
                    A[i, j] -= m * A[k, j]
    N = np.zeros((2, 9))
    if ok:
        for n in range(2):
            N[n, cols[7 + n]] = 1.0
            for i in range(7):
                N[n, cols[i]] = -A[i, 7 + n]
    return N, ok


@numba.njit(cache=True)
def _canonical(F):
    s = 0.0
    big = 0.0
    for i in range(3):
        for j in range(3):
            s += F[i, j] * F[i, j]
            if abs(F[i, j]) > abs(big):
                big = F[i, j]
    n = math.sqrt(s)
    if big < 0:
        n = -n
    return F / n


@numba.njit(cache=True)
def _seven_point_kernel(c):
    out = np.zeros((4, 3, 3))
    N, ok = _null_space_7x9(c)
    if not ok:
        return out, -1
    F1 = N[0].reshape(3, 3)
    F2 = N[1].reshape(3, 3)
    c3, c2, c1, c0 = _det_pencil_coeffs(F2, F1)
    roots, n = _cubic_real_roots(c3, c2, c1, c0)
    k = 0
    for i in range(n):
        out[k] = _canonical(F2 + roots[i] * F1)
        k += 1
    scale = max(max(abs(c3), abs(c2)), max(abs(c1), abs(c0)))
    if abs(c3) < 1e-14 * scale:
        # the cubic lost a degree: F1 alone is the solution at infinity
        out[k] = _canonical(F1.copy())
        k += 1
    return out, k


def seven_point(corrs) -> List[np.ndarray]:
    """Raw 7-point solver on undistorted (pinhole) points; returns canonical F matrices."""
    c = np.ascontiguousarray(corrs, dtype=float).reshape(-1, 4)
    if c.shape[0] != 7:
        raise ValueError("seven_point needs exactly 7 correspondences")
    Fs, k = _seven_point_kernel(c)
    if k < 0:
        raise DegenerateSample("7x9 design matrix has rank < 7")
    return list(Fs[:k])


def seven_point_F(corrs) -> SolverOutput:
    """Classical 7-point solver: one to three rank-2 fundamental matrices."""
    return SolverOutput([TwoViewModel(F) for F in seven_point(corrs)])


# -- eight point --------------------------------------------------------------


def eight_point(corrs) -> np.ndarray:
    c = np.asarray(corrs, dtype=float).reshape(-1, 4)
    if c.shape[0] < 8:
        raise ValueError("eight_point needs at least 8 correspondences")
    A = design_matrix(_homog(c[:, :2]), _homog(c[:, 2:]))
    _, s, vt = np.linalg.svd(A, full_matrices=False) if A.shape[0] >= 9 else np.linalg.svd(A)
    if s[7] <= _RANK_TOL * s[0]:
        raise DegenerateSample("design matrix has rank < 8")
    return project_rank2(vt[-1].reshape(3, 3))


def eight_point_F(corrs) -> SolverOutput:
    """Linear least-squares F followed by rank-2 projection (single candidate)."""
    return SolverOutput([TwoViewModel(eight_point(corrs))])


def project_rank2(F_raw) -> np.ndarray:
    """Closest rank-2 matrix in Frobenius norm, canonicalized."""
    U, s, Vt = np.linalg.svd(np.asarray(F_raw, dtype=float).reshape(3, 3))
    if s[0] == 0.0:
        raise InvalidModel("cannot project a zero matrix")
    return canonicalize((U * np.array([s[0], s[1], 0.0])) @ Vt)


# -- nine point F lambda --------------------------------------------------------


def build_pencil(corrs) -> PencilMatrices:
    """Coefficient matrices of the equal-distortion epipolar constraint.

    Expanding ``kron(u(p1, lam), u(p2, lam))`` in powers of ``lam`` gives, per
    correspondence with ``r2 = x^2 + y^2`` (image 1) and ``q2`` (image 2)::

        A0 = [x x', x y', x, y x', y y', y, x', y', 1]
        A1 = [0, 0, x q2, 0, 0, y q2, x' r2, y' r2, r2 + q2]
        A2 = [0, ..., 0, r2 q2]
    """
    c = np.asarray(corrs, dtype=float).reshape(-1, 4)
    x, y, xp, yp = c.T
    r2 = x * x + y * y
    q2 = xp * xp + yp * yp
    n = c.shape[0]
    A0 = design_matrix(_homog(c[:, :2]), _homog(c[:, 2:]))
    A1 = np.zeros((n, 9))
    A1[:, 2] = x * q2
    A1[:, 5] = y * q2
    A1[:, 6] = xp * r2
    A1[:, 7] = yp * r2
    A1[:, 8] = r2 + q2
    A2 = np.zeros((n, 9))
    A2[:, 8] = r2 * q2
    return PencilMatrices(A0, A1, A2)


def _solve_a0(A0: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """``A0^{-1} rhs`` (n = 9) or its least-squares counterpart via pivoted QR."""
    Q, R, piv = scipy.linalg.qr(A0, mode="economic", pivoting=True, check_finite=False)
    d = np.abs(np.diag(R))
    if d[-1] <= _RANK_TOL * d[0]:
        raise SingularA0("A0 is rank deficient")
    z = scipy.linalg.solve_triangular(R, Q.T @ rhs, check_finite=False)
    out = np.empty_like(z)
    out[piv] = z
    return out


def reduced_companion(pencil: PencilMatrices) -> np.ndarray:
    """The 6x6 matrix whose eigenvalues are the inverse distortions ``1 / lam``.

    State ordering is ``[f9, s f3, s f6, s f7, s f8, s f9]`` with ``s = 1/lam``;
    it is what remains of the 18x18 companion of the reversed pencil after
    removing zero columns (and their rows) inherited from ``A2`` and ``A1``.
    """
    rhs = np.column_stack([pencil.A2[:, 8], pencil.A1[:, _A1_COLS]])
    X = -_solve_a0(pencil.A0, rhs)  # 9 x 6: [M2[:, 8], M1[:, 2,5,6,7,8]]
    B = np.zeros((6, 6))
    B[0, 5] = 1.0
    B[1:, :] = X[_A1_COLS, :]
    return B


def _null_vector(A: np.ndarray) -> np.ndarray:
    if A.shape[0] < 9:
        A = np.vstack([A, np.zeros((9 - A.shape[0], 9))])
    return np.linalg.svd(A, full_matrices=False)[2][-1]


def nine_point_lambdas(corrs):
    """Raw 9-point F-lambda solver: list of ``(F, lam)`` with F NOT rank-2 projected."""
    c = np.asarray(corrs, dtype=float).reshape(-1, 4)
    if c.shape[0] < 9:
        raise ValueError("nine_point_F_lambda needs at least 9 correspondences")
    P = build_pencil(c)
    sig = np.linalg.eigvals(reduced_companion(P))
    out = []
    for s in sig:
        if abs(s.imag) > 1e-6 * max(1.0, abs(s.real)) or abs(s.real) <= SIGMA_CUTOFF:
            continue
        lam = 1.0 / s.real
        if not LAMBDA_RANGE[0] <= lam <= LAMBDA_RANGE[1]:
            continue
        f = _null_vector(P.at(lam))
        try:
            out.append((canonicalize(f.reshape(3, 3)), lam))
        except InvalidModel:
            continue
    if not out:
        raise NoRealSolutions("no real distortion in the plausible range")
    return out


def nine_point_F_lambda(corrs) -> SolverOutput:
    """Equal-distortion F-lambda solver from nine or more correspondences."""
    cands = []
    for F, lam in nine_point_lambdas(corrs):
        cam = CameraModel(None, DivisionModel(lam))
        cands.append(TwoViewModel(F, cam, cam))
    return SolverOutput(cands)


# -- focal extraction -------------------------------------------------------------


def _hz(F) -> np.ndarray:
    """Switch to the ``x2^T G x1 = 0`` convention the closed forms are written in."""
    return np.asarray(F, dtype=float).reshape(3, 3).T


def _bougnoux_sq(G: np.ndarray) -> float:
    """Squared focal of the camera whose points multiply G from the right."""
    p = np.array([0.0, 0.0, 1.0])
    I3 = np.diag([1.0, 1.0, 0.0])
    e2 = np.linalg.svd(G.T)[2][-1]  # G^T e2 = 0
    e2x = skew(e2)
    num = -(p @ e2x @ I3 @ G @ p) * (p @ G.T @ p)
    den = p @ e2x @ I3 @ G @ I3 @ G.T @ p
    return num / den if den != 0.0 else math.nan


def focal_bougnoux(F) -> tuple[float, float]:
    """Closed-form focal lengths of two cameras with principal points at the origin."""
    G = _hz(F)
    with np.errstate(all="ignore"):
        f1_sq = _bougnoux_sq(G)
        f2_sq = _bougnoux_sq(G.T)
    if not (np.isfinite(f1_sq) and np.isfinite(f2_sq)) or f1_sq <= 0 or f2_sq <= 0:
        raise DegenerateFocal(f"invalid squared focals ({f1_sq:.3g}, {f2_sq:.3g})")
    return math.sqrt(f1_sq), math.sqrt(f2_sq)


def _essential_defect(G: np.ndarray, f: float) -> float:
    """Relative gap between the two nonzero singular values of ``K G K`` (0 = essential)."""
    K = np.diag([f, f, 1.0])
    sv = np.linalg.svd(K @ G @ K, compute_uv=False)
    return (sv[0] - sv[1]) / sv[0]


def focal_sturm_shared(F) -> float:
    """Shared focal length from F via Sturm's closed-form Kruppa equations.

    With ``G = U diag(a, b, 0) V^T`` and ``w = f^2`` the Kruppa ratios give two
    equations linear in ``w`` (after dividing out the trivial root ``w = 1``)
    and one quadratic. Every positive root is a candidate; the one that makes
    ``K G K`` closest to an essential matrix wins.
    """
    G = _hz(F)
    U, s, Vt = np.linalg.svd(G)
    a, b = s[0], s[1]
    u1, u2 = U[:, 0], U[:, 1]
    v1, v2 = Vt[0], Vt[1]

    def quad(x):  # x^T diag(w, w, 1) x == c1 w + c0 for unit x
        return np.array([1.0 - x[2] ** 2, x[2] ** 2])

    cands = []
    with np.errstate(all="ignore"):
        for c1, c0 in (
            b * v1[2] * v2[2] * quad(u2) + a * u1[2] * u2[2] * quad(v1),
            a * v1[2] * v2[2] * quad(u1) + b * u1[2] * u2[2] * quad(v2),
        ):
            cands.append(-c0 / c1)
        # first ratio == third ratio: b^2 (u2 w u2)(v2 w v2) - a^2 (u1 w u1)(v1 w v1) = 0
        q = b * b * np.convolve(quad(u2), quad(v2)) - a * a * np.convolve(quad(u1), quad(v1))
        if q[0] != 0.0:
            cands.extend(r.real for r in np.roots(q) if abs(r.imag) <= 1e-9 * max(1.0, abs(r)))
    cands = [w for w in cands if np.isfinite(w) and w > 0]
    if not cands:
        raise DegenerateFocal("no positive squared focal from the Kruppa equations")
    f = min((math.sqrt(w) for w in cands), key=lambda f: _essential_defect(G, f))
    return f


# -- pose ---------------------------------------------------------------------------


def essential_from_fundamental(F, f1: float, f2: float) -> np.ndarray:
    """``E`` with ``X2 = R X1 + t`` (``x2^T E x1 = 0`` on calibrated rays)."""
    K1 = np.diag([f1, f1, 1.0])
    K2 = np.diag([f2, f2, 1.0])
    return K2 @ _hz(F) @ K1


def pose_candidates(E: np.ndarray) -> list[RelativePose]:
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    t = U[:, 2]
    out = []
    for R in (U @ W @ Vt, U @ W.T @ Vt):
        out.append(RelativePose(R, t))
        out.append(RelativePose(R, -t))
    return out


def decompose_to_pose(F, f1: float, f2: float, corrs, d1=None, d2=None) -> RelativePose:
    """Pick the essential-matrix pose candidate with the most points in front of both cameras."""
    c = np.asarray(corrs, dtype=float).reshape(-1, 4)
    if c.shape[0] == 0:
        raise ValueError("decompose_to_pose needs at least one inlier")
    if not (f1 > 0 and f2 > 0):
        raise ValueError("focal lengths must be positive")
    cam1 = CameraModel(f1, d1 or DivisionModel())
    cam2 = CameraModel(f2, d2 or DivisionModel())
    best, best_key = None, None
    for pose in pose_candidates(essential_from_fundamental(F, f1, f2)):
        z1, z2 = midpoint_depths(c, pose, cam1, cam2)
        with np.errstate(invalid="ignore"):
            front = (z1 > 0) & (z2 > 0)
        margin = np.nansum(np.minimum(z1, z2)[front]) if front.any() else 0.0
        key = (int(front.sum()), margin)
        if best_key is None or key > best_key:
            best, best_key = pose, key
    if best_key[0] == 0:
        raise NoCheiralityWinner("no pose candidate puts any point in front of both cameras")
    return best
