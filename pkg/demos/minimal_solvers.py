"""Pinhole and distortion-aware minimal solvers on a noise-free synthetic pair."""
import numpy as np

from radipose import RadiposeError, focal_sturm_shared, nine_point_F_lambda, seven_point_F, undistort
from radipose.bench import ScenarioSpec, generate_pair

spec = ScenarioSpec("C", True, 1, 50, noise_px=0.0, outlier_fraction=0.0)
c, gt, _, _ = generate_pair(spec, np.random.default_rng(3))
print(f"true lambda {gt.cam1.lam:.4f}, true focal {gt.cam1.focal:.4f}")

# the 9-point solver estimates the shared lambda from raw distorted points
for m in nine_point_F_lambda(c[:9]):
    print(f"9pt candidate lambda {m.cam1.lam:+.6f}")

# the 7-point solver needs points undistorted with a guessed lambda first
for guess in (0.0, gt.cam1.lam):
    u = np.hstack([undistort(c[:7, :2], guess), undistort(c[:7, 2:], guess)])
    focals = []
    for m in seven_point_F(u):
        try:
            focals.append(round(focal_sturm_shared(m.fundamental), 4))
        except RadiposeError:
            pass
    print(f"7pt with lambda {guess:+.3f}: shared focal candidates {focals}")
