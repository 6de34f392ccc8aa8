"""Forward and inverse division model on a grid of normalized points."""
import numpy as np

from radipose import ImageDims, distort, normalize, undistort

dims = ImageDims(1600, 1200)
px = np.array([[1000.0, 700.0], [1200.0, 600.0], [1590.0, 1190.0]])
p = normalize(px, dims)

for lam in (0.0, -0.3, -0.9, -1.5):
    d = distort(p, lam)
    back = undistort(d, lam)
    radial = np.linalg.norm(d, axis=1) / np.linalg.norm(p, axis=1)
    print(f"lambda {lam:+.1f}  radial ratio {np.round(radial, 4)}  round trip {np.abs(back - p).max():.1e}")
