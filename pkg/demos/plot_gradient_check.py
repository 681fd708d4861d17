"""
Checking gradients against finite differences
=============================================

Reverse-mode gradients come from the torch mirror of the renderer. The
reference is central differences on the numpy renderer, one coordinate at a
time.
"""

import numpy as np

from taylorgs.core import Camera, Gaussian4D, Scene
from taylorgs.optimizer import ParamVector, Sample, fd_gradient, gradient
from taylorgs.renderer import ImageBuffer

rng = np.random.default_rng(0)
gs = [Gaussian4D.static(rng.uniform(-0.5, 0.5, 3), rng.normal(size=4), rng.uniform(0.15, 0.3, 3),
                        rng.uniform(0, 1, 3), sigma_s=0.8) for _ in range(3)]
scene = Scene(gs)
cam = Camera(fx=10, fy=10, cx=4, cy=4, width=8, height=8, trans=[0, 0, 3])
sample = Sample(cam, 0.5, ImageBuffer(rng.uniform(0, 1, (8, 8, 3))))

pv = ParamVector.from_scene(scene)
a = gradient(scene, pv, sample).data
f = fd_gradient(scene, pv, sample).data
ok = np.abs(a - f) <= np.maximum(1e-3 * np.abs(f), 1e-6)
print(f"{ok.sum()} of {ok.size} coordinates agree")
for name in ("pos_coeffs", "color", "sigma_s"):
    start, stop, _ = pv.spans[name]
    print(name, np.abs(a[start:stop] - f[start:stop]).max())
