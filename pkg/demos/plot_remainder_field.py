"""
Control points and the learned remainder
========================================

Control points are picked by farthest point sampling, every Gaussian is tied
to its 4 nearest ones, and a small network predicts a rigid offset per
control point. With the final layer at zero the remainder vanishes; with
random weights it bends the motion.
"""

import numpy as np

from taylorgs.core import Gaussian4D
from taylorgs.remainder_field import (
    ControlPointSet,
    DeformNet,
    build_neighbors,
    eval_remainder,
    farthest_point_sample,
)

rng = np.random.default_rng(0)
pts = rng.normal(size=(200, 3))

idx = farthest_point_sample(pts, 8)
print("control point indices:", idx)

controls = ControlPointSet.from_points(pts, 8)
nb = build_neighbors(pts, controls.positions, 4)
print("neighbors of Gaussian 0:", nb.indices[0], np.round(nb.distances[0], 3))

g = Gaussian4D.static(pts[0], [1, 0, 0, 0], [0.1] * 3, [1, 1, 1])
dp, dq = eval_remainder(g, 0.5, controls, nb, index=0)
print("zero-initialized remainder:", dp, dq)

# give the network random output weights to see a non-trivial correction
live = ControlPointSet(controls.positions, controls.radii, DeformNet.init(8, rng, zero_last=False))
for t in (0.0, 0.5, 1.0):
    dp, dq = eval_remainder(g, t, live, nb, index=0)
    print(f"t={t:.1f}  Δμ={np.round(dp, 4)}  Δq={np.round(dq, 4)}")
