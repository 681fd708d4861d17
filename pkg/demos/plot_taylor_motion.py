"""
Polynomial motion of a single Gaussian
======================================

A Gaussian's position is a cubic in (t - t_center) whose coefficients are
scaled derivatives. Here we build one from a known trajectory and check that
it is reproduced, then watch a temporal opacity pulse.
"""

import numpy as np

from taylorgs.core import Gaussian4D, TaylorCoeffs
from taylorgs.taylor_field import eval_taylor

# f(t) = (t, t², t³) about t_c = 0.5: derivatives at t_c are
# f = (0.5, 0.25, 0.125), f' = (1, 1, 0.75), f'' = (0, 2, 3), f''' = (0, 0, 6)
derivs = np.array([[0.5, 0.25, 0.125], [1, 1, 0.75], [0, 2, 3], [0, 0, 6]])
g = Gaussian4D(
    TaylorCoeffs.from_derivatives(derivs),
    TaylorCoeffs.constant([0.1, 0.1, 0.1], 2),
    TaylorCoeffs.constant([1, 0, 0, 0], 1),
    color=[1, 0.5, 0.2],
    sigma_s=0.9,
    mu_tau=0.3,
    s_tau=10.0,
)

for t in np.linspace(0, 1, 5):
    e = eval_taylor(g, t)
    print(f"t={t:.2f}  pos={np.round(e.position, 4)}  exact={np.round([t, t**2, t**3], 4)}  "
          f"opacity={e.temporal_opacity:.3f}")
