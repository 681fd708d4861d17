import numpy as np
import pytest
from hypothesis import settings

from taylorgs.core import Camera, Gaussian4D, Scene, TaylorCoeffs, quat_normalize
from taylorgs.remainder_field import ControlPointSet, DeformNet, build_neighbors

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_scene(rng, n_gaussians=5, n_controls=2, zero_net=False, k=None):
    """Small scene with non-trivial motion in every Taylor bank and a live remainder net."""
    gs = []
    for _ in range(n_gaussians):
        pos = np.zeros((4, 3))
        pos[0] = rng.uniform(-0.5, 0.5, 3)
        pos[1:] = rng.normal(0, 0.2, (3, 3))
        sc = np.zeros((3, 3))
        sc[0] = rng.uniform(0.15, 0.35, 3)
        sc[1:] = rng.normal(0, 0.05, (2, 3))
        rot = np.zeros((2, 4))
        rot[0] = quat_normalize(rng.normal(size=4))
        rot[1] = rng.normal(0, 0.3, 4)
        gs.append(Gaussian4D(TaylorCoeffs(pos), TaylorCoeffs(sc), TaylorCoeffs(rot), rng.uniform(0, 1, 3),
                             sigma_s=rng.uniform(0.5, 0.95), mu_tau=rng.uniform(0.2, 0.8),
                             s_tau=rng.uniform(0, 3), t_center=rng.uniform(0.3, 0.7)))
    pts = np.stack([g.mu for g in gs])
    c = ControlPointSet.from_points(pts, n_controls)
    net = DeformNet.zeros(n_controls) if zero_net else DeformNet.init(n_controls, rng, zero_last=False)
    c = ControlPointSet(c.positions, c.radii, net, 0)
    nb = build_neighbors(pts, c.positions, k or n_controls)
    return Scene(gs, c, nb)


def small_camera(size=8, f=10.0, dist=3.0):
    return Camera(fx=f, fy=f, cx=size / 2, cy=size / 2, width=size, height=size, trans=[0, 0, dist])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
