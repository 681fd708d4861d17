"""Synthetic dynamic scenes with closed-form ground truth.

Each generator returns the exact per-time Gaussian state, the frames rendered
from it, and a deliberately imperfect initial scene (noisy canonical
attributes, no motion, identity remainder) for the optimizer to start from.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .core import Camera, Gaussian4D, Scene, quat_from_axis_angle, quat_mul, quat_normalize
from .optimizer import Sample
from .remainder_field import ControlPointSet, SceneState, build_neighbors, default_gp_count
from .renderer import ImageBuffer, render_state

GENERATORS = ("static_blobs", "linear_flight", "rigid_spin", "articulated_pair", "fade_in_out")


@dataclass
class SyntheticSpec:
    generator: str = "linear_flight"
    n_gaussians: int = 16
    motion: float = 1.0
    n_cameras: int = 4
    ring_radius: float = 4.0
    ring_height: float = 1.0
    n_frames: int = 20
    width: int = 64
    height: int = 64
    seed: int = 0
    init_noise: float = 0.03
    pos_order: int = 3
    scale_order: int = 2
    rot_order: int = 1
    n_controls: int | None = None
    k_neighbors: int = 4

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}; choose from {GENERATORS}")
        if self.n_frames < 1 or self.n_cameras < 1 or self.n_gaussians < 1:
            raise ValueError("frame, camera and Gaussian counts must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticData:
    spec: SyntheticSpec
    cameras: list
    times: np.ndarray
    truth: callable  # t -> SceneState
    init_scene: Scene
    params: dict = field(default_factory=dict)  # closed-form trajectory parameters
    _frames: dict = field(default_factory=dict, repr=False)

    def frame(self, fi: int, ci: int) -> ImageBuffer:
        key = (fi, ci)
        if key not in self._frames:
            self._frames[key] = render_state(self.truth(float(self.times[fi])), self.cameras[ci],
                                             self.init_scene.background)
        return self._frames[key]

    def samples(self, cameras=None, frames=None) -> list:
        cams = range(len(self.cameras)) if cameras is None else cameras
        fis = range(len(self.times)) if frames is None else frames
        return [
            Sample(self.cameras[ci], float(self.times[fi]), self.frame(fi, ci), f"t{fi:03d}_cam{ci:02d}")
            for fi in fis
            for ci in cams
        ]

    def truth_record(self) -> dict:
        frames = []
        for fi, t in enumerate(self.times):
            s = self.truth(float(t))
            frames.append({
                "index": fi,
                "t": float(t),
                "means": s.means.tolist(),
                "rotations": s.rots.tolist(),
                "scales": s.scales.tolist(),
                "opacities": s.opacities.tolist(),
            })
        return {"generator": self.spec.generator, "parameters": _jsonable(self.params), "frames": frames}


def _jsonable(d):
    if isinstance(d, dict):
        return {k: _jsonable(v) for k, v in d.items()}
    if isinstance(d, np.ndarray):
        return d.tolist()
    if isinstance(d, (np.floating, np.integer)):
        return d.item()
    return d


def camera_ring(n: int, radius: float, height: float, width: int, img_height: int) -> list:
    f = 0.95 * width
    cams = []
    for i in range(n):
        a = 2.0 * np.pi * i / n
        eye = [radius * np.sin(a), height, -radius * np.cos(a)]
        cams.append(Camera.look_at(eye, [0, 0, 0], [0, 1, 0], fx=f, fy=f, width=width, height=img_height))
    return cams


def _random_rots(rng, n):
    return quat_normalize(rng.normal(size=(n, 4)))


def _blobs(rng, n, radius=0.7, smin=0.07, smax=0.18):
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pos = dirs * radius * rng.uniform(0.2, 1.0, size=(n, 1)) ** (1 / 3)
    return {
        "pos": pos,
        "rot": _random_rots(rng, n),
        "scale": rng.uniform(smin, smax, size=(n, 3)),
        "color": rng.uniform(0.15, 1.0, size=(n, 3)),
        "opacity": rng.uniform(0.8, 0.95, size=n),
    }


def _rotate_about(points, center, q):
    from .core import quat_to_rotmat

    return (points - center) @ quat_to_rotmat(q).T + center


def _static(base):
    def truth(t):
        return SceneState(base["pos"], base["rot"], base["scale"], base["color"], base["opacity"])

    return truth


def _linear(base, vel):
    def truth(t):
        return SceneState(base["pos"] + vel * (t - 0.5), base["rot"], base["scale"], base["color"], base["opacity"])

    return truth


def _spin(base, axis, amplitude):
    def truth(t):
        q = quat_from_axis_angle(axis, amplitude * (t - 0.5))
        pos = _rotate_about(base["pos"], np.zeros(3), q)
        return SceneState(pos, quat_mul(q, base["rot"]), base["scale"], base["color"], base["opacity"])

    return truth


def _fade(base, mu_t, s_t):
    def truth(t):
        op = base["opacity"] * np.exp(-s_t * (t - mu_t) ** 2)
        return SceneState(base["pos"], base["rot"], base["scale"], base["color"], op)

    return truth


def _articulated(base, n_arm, hinge, axis, amp, freq, spin_rate, pulse):
    """Static body + arm swinging about a hinge; body blobs spin in place and pulse in size."""
    n = len(base["pos"])
    arm = np.arange(n) >= n - n_arm
    body = ~arm

    def truth(t):
        theta = amp * np.sin(freq * np.pi * (t - 0.5))
        q = quat_from_axis_angle(axis, theta)
        pos = base["pos"].copy()
        rot = base["rot"].copy()
        scale = base["scale"].copy()
        pos[arm] = _rotate_about(base["pos"][arm], hinge, q)
        rot[arm] = quat_mul(q, base["rot"][arm])
        spin = np.stack([quat_from_axis_angle(a, spin_rate * (t - 0.5)) for a in base["spin_axis"][body]])
        rot[body] = quat_mul(spin, base["rot"][body])
        scale[body] = base["scale"][body] * (1.0 + pulse * (t - 0.5))
        op = base["opacity"] * np.exp(-base["s_tau"] * (t - base["mu_tau"]) ** 2)
        return SceneState(pos, rot, scale, base["color"], op)

    return truth


def generate(spec: SyntheticSpec) -> SyntheticData:
    rng = np.random.default_rng(spec.seed)
    n = spec.n_gaussians
    m = spec.motion
    params: dict = {}
    if spec.generator == "static_blobs":
        base = _blobs(rng, n)
        truth = _static(base)
    elif spec.generator == "linear_flight":
        base = _blobs(rng, n)
        dirs = rng.normal(size=(n, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        vel = 0.4 * m * dirs * rng.uniform(0.5, 1.0, size=(n, 1))
        params["velocity"] = vel
        truth = _linear(base, vel)
    elif spec.generator == "rigid_spin":
        base = _blobs(rng, n)
        axis = np.array([0.0, 1.0, 0.0])
        amp = 0.5 * np.pi * m
        params.update(axis=axis, angle_per_unit_time=amp, center=np.zeros(3))
        truth = _spin(base, axis, amp)
    elif spec.generator == "fade_in_out":
        base = _blobs(rng, n)
        mu_t = rng.uniform(0.0, 1.0, size=n)
        s_t = rng.uniform(5.0, 20.0, size=n) * m
        params.update(mu_tau=mu_t, s_tau=s_t)
        truth = _fade(base, mu_t, s_t)
    else:  # articulated_pair
        n_arm = max(1, n // 2)
        n_body = n - n_arm
        body = _blobs(rng, n_body, radius=0.45, smin=0.05, smax=0.12)
        body["pos"] += np.array([-0.35, 0.0, 0.0])
        body["scale"][:, 0] *= 2.5  # elongated so in-place spin is visible
        arm = _blobs(rng, n_arm, radius=0.2, smin=0.05, smax=0.1)
        arm["pos"] = np.stack([np.linspace(0.15, 0.9, n_arm), rng.normal(0, 0.06, n_arm), rng.normal(0, 0.06, n_arm)], 1)
        base = {k: np.concatenate([body[k], arm[k]]) for k in body}
        hinge = np.array([0.05, 0.0, 0.0])
        axis = np.array([0.0, 0.0, 1.0])
        spin_axis = rng.normal(size=(n, 3))
        base["spin_axis"] = spin_axis / np.linalg.norm(spin_axis, axis=1, keepdims=True)
        mu_tau = np.full(n, 0.5)
        s_tau = np.zeros(n)
        fading = rng.choice(n_body, size=max(1, n_body // 3), replace=False)
        mu_tau[fading] = rng.uniform(0.2, 0.8, size=len(fading))
        s_tau[fading] = 12.0
        base["mu_tau"], base["s_tau"] = mu_tau, s_tau
        amp, freq, spin_rate = 0.6 * m, 3.0, 1.5 * m
        pulse = rng.uniform(-0.8, 0.8, size=n_body) * m
        params.update(hinge=hinge, axis=axis, swing_amplitude=amp, swing_frequency=freq,
                      spin_rate=spin_rate, spin_axes=base["spin_axis"], scale_pulse=pulse,
                      mu_tau=mu_tau, s_tau=s_tau, arm_indices=np.arange(n_body, n))
        truth = _articulated(base, n_arm, hinge, axis, amp, freq, spin_rate, pulse[:, None])
    params.update(canonical_positions=base["pos"], canonical_rotations=base["rot"],
                  canonical_scales=base["scale"], colors=base["color"], opacities=base["opacity"])
    n_cams = 1 if spec.generator == "static_blobs" and spec.n_cameras == 1 else spec.n_cameras
    cams = camera_ring(n_cams, spec.ring_radius, spec.ring_height, spec.width, spec.height)
    times = np.linspace(0.0, 1.0, spec.n_frames) if spec.n_frames > 1 else np.zeros(1)
    init = initial_scene(truth(0.5), spec, rng)
    return SyntheticData(spec, cams, times, truth, init, params)


def initial_scene(state: SceneState, spec: SyntheticSpec, rng: np.random.Generator) -> Scene:
    """Perturbed canonical state with no motion: the starting point for fitting."""
    n = len(state.means)
    noise = spec.init_noise
    pos = state.means + rng.normal(0.0, noise, size=(n, 3))
    scale = state.scales * np.exp(rng.normal(0.0, 0.15, size=(n, 3)))
    rot = quat_normalize(state.rots + rng.normal(0.0, 0.1, size=(n, 4)))
    color = np.clip(0.5 * state.colors + 0.25 + rng.normal(0.0, 0.05, size=(n, 3)), 0.0, 1.0)
    gs = [
        Gaussian4D.static(pos[i], rot[i], scale[i], color[i], sigma_s=0.7,
                          pos_order=spec.pos_order, scale_order=spec.scale_order, rot_order=spec.rot_order)
        for i in range(n)
    ]
    n_gp = spec.n_controls or default_gp_count(n)
    controls = ControlPointSet.from_points(pos, n_gp, seed_index=0, rng=rng)
    nb = build_neighbors(pos, controls.positions, min(spec.k_neighbors, controls.count))
    return Scene(gs, controls, nb)
