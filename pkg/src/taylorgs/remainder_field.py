"""Learned remainder of the motion model.

A sparse set of control points (picked by farthest point sampling) carries a
per-point rigid offset predicted by a small time-conditioned network. Those
offsets are blended onto every renderable Gaussian with Gaussian-kernel skinning
weights, giving a position correction and a rotation factor that compose with
the polynomial part.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Gaussian4D, Scene, quat_mul, quat_to_rotmat
from .taylor_field import (
    TaylorEval,
    eval_position,
    eval_rotation,
    eval_scale,
    eval_taylor,
    eval_temporal_opacity,
)

log = logging.getLogger(__name__)

N_FREQS = 6
EMBED_DIM = 16
HIDDEN = 64
OUT_DIM = 7  # raw quaternion delta (4) + translation (3)
NET_LAYOUT = ("embed", "w1", "b1", "w2", "b2", "w3", "b3")


def default_gp_count(n_points: int) -> int:
    return min(n_points, max(8, math.ceil(0.02 * n_points)))


def farthest_point_sample(points, n: int, seed_index: int = 0) -> np.ndarray:
    """Greedy farthest point sampling; ties go to the lowest index."""
    pts = np.asarray(points, dtype=np.float64)
    if not 1 <= n <= len(pts):
        raise ValueError(f"cannot sample {n} of {len(pts)} points")
    selected = np.empty(n, dtype=np.int64)
    selected[0] = seed_index
    min_d = np.sum((pts - pts[seed_index]) ** 2, axis=1)
    min_d[seed_index] = -np.inf
    for k in range(1, n):
        j = int(np.argmax(min_d))
        selected[k] = j
        min_d = np.minimum(min_d, np.sum((pts - pts[j]) ** 2, axis=1))
        min_d[selected[: k + 1]] = -np.inf
    return selected


@dataclass(frozen=True)
class NeighborTable:
    """K nearest control points per Gaussian, frozen in canonical space."""

    indices: np.ndarray  # (L, K) int
    distances: np.ndarray  # (L, K), ascending per row

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    def row(self, i: int) -> "NeighborTable":
        return NeighborTable(self.indices[i : i + 1], self.distances[i : i + 1])


def build_neighbors(lps, gps, k: int) -> NeighborTable:
    lps = np.asarray(lps, dtype=np.float64).reshape(-1, 3)
    gps = np.asarray(gps, dtype=np.float64).reshape(-1, 3)
    if len(gps) == 0:
        raise ValueError("no control points")
    if not 1 <= k <= len(gps):
        raise ValueError(f"k={k} must be in [1, {len(gps)}]")
    d = np.sqrt(np.sum((lps[:, None, :] - gps[None, :, :]) ** 2, axis=-1))
    order = np.argsort(d, axis=1, kind="stable")[:, :k]
    return NeighborTable(order, np.take_along_axis(d, order, axis=1))


def lbs_weights(distances, radii) -> np.ndarray:
    """Normalized Gaussian-kernel weights exp(-d²/(2r²)) over the last axis."""
    d = np.asarray(distances, dtype=np.float64)
    r = np.asarray(radii, dtype=np.float64)
    if np.any(r <= 0):
        raise ValueError("radii must be positive")
    w = np.exp(-(d * d) / (2.0 * r * r))
    total = w.sum(axis=-1, keepdims=True)
    dead = total < 1e-30
    if np.any(dead):
        log.warning("skinning weights underflowed for %d rows; using uniform weights", int(dead.sum()))
        w = np.where(dead, 1.0, w)
        total = w.sum(axis=-1, keepdims=True)
    return w / total


def time_encoding(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)[..., None]
    f = (2.0 ** np.arange(N_FREQS)) * np.pi
    return np.concatenate([np.sin(f * t), np.cos(f * t)], axis=-1)


@dataclass(frozen=True)
class DeformNet:
    """Per-control-point offset MLP: [time encoding, point embedding] -> (dq, dd).

    The rotation output is added to the identity quaternion before
    normalization, so a zero final layer yields the identity transform.
    """

    params: dict = field(repr=False)

    @property
    def count(self) -> int:
        return self.params["embed"].shape[0]

    @classmethod
    def init(cls, count: int, rng: np.random.Generator, zero_last: bool = True) -> "DeformNet":
        d_in = 2 * N_FREQS + EMBED_DIM

        def glorot(a, b):
            return rng.normal(0.0, math.sqrt(2.0 / (a + b)), size=(a, b))

        p = {
            "embed": rng.normal(0.0, 1.0, size=(count, EMBED_DIM)),
            "w1": glorot(d_in, HIDDEN),
            "b1": np.zeros(HIDDEN),
            "w2": glorot(HIDDEN, HIDDEN),
            "b2": np.zeros(HIDDEN),
            "w3": np.zeros((HIDDEN, OUT_DIM)) if zero_last else glorot(HIDDEN, OUT_DIM),
            "b3": np.zeros(OUT_DIM),
        }
        return cls(p)

    @classmethod
    def zeros(cls, count: int) -> "DeformNet":
        return cls.init(count, np.random.default_rng(0)).with_flat(np.zeros(cls.flat_size(count)))

    @staticmethod
    def shapes(count: int) -> dict:
        d_in = 2 * N_FREQS + EMBED_DIM
        return {
            "embed": (count, EMBED_DIM),
            "w1": (d_in, HIDDEN),
            "b1": (HIDDEN,),
            "w2": (HIDDEN, HIDDEN),
            "b2": (HIDDEN,),
            "w3": (HIDDEN, OUT_DIM),
            "b3": (OUT_DIM,),
        }

    @classmethod
    def flat_size(cls, count: int) -> int:
        return sum(int(np.prod(s)) for s in cls.shapes(count).values())

    def flat(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.params[k], dtype=np.float64).ravel() for k in NET_LAYOUT])

    def with_flat(self, flat) -> "DeformNet":
        flat = np.asarray(flat, dtype=np.float64)
        out, i = {}, 0
        for name, shape in self.shapes(self.count).items():
            n = int(np.prod(shape))
            out[name] = flat[i : i + n].reshape(shape).copy()
            i += n
        if i != flat.size:
            raise ValueError("flat weight vector has the wrong length")
        return DeformNet(out)

    def forward(self, t: float) -> np.ndarray:
        p = self.params
        enc = np.broadcast_to(time_encoding(t), (self.count, 2 * N_FREQS))
        x = np.concatenate([enc, p["embed"]], axis=1)
        h = np.tanh(x @ p["w1"] + p["b1"])
        h = np.tanh(h @ p["w2"] + p["b2"])
        return h @ p["w3"] + p["b3"]


@dataclass(frozen=True)
class ControlPointSet:
    positions: np.ndarray  # (N, 3) canonical control point positions
    radii: np.ndarray  # (N,)
    net: DeformNet
    seed_index: int = 0

    def __post_init__(self):
        if len(self.positions) != len(self.radii) or len(self.radii) != self.net.count:
            raise ValueError("positions, radii and network disagree on the control point count")
        if np.any(np.asarray(self.radii) <= 0):
            raise ValueError("radii must be positive")

    @property
    def count(self) -> int:
        return len(self.radii)

    @classmethod
    def from_points(cls, points, n: int | None = None, *, seed_index: int = 0,
                    rng: np.random.Generator | None = None) -> "ControlPointSet":
        points = np.asarray(points, dtype=np.float64)
        n = default_gp_count(len(points)) if n is None else n
        idx = farthest_point_sample(points, n, seed_index)
        pos = points[idx].copy()
        if n > 1:
            d = np.sqrt(np.sum((pos[:, None] - pos[None]) ** 2, axis=-1))
            np.fill_diagonal(d, np.inf)
            radii = np.maximum(d.min(axis=1), 1e-3)
        else:
            radii = np.ones(1)
        rng = np.random.default_rng(0) if rng is None else rng
        return cls(pos, radii, DeformNet.init(n, rng), seed_index)


def gp_offsets(net: DeformNet, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Unit rotation (N, 4) and translation (N, 3) of every control point at time t."""
    out = net.forward(t)
    q = out[:, :4] + np.array([1.0, 0.0, 0.0, 0.0])
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    return q, out[:, 4:]


def warp_position(mu, neighbor_idx, weights, gp_pos, offsets) -> np.ndarray:
    """Σ_j w_j (R_j (μ - p_j) + p_j + Δd_j); broadcasts over leading axes of ``mu``."""
    rots, trans = offsets
    mu = np.asarray(mu, dtype=np.float64)
    idx = np.asarray(neighbor_idx)
    p = np.asarray(gp_pos, dtype=np.float64)[idx]  # (..., K, 3)
    R = quat_to_rotmat(np.asarray(rots)[idx])  # (..., K, 3, 3)
    local = np.einsum("...kij,...kj->...ki", R, mu[..., None, :] - p)
    moved = local + p + np.asarray(trans, dtype=np.float64)[idx]
    return np.einsum("...k,...ki->...i", np.asarray(weights, dtype=np.float64), moved)


def remainder_displacement(mu, neighbor_idx, weights, gp_pos, offsets) -> np.ndarray:
    """``warp_position(...) - mu`` written as Σ_j w_j ((R_j - I)(μ - p_j) + Δd_j).

    Equal to the difference for normalized weights, and exactly zero for
    identity offsets instead of rounding noise from ``(μ - p) + p``.
    """
    rots, trans = offsets
    mu = np.asarray(mu, dtype=np.float64)
    idx = np.asarray(neighbor_idx)
    rel = mu[..., None, :] - np.asarray(gp_pos, dtype=np.float64)[idx]
    R = quat_to_rotmat(np.asarray(rots)[idx])
    moved = np.einsum("...kij,...kj->...ki", R, rel) - rel + np.asarray(trans, dtype=np.float64)[idx]
    return np.einsum("...k,...ki->...i", np.asarray(weights, dtype=np.float64), moved)


def blend_rotation(weights, rots_k) -> np.ndarray:
    """normalize(Σ_j w_j r_j) over the neighbor axis."""
    b = np.einsum("...k,...ki->...i", np.asarray(weights, dtype=np.float64), rots_k)
    n = np.linalg.norm(b, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ValueError("blended quaternion vanished (antipodal neighbors)")
    return b / n


def warp_rotation(q, weights, offsets, neighbor_idx=None) -> np.ndarray:
    """normalize(normalize(Σ w_j r_j) ⊗ q).

    ``offsets`` rotations are taken in neighbor order unless ``neighbor_idx``
    selects them from the full control point list.
    """
    rots = np.asarray(offsets[0], dtype=np.float64)
    if neighbor_idx is not None:
        rots = rots[np.asarray(neighbor_idx)]
    out = quat_mul(blend_rotation(weights, rots), q)
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def _row(neighbors: NeighborTable, index):
    if index is None:
        if neighbors.indices.shape[0] != 1:
            raise ValueError("pass index= when giving a full neighbor table")
        index = 0
    return neighbors.indices[index], neighbors.distances[index]


def eval_remainder(g: Gaussian4D, t: float, controls: ControlPointSet, neighbors: NeighborTable,
                   index: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Position correction and rotation factor contributed by the control points."""
    idx, dist = _row(neighbors, index)
    w = lbs_weights(dist, controls.radii[idx])
    offsets = gp_offsets(controls.net, t)
    dp = remainder_displacement(g.mu, idx, w, controls.positions, offsets)
    return dp, blend_rotation(w, offsets[0][idx])


def eval_full_transform(g: Gaussian4D, t: float, controls: ControlPointSet | None,
                        neighbors: NeighborTable | None, index: int | None = None) -> TaylorEval:
    base = eval_taylor(g, t)
    if controls is None:
        return base
    dp, dq = eval_remainder(g, t, controls, neighbors, index)
    rot = quat_mul(dq, base.rotation)
    return TaylorEval(
        position=base.position + dp,
        scale=base.scale,
        rotation=rot / np.linalg.norm(rot),
        temporal_opacity=base.temporal_opacity,
    )


@dataclass(frozen=True)
class SceneState:
    """All Gaussians of a scene evaluated at one time, stacked into arrays."""

    means: np.ndarray
    rots: np.ndarray
    scales: np.ndarray
    colors: np.ndarray
    opacities: np.ndarray


def stack_gaussians(gaussians) -> dict:
    return {
        "pos": np.stack([g.pos_coeffs.coeffs for g in gaussians]),
        "scale": np.stack([g.scale_coeffs.coeffs for g in gaussians]),
        "rot": np.stack([g.rot_coeffs.coeffs for g in gaussians]),
        "color": np.stack([g.color for g in gaussians]),
        "sigma_s": np.array([g.sigma_s for g in gaussians], dtype=np.float64),
        "mu_tau": np.array([g.mu_tau for g in gaussians], dtype=np.float64),
        "s_tau": np.array([g.s_tau for g in gaussians], dtype=np.float64),
        "t_center": np.array([g.t_center for g in gaussians], dtype=np.float64),
    }


def transform_scene(scene: Scene, t: float) -> SceneState:
    """Vectorized :func:`eval_full_transform` over every Gaussian of ``scene``."""
    if not scene.gaussians:
        z = np.zeros((0, 3))
        return SceneState(z, np.zeros((0, 4)), z, z, np.zeros(0))
    return transform_arrays(stack_gaussians(scene.gaussians), t, scene.controls, scene.neighbors)


def transform_arrays(a: dict, t: float, controls: ControlPointSet | None,
                     neighbors: NeighborTable | None) -> SceneState:
    """Same as :func:`transform_scene` on stacked attribute arrays (no validation)."""
    means = eval_position(a["pos"], t, a["t_center"])
    scales = eval_scale(a["scale"], t, a["t_center"])
    rots = eval_rotation(a["rot"], t, a["t_center"])
    opac = eval_temporal_opacity(a["sigma_s"], a["s_tau"], a["mu_tau"], t)
    if controls is not None:
        nb, c = neighbors, controls
        w = lbs_weights(nb.distances, c.radii[nb.indices])
        offsets = gp_offsets(c.net, t)
        means = means + remainder_displacement(a["pos"][:, 0, :], nb.indices, w, c.positions, offsets)
        rots = quat_mul(blend_rotation(w, offsets[0][nb.indices]), rots)
        rots = rots / np.linalg.norm(rots, axis=-1, keepdims=True)
    return SceneState(means, rots, scales, a["color"], opac)
