"""Deterministic CPU tile rasterizer.

Gaussians are projected with the EWA affine approximation, binned into 16x16
tiles by the bounding box of their 3-sigma ellipse, sorted front to back by
camera depth (stable, so ties keep Gaussian index order) and alpha-composited
per pixel. Pixel ``(u, v)`` sits at integer image coordinates.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Camera, Scene, build_covariance
from .remainder_field import SceneState, transform_scene

TILE = 16
NEAR = 0.01
DILATION = 0.3
ALPHA_MAX = 0.999
T_MIN = 1e-4
EXTENT_SIGMA = 3.0


@dataclass(frozen=True)
class Splat2D:
    mu_img: np.ndarray
    cov_img: np.ndarray
    depth: float
    color: np.ndarray
    alpha_base: float


@dataclass
class ImageBuffer:
    """H x W RGB image, float64 in [0, 1], row-major."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixels, got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("image contains non-finite values")
        self.pixels = p

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def filled(cls, width: int, height: int, color) -> "ImageBuffer":
        return cls(np.broadcast_to(np.asarray(color, dtype=np.float64), (height, width, 3)).copy())

    def to_bytes(self) -> np.ndarray:
        # clamp, then round half away from zero (values are non-negative)
        return np.floor(np.clip(self.pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)

    def save(self, path) -> None:
        path = Path(path)
        if path.suffix.lower() == ".png":
            from PIL import Image

            Image.fromarray(self.to_bytes(), "RGB").save(path)
            return
        header = f"P6\n{self.width} {self.height}\n255\n".encode("ascii")
        path.write_bytes(header + self.to_bytes().tobytes())

    @classmethod
    def load(cls, path) -> "ImageBuffer":
        path = Path(path)
        if path.suffix.lower() == ".png":
            from PIL import Image

            arr = np.asarray(Image.open(path).convert("RGB"))
            return cls(arr.astype(np.float64) / 255.0)
        return cls(read_ppm(path.read_bytes()).astype(np.float64) / 255.0)


def read_ppm(data: bytes) -> np.ndarray:
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError("only 8-bit binary PPM (P6) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    raw = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos + 1)
    return raw.reshape(h, w, 3)


def _project_arrays(means, covs, cam: Camera):
    """Vectorized projection. Returns (mu_img, cov_img, depth, valid)."""
    W = cam.R
    pc = means @ W.T + cam.trans
    z = pc[:, 2]
    valid = z > NEAR
    zs = np.where(valid, z, 1.0)
    x, y = pc[:, 0], pc[:, 1]
    mu_img = np.stack([cam.fx * x / zs + cam.cx, cam.fy * y / zs + cam.cy], axis=1)
    J = np.zeros((len(z), 2, 3))
    J[:, 0, 0] = cam.fx / zs
    J[:, 0, 2] = -cam.fx * x / (zs * zs)
    J[:, 1, 1] = cam.fy / zs
    J[:, 1, 2] = -cam.fy * y / (zs * zs)
    T = J @ W
    cov_img = T @ covs @ np.swapaxes(T, 1, 2)
    cov_img = 0.5 * (cov_img + np.swapaxes(cov_img, 1, 2))
    cov_img[:, 0, 0] += DILATION
    cov_img[:, 1, 1] += DILATION
    return mu_img, cov_img, z, valid


def project_gaussian(mu_w, cov_w, cam: Camera, color=(1.0, 1.0, 1.0), alpha_base: float = 1.0):
    """Project one 3D Gaussian; returns ``None`` when it is behind the near plane."""
    mu, cov, z, valid = _project_arrays(
        np.asarray(mu_w, dtype=np.float64)[None], np.asarray(cov_w, dtype=np.float64)[None], cam
    )
    if not valid[0]:
        return None
    return Splat2D(mu[0], cov[0], float(z[0]), np.asarray(color, dtype=np.float64), float(alpha_base))


def splat_alpha(splat: Splat2D, pixel) -> float:
    d = np.asarray(pixel, dtype=np.float64) - splat.mu_img
    power = -0.5 * d @ np.linalg.solve(splat.cov_img, d)
    return min(splat.alpha_base * np.exp(power), ALPHA_MAX)


def composite_pixel(splats_sorted, background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Front-to-back blending of ``(color, alpha)`` pairs.

    Stops before the next splat once transmittance falls below ``T_MIN``; the
    remaining transmittance lets the background through.
    """
    out = np.zeros(3)
    T = 1.0
    for color, alpha in splats_sorted:
        if T < T_MIN:
            break
        a = min(float(alpha), ALPHA_MAX)
        out += np.asarray(color, dtype=np.float64) * (a * T)
        T *= 1.0 - a
    return out + T * np.asarray(background, dtype=np.float64)


@dataclass(frozen=True)
class _Projected:
    order: np.ndarray  # Gaussian indices, front to back
    mu: np.ndarray
    conic: np.ndarray  # (n, 3): inverse covariance entries xx, xy, yy
    colors: np.ndarray
    opac: np.ndarray
    tile_lo: np.ndarray  # (n, 2) inclusive tile x/y ranges
    tile_hi: np.ndarray


def _prepare(state: SceneState, cam: Camera) -> _Projected:
    covs = build_covariance(state.rots, state.scales)
    mu, cov, z, valid = _project_arrays(state.means, covs, cam)
    det = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] ** 2
    conic = np.stack([cov[:, 1, 1] / det, -cov[:, 0, 1] / det, cov[:, 0, 0] / det], axis=1)
    ext = EXTENT_SIGMA * np.sqrt(np.stack([cov[:, 0, 0], cov[:, 1, 1]], axis=1))
    lo = np.floor((mu - ext) / TILE).astype(np.int64)
    hi = np.floor((mu + ext) / TILE).astype(np.int64)
    nt = np.array([(cam.width + TILE - 1) // TILE, (cam.height + TILE - 1) // TILE])
    onscreen = valid & np.all(hi >= 0, axis=1) & np.all(lo < nt, axis=1)
    lo, hi = np.clip(lo, 0, nt - 1), np.clip(hi, 0, nt - 1)
    order = np.argsort(z, kind="stable")
    order = order[onscreen[order]]
    return _Projected(order, mu, conic, state.colors, state.opacities, lo, hi)


def _render_tile(p: _Projected, tx: int, ty: int, cam: Camera, bg: np.ndarray) -> np.ndarray:
    x0, y0 = tx * TILE, ty * TILE
    xs = np.arange(x0, min(x0 + TILE, cam.width), dtype=np.float64)
    ys = np.arange(y0, min(y0 + TILE, cam.height), dtype=np.float64)
    px, py = np.meshgrid(xs, ys)
    px, py = px.ravel(), py.ravel()
    o = p.order
    hit = (p.tile_lo[o, 0] <= tx) & (tx <= p.tile_hi[o, 0]) & (p.tile_lo[o, 1] <= ty) & (ty <= p.tile_hi[o, 1])
    color = np.zeros((px.size, 3))
    T = np.ones(px.size)
    for g in o[hit]:
        live = T >= T_MIN
        if not live.any():
            break
        dx, dy = px - p.mu[g, 0], py - p.mu[g, 1]
        cxx, cxy, cyy = p.conic[g]
        power = -0.5 * (cxx * dx * dx + 2.0 * cxy * dx * dy + cyy * dy * dy)
        a = np.minimum(p.opac[g] * np.exp(power), ALPHA_MAX)
        a = np.where(live, a, 0.0)
        color += (a * T)[:, None] * p.colors[g]
        T = T * (1.0 - a)
    color += T[:, None] * bg
    return color.reshape(len(ys), len(xs), 3)


def render_state(state: SceneState, cam: Camera, background=(0.0, 0.0, 0.0), threads: int = 1) -> ImageBuffer:
    """Rasterize already-evaluated Gaussians."""
    bg = np.asarray(background, dtype=np.float64)
    img = np.empty((cam.height, cam.width, 3))
    if len(state.means) == 0:
        img[:] = bg
        return ImageBuffer(img)
    p = _prepare(state, cam)
    tiles = [(tx, ty) for ty in range((cam.height + TILE - 1) // TILE) for tx in range((cam.width + TILE - 1) // TILE)]

    def work(tile):
        tx, ty = tile
        img[ty * TILE : (ty + 1) * TILE, tx * TILE : (tx + 1) * TILE] = _render_tile(p, tx, ty, cam, bg)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(work, tiles))
    else:
        for tile in tiles:
            work(tile)
    return ImageBuffer(img)


def render(scene: Scene, cam: Camera, t: float, threads: int = 1) -> ImageBuffer:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"normalized time {t} outside [0, 1]")
    return render_state(transform_scene(scene, t), cam, scene.background, threads)
