"""Differentiable mirror of the motion model and rasterizer in torch (float64).

The discrete decisions of the rasterizer (culling, tile coverage, depth order)
are taken with the numpy code on detached values, so both paths composite the
same splats in the same order. Compositing is dense over pixels with the tile
coverage as a mask, which makes reverse-mode gradients come from autograd.
"""
from __future__ import annotations

import math

import numpy as np
import torch

from .core import Camera
from .metrics import C1, C2, SSIM_WINDOW, gaussian_window
from .remainder_field import N_FREQS, SceneState
from .renderer import ALPHA_MAX, DILATION, NEAR, T_MIN, TILE, _prepare

DTYPE = torch.float64


def horner(coeffs: torch.Tensor, dt: torch.Tensor) -> torch.Tensor:
    dt = dt[..., None]
    acc = coeffs[..., -1, :]
    for k in range(coeffs.shape[-2] - 2, -1, -1):
        acc = acc * dt + coeffs[..., k, :]
    return acc


def quat_mul(a, b):
    aw, ax, ay, az = a.unbind(-1)
    bw, bx, by, bz = b.unbind(-1)
    return torch.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        -1,
    )


def normalize(q):
    return q / torch.linalg.vector_norm(q, dim=-1, keepdim=True)


def quat_to_rotmat(q):
    w, x, y, z = normalize(q).unbind(-1)
    return torch.stack(
        [
            torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        -2,
    )


def deform_net(net: dict, t: float, count: int) -> torch.Tensor:
    f = (2.0 ** torch.arange(N_FREQS, dtype=DTYPE)) * math.pi
    enc = torch.cat([torch.sin(f * t), torch.cos(f * t)]).expand(count, 2 * N_FREQS)
    x = torch.cat([enc, net["embed"]], 1)
    h = torch.tanh(x @ net["w1"] + net["b1"])
    h = torch.tanh(h @ net["w2"] + net["b2"])
    return h @ net["w3"] + net["b3"]


def scene_state(p: dict, t: float, gp_pos=None, nb_idx=None, nb_dist=None, use_remainder=True):
    """Evaluate every Gaussian at time ``t`` from tensors named like ParamVector groups."""
    dt = t - p["t_center"]
    means = horner(p["pos_coeffs"], dt)
    scales = torch.clamp(horner(p["scale_coeffs"], dt), min=1e-6)
    rots = normalize(horner(p["rot_coeffs"], dt))
    d = t - p["mu_tau"]
    opac = p["sigma_s"] * torch.exp(-p["s_tau"] * d * d)
    if use_remainder and gp_pos is not None:
        r = p["radii"][nb_idx]
        w = torch.exp(-(nb_dist * nb_dist) / (2.0 * r * r))
        w = w / w.sum(-1, keepdim=True)
        out = deform_net(p["net"], t, len(gp_pos))
        gq = normalize(out[:, :4] + torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=DTYPE))
        R = quat_to_rotmat(gq)[nb_idx]  # (L, K, 3, 3)
        rel = p["pos_coeffs"][:, None, 0, :] - gp_pos[nb_idx]
        moved = torch.einsum("lkij,lkj->lki", R, rel) - rel + out[:, 4:][nb_idx]
        means = means + torch.einsum("lk,lki->li", w, moved)
        blend = normalize(torch.einsum("lk,lki->li", w, gq[nb_idx]))
        rots = normalize(quat_mul(blend, rots))
    return means, rots, scales, p["color"], opac


def covariance(rots, scales):
    M = quat_to_rotmat(rots) * scales[:, None, :]
    cov = M @ M.transpose(1, 2)
    return 0.5 * (cov + cov.transpose(1, 2))


def rasterize(means, rots, scales, colors, opac, cam: Camera, background) -> torch.Tensor:
    """Dense differentiable composite; returns an (H, W, 3) tensor."""
    H, W = cam.height, cam.width
    bg = torch.as_tensor(np.asarray(background, dtype=np.float64))
    detached = SceneState(*(x.detach().numpy() for x in (means, rots, scales, colors, opac)))
    prep = _prepare(detached, cam)
    order = torch.as_tensor(prep.order)
    if len(order) == 0:
        return bg.expand(H, W, 3).clone()

    Rw = torch.as_tensor(cam.R)
    pc = means[order] @ Rw.T + torch.as_tensor(cam.trans)
    x, y, z = pc.unbind(-1)
    zs = torch.where(z > NEAR, z, torch.ones_like(z))
    mu = torch.stack([cam.fx * x / zs + cam.cx, cam.fy * y / zs + cam.cy], -1)
    zero = torch.zeros_like(z)
    J = torch.stack(
        [
            torch.stack([cam.fx / zs, zero, -cam.fx * x / (zs * zs)], -1),
            torch.stack([zero, cam.fy / zs, -cam.fy * y / (zs * zs)], -1),
        ],
        -2,
    )
    T = J @ Rw
    cov = T @ covariance(rots[order], scales[order]) @ T.transpose(1, 2)
    a, b, c = cov[:, 0, 0] + DILATION, 0.5 * (cov[:, 0, 1] + cov[:, 1, 0]), cov[:, 1, 1] + DILATION
    det = a * c - b * b

    ys, xs = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    px, py = torch.as_tensor(xs.ravel()), torch.as_tensor(ys.ravel())
    tx, ty = (xs.ravel() // TILE).astype(np.int64), (ys.ravel() // TILE).astype(np.int64)
    lo, hi = prep.tile_lo[prep.order], prep.tile_hi[prep.order]
    cover = (
        (lo[:, 0:1] <= tx) & (tx <= hi[:, 0:1]) & (lo[:, 1:2] <= ty) & (ty <= hi[:, 1:2])
    )

    dx = px[None] - mu[:, 0:1]
    dy = py[None] - mu[:, 1:2]
    power = -0.5 * (c[:, None] * dx * dx - 2.0 * b[:, None] * dx * dy + a[:, None] * dy * dy) / det[:, None]
    alpha = torch.clamp(opac[order][:, None] * torch.exp(power), max=ALPHA_MAX)
    alpha = alpha * torch.as_tensor(cover, dtype=DTYPE)

    with torch.no_grad():
        trans = torch.cumprod(torch.cat([torch.ones(1, H * W, dtype=DTYPE), 1.0 - alpha[:-1]]), 0)
        live = (trans >= T_MIN).to(DTYPE)
    alpha = alpha * live
    # exp-cumsum-log: same product as cumprod with a much cheaper backward
    trans = torch.exp(torch.cumsum(torch.cat([torch.zeros(1, H * W, dtype=DTYPE), torch.log1p(-alpha)]), 0))
    img = (alpha * trans[:-1]).T @ colors[order] + trans[-1][:, None] * bg
    return img.reshape(H, W, 3)


def _band(n: int) -> torch.Tensor:
    # (n - w + 1, n) matrix applying the Gaussian window in valid mode
    g = gaussian_window()
    m = np.zeros((n - SSIM_WINDOW + 1, n))
    for i in range(m.shape[0]):
        m[i, i : i + SSIM_WINDOW] = g
    return torch.as_tensor(m)


def ssim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean SSIM of two (H, W, 3) tensors with valid-mode Gaussian filtering."""
    H, W = a.shape[:2]
    rows, cols = _band(H), _band(W)
    x, y = a.permute(2, 0, 1), b.permute(2, 0, 1)
    stats = rows @ torch.cat([x, y, x * x, y * y, x * y]) @ cols.T
    mx, my, xx, yy, xy = stats.split(3)
    vx = xx - mx * mx
    vy = yy - my * my
    cxy = xy - mx * my
    s = ((2 * mx * my + C1) * (2 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2))
    return s.mean()


def loss(rendered: torch.Tensor, target: torch.Tensor, lambda_ssim: float) -> torch.Tensor:
    l1 = torch.abs(rendered - target).mean()
    if lambda_ssim == 0.0:
        return l1
    return (1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - ssim(rendered, target))
