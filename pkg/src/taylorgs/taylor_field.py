"""Polynomial (dominant) part of the motion model and the temporal opacity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Gaussian4D, TaylorCoeffs

SCALE_FLOOR = 1e-6


def _horner(coeffs: np.ndarray, dt) -> np.ndarray:
    # coeffs (..., n+1, d), dt broadcastable to (...,)
    dt = np.asarray(dt, dtype=np.float64)[..., None]
    acc = coeffs[..., -1, :]
    for k in range(coeffs.shape[-2] - 2, -1, -1):
        acc = acc * dt + coeffs[..., k, :]
    return acc


def _bank(coeffs) -> np.ndarray:
    return coeffs.coeffs if isinstance(coeffs, TaylorCoeffs) else np.asarray(coeffs, dtype=np.float64)


def eval_position(coeffs, t, t_center) -> np.ndarray:
    return _horner(_bank(coeffs), np.asarray(t) - t_center)


def eval_scale(coeffs, t, t_center, scale_floor: float = SCALE_FLOOR) -> np.ndarray:
    return np.maximum(_horner(_bank(coeffs), np.asarray(t) - t_center), scale_floor)


def eval_rotation(coeffs, t, t_center) -> np.ndarray:
    """Polynomial in the raw 4-vector followed by renormalization."""
    q = _horner(_bank(coeffs), np.asarray(t) - t_center)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ValueError("degenerate orientation: quaternion polynomial vanished")
    return q / n


def eval_temporal_opacity(sigma_s, s_tau, mu_tau, t):
    """σˢ · exp(-sᵗ |t - μᵗ|²)."""
    dt = np.asarray(t, dtype=np.float64) - mu_tau
    return sigma_s * np.exp(-s_tau * dt * dt)


@dataclass(frozen=True)
class TaylorEval:
    position: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    temporal_opacity: float


def eval_taylor(g: Gaussian4D, t: float) -> TaylorEval:
    return TaylorEval(
        position=eval_position(g.pos_coeffs, t, g.t_center),
        scale=eval_scale(g.scale_coeffs, t, g.t_center),
        rotation=eval_rotation(g.rot_coeffs, t, g.t_center),
        temporal_opacity=float(eval_temporal_opacity(g.sigma_s, g.s_tau, g.mu_tau, t)),
    )
