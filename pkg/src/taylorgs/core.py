"""Value types and static-Gaussian math.

Vectors and quaternions are plain float64 numpy arrays of shape ``(3,)`` and
``(4,)``. Quaternions are scalar-first ``(w, x, y, z)`` and multiply with the
Hamilton convention. Every quaternion helper broadcasts over leading axes so
the renderer can call them on stacked arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def vec3(x, y=None, z=None) -> np.ndarray:
    if y is None:
        v = np.asarray(x, dtype=np.float64).reshape(3)
    else:
        v = np.array([x, y, z], dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite vector {v}")
    return v


def quat(w, x=None, y=None, z=None) -> np.ndarray:
    if x is None:
        return np.asarray(w, dtype=np.float64).reshape(4)
    return np.array([w, x, y, z], dtype=np.float64)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product ``a ⊗ b``. Inputs need not be unit."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) * np.array([1.0, -1.0, -1.0, -1.0])


def quat_normalize(q: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < eps):
        raise ValueError("cannot normalize a quaternion with (near) zero norm")
    return q / n


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle
    return np.concatenate([[np.cos(h)], np.sin(h) * axis])


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of ``q`` (normalized internally); shape ``(..., 3, 3)``."""
    w, x, y, z = np.moveaxis(quat_normalize(q), -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


def rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`quat_to_rotmat` for a single proper rotation (w >= 0)."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return q if q[0] >= 0 else -q


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) ``v`` by ``q``."""
    R = quat_to_rotmat(q)
    return np.einsum("...ij,...j->...i", R, np.asarray(v, dtype=np.float64))


def build_covariance(rot: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Σ = R S Sᵀ Rᵀ, broadcasting over leading axes."""
    scale = np.asarray(scale, dtype=np.float64)
    if np.any(scale <= 0):
        raise ValueError("scale components must be positive")
    M = quat_to_rotmat(rot) * scale[..., None, :]
    cov = M @ np.swapaxes(M, -1, -2)
    # exact symmetry; the two triangles can differ in the last ulp
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def eval_gaussian(x, mu, cov) -> float:
    """Unnormalized density exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ)) in (0, 1]."""
    cov = np.asarray(cov, dtype=np.float64)
    d = np.asarray(x, dtype=np.float64) - np.asarray(mu, dtype=np.float64)
    try:
        sol = np.linalg.solve(cov, d)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is singular") from exc
    if np.linalg.cond(cov) > 1e15:
        raise ValueError("covariance is singular")
    return float(np.exp(-0.5 * d @ sol))


@dataclass(frozen=True)
class TaylorCoeffs:
    """Derivative bank for one attribute.

    ``coeffs[k]`` holds ``f^(k)(t_center) / k!`` so evaluation is a plain
    polynomial in ``t - t_center``.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError(f"coefficient bank must be (order+1, dim), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficient bank contains non-finite entries")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.coeffs.shape[1]

    @classmethod
    def constant(cls, value, order: int) -> "TaylorCoeffs":
        value = np.asarray(value, dtype=np.float64)
        c = np.zeros((order + 1, value.shape[0]))
        c[0] = value
        return cls(c)

    @classmethod
    def from_derivatives(cls, derivs) -> "TaylorCoeffs":
        """Build from raw derivatives f^(k)(t_center), dividing by k!."""
        d = np.asarray(derivs, dtype=np.float64)
        fact = np.cumprod(np.r_[1.0, np.arange(1, d.shape[0])])
        return cls(d / fact[:, None])


@dataclass(frozen=True)
class Gaussian4D:
    """One dynamic primitive.

    The canonical position, scale and orientation are the zeroth Taylor
    coefficients, so they are exposed as properties rather than stored twice.
    """

    pos_coeffs: TaylorCoeffs
    scale_coeffs: TaylorCoeffs
    rot_coeffs: TaylorCoeffs
    color: np.ndarray
    sigma_s: float = 1.0
    mu_tau: float = 0.5
    s_tau: float = 0.0
    t_center: float = 0.5

    def __post_init__(self):
        if self.pos_coeffs.dim != 3 or self.scale_coeffs.dim != 3 or self.rot_coeffs.dim != 4:
            raise ValueError("coefficient banks must be 3-d (pos, scale) and 4-d (rot)")
        if np.any(self.scale_coeffs.coeffs[0] <= 0):
            raise ValueError("canonical scale must be positive")
        if not 0.0 <= self.sigma_s <= 1.0:
            raise ValueError(f"sigma_s={self.sigma_s} outside [0, 1]")
        if self.s_tau < 0:
            raise ValueError("s_tau must be non-negative")
        if not 0.0 <= self.mu_tau <= 1.0:
            raise ValueError(f"mu_tau={self.mu_tau} outside [0, 1]")
        color = np.array(self.color, dtype=np.float64).reshape(3)
        color.setflags(write=False)
        object.__setattr__(self, "color", color)

    @property
    def mu(self) -> np.ndarray:
        return self.pos_coeffs.coeffs[0]

    @property
    def scale(self) -> np.ndarray:
        return self.scale_coeffs.coeffs[0]

    @property
    def rot(self) -> np.ndarray:
        return self.rot_coeffs.coeffs[0]

    @classmethod
    def static(cls, mu, rot, scale, color, sigma_s=1.0, *, pos_order=3, scale_order=2,
               rot_order=1, **kw) -> "Gaussian4D":
        return cls(
            TaylorCoeffs.constant(mu, pos_order),
            TaylorCoeffs.constant(scale, scale_order),
            TaylorCoeffs.constant(quat_normalize(rot), rot_order),
            color=color,
            sigma_s=sigma_s,
            **kw,
        )


@dataclass(frozen=True)
class Camera:
    """Pinhole camera with world-to-camera pose ``x_c = R(rot) x_w + trans``.

    Camera axes follow the OpenCV convention: x right, y down, z forward.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rot: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    trans: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("camera image must have positive area")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")
        q = quat(self.rot)
        if abs(np.linalg.norm(q) - 1.0) > 1e-12:
            q = quat_normalize(q)
        object.__setattr__(self, "rot", q)
        object.__setattr__(self, "trans", vec3(self.trans))

    @property
    def R(self) -> np.ndarray:
        return quat_to_rotmat(self.rot)

    def world_to_camera(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.R.T + self.trans

    @classmethod
    def look_at(cls, eye, target, up, *, fx, fy, width, height, cx=None, cy=None) -> "Camera":
        eye, target, up = vec3(eye), vec3(target), vec3(up)
        fwd = target - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        return cls(
            fx=fx, fy=fy,
            cx=width / 2 if cx is None else cx,
            cy=height / 2 if cy is None else cy,
            width=width, height=height,
            rot=rotmat_to_quat(R), trans=-R @ eye,
        )


@dataclass
class Scene:
    """Gaussians plus the optional control skeleton driving the remainder field."""

    gaussians: list
    controls: Optional[object] = None  # remainder_field.ControlPointSet
    neighbors: Optional[object] = None  # remainder_field.NeighborTable
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    time_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        self.background = vec3(self.background)
        t0, t1 = self.time_range
        if not t0 < t1:
            raise ValueError("time_range must satisfy t_min < t_max")
        self.time_range = (float(t0), float(t1))

    def normalize_time(self, t: float) -> float:
        t0, t1 = self.time_range
        return (t - t0) / (t1 - t0)
