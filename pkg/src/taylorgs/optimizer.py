"""Fitting all learnable scene parameters to target frames.

Parameters live in one flat float64 vector (:class:`ParamVector`) whose named
spans mirror the scene attributes. Reverse-mode gradients come from the torch
mirror of the renderer; :func:`fd_gradient` is the finite-difference reference
built on the numpy tile renderer.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import torch_model as tm
from .core import Camera, Gaussian4D, Scene, TaylorCoeffs
from .metrics import psnr, ssim
from .remainder_field import HIDDEN, OUT_DIM, ControlPointSet, stack_gaussians, transform_arrays
from .renderer import ImageBuffer, render_state
from .taylor_field import SCALE_FLOOR

log = logging.getLogger(__name__)

GROUPS = (
    "pos_coeffs",
    "scale_coeffs",
    "rot_coeffs",
    "sigma_s",
    "s_tau",
    "mu_tau",
    "t_center",
    "color",
    "radii",
    "net",
)

DEFAULT_LR = {
    "pos_coeffs": 1.6e-3,
    "scale_coeffs": 5e-3,
    "rot_coeffs": 1e-3,
    "sigma_s": 5e-2,
    "s_tau": 5e-2,
    "mu_tau": 5e-2,
    "t_center": 1e-3,
    "color": 2.5e-3,
    "radii": 1e-3,
    "net": 1e-3,
}

ABLATIONS = ("time_opacity", "time_motion", "time_rotation", "time_scale", "peano_remainder")


class GradientError(RuntimeError):
    pass


class FitDiverged(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class ParamVector:
    """Flat parameter vector plus a registry of named, shaped spans."""

    data: np.ndarray
    spans: dict  # name -> (start, stop, shape)

    def group(self, name: str) -> np.ndarray:
        start, stop, shape = self.spans[name]
        return self.data[start:stop].reshape(shape)

    def like(self, data) -> "ParamVector":
        return ParamVector(np.asarray(data, dtype=np.float64), self.spans)

    def copy(self) -> "ParamVector":
        return self.like(self.data.copy())

    def __len__(self) -> int:
        return self.data.size

    def group_of(self, index: int) -> str:
        for name, (start, stop, _) in self.spans.items():
            if start <= index < stop:
                return name
        raise IndexError(index)

    @classmethod
    def from_scene(cls, scene: Scene) -> "ParamVector":
        a = stack_gaussians(scene.gaussians)
        parts = {
            "pos_coeffs": a["pos"],
            "scale_coeffs": a["scale"],
            "rot_coeffs": a["rot"],
            "sigma_s": a["sigma_s"],
            "s_tau": a["s_tau"],
            "mu_tau": a["mu_tau"],
            "t_center": a["t_center"],
            "color": a["color"],
            "radii": np.zeros(0) if scene.controls is None else np.asarray(scene.controls.radii, dtype=np.float64),
            "net": np.zeros(0) if scene.controls is None else scene.controls.net.flat(),
        }
        spans, chunks, i = {}, [], 0
        for name in GROUPS:
            arr = np.asarray(parts[name], dtype=np.float64)
            spans[name] = (i, i + arr.size, arr.shape)
            chunks.append(arr.ravel())
            i += arr.size
        return cls(np.concatenate(chunks), spans)

    def arrays(self) -> dict:
        """Stacked attribute arrays in the layout used by ``transform_arrays``."""
        return {
            "pos": self.group("pos_coeffs"),
            "scale": self.group("scale_coeffs"),
            "rot": self.group("rot_coeffs"),
            "color": self.group("color"),
            "sigma_s": self.group("sigma_s"),
            "mu_tau": self.group("mu_tau"),
            "s_tau": self.group("s_tau"),
            "t_center": self.group("t_center"),
        }

    def controls(self, scene: Scene):
        if scene.controls is None:
            return None
        c = scene.controls
        return ControlPointSet(c.positions, self.group("radii").copy(), c.net.with_flat(self.group("net")),
                               c.seed_index)

    def to_scene(self, scene: Scene) -> Scene:
        """Write the vector back into a copy of ``scene``."""
        a = self.arrays()
        gaussians = [
            Gaussian4D(
                TaylorCoeffs(a["pos"][i]),
                TaylorCoeffs(a["scale"][i]),
                TaylorCoeffs(a["rot"][i]),
                color=a["color"][i].copy(),
                sigma_s=float(a["sigma_s"][i]),
                mu_tau=float(a["mu_tau"][i]),
                s_tau=float(a["s_tau"][i]),
                t_center=float(a["t_center"][i]),
            )
            for i in range(len(a["sigma_s"]))
        ]
        return Scene(gaussians, self.controls(scene), scene.neighbors, scene.background.copy(), scene.time_range)


@dataclass
class Sample:
    camera: Camera
    t: float
    target: ImageBuffer
    name: str = ""


@dataclass
class FitConfig:
    iterations: int = 2000
    lr: dict = field(default_factory=lambda: dict(DEFAULT_LR))
    lambda_ssim: float = 0.2
    samples: list = field(default_factory=list)
    time_opacity: bool = True
    time_motion: bool = True
    time_rotation: bool = True
    time_scale: bool = True
    peano_remainder: bool = True
    seed: int = 0
    batch_size: int = 1
    position_lr_final_ratio: float = 0.01
    order_lr_scale: float = 2.0
    history_every: int = 1

    def __post_init__(self):
        if not 0.0 <= self.lambda_ssim < 1.0:
            raise ValueError("lambda_ssim must lie in [0, 1)")
        lr = dict(DEFAULT_LR)
        lr.update(self.lr)
        self.lr = lr

    @property
    def flags(self) -> dict:
        return {name: getattr(self, name) for name in ABLATIONS}

    @classmethod
    def from_json(cls, path_or_text) -> "FitConfig":
        text = Path(path_or_text).read_text() if not str(path_or_text).lstrip().startswith("{") else path_or_text
        raw = json.loads(text)
        known = {k: v for k, v in raw.items() if k in cls.__dataclass_fields__ and k != "samples"}
        unknown = set(raw) - set(known) - {"samples"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**known)

    def to_json(self) -> str:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "samples"}
        return json.dumps(d, indent=2, sort_keys=True)


def trainable_mask(params: ParamVector, flags: dict) -> np.ndarray:
    """Boolean mask of coordinates the optimizer may move under ``flags``."""
    mask = params.like(np.ones(len(params))).data.astype(bool)

    def freeze(name, sel=(...,)):
        start, stop, shape = params.spans[name]
        m = mask[start:stop].reshape(shape)
        m[sel] = False

    if not flags.get("time_motion", True):
        freeze("pos_coeffs", (slice(None), slice(1, None)))
    if not flags.get("time_rotation", True):
        freeze("rot_coeffs", (slice(None), slice(1, None)))
    if not flags.get("time_scale", True):
        freeze("scale_coeffs", (slice(None), slice(1, None)))
    if not flags.get("time_opacity", True):
        freeze("s_tau")
        freeze("mu_tau")
    if not flags.get("peano_remainder", True):
        freeze("radii")
        freeze("net")
    return mask


def apply_ablations(params: ParamVector, flags: dict) -> ParamVector:
    """Reset ablated groups to their frozen values (zero motion terms, identity remainder)."""
    p = params.copy()
    if not flags.get("time_motion", True):
        p.group("pos_coeffs")[:, 1:] = 0.0
    if not flags.get("time_rotation", True):
        p.group("rot_coeffs")[:, 1:] = 0.0
    if not flags.get("time_scale", True):
        p.group("scale_coeffs")[:, 1:] = 0.0
    if not flags.get("time_opacity", True):
        p.group("s_tau")[:] = 0.0
    if not flags.get("peano_remainder", True) and len(p.group("net")):
        # zero final layer: identity rotation and zero translation for every point
        n_out = HIDDEN * OUT_DIM + OUT_DIM
        p.group("net")[-n_out:] = 0.0
    return p


def project_constraints(params: ParamVector) -> None:
    """Clip coordinates back into their valid ranges, in place."""
    np.clip(params.group("sigma_s"), 0.0, 1.0, out=params.group("sigma_s"))
    np.clip(params.group("color"), 0.0, 1.0, out=params.group("color"))
    np.clip(params.group("mu_tau"), 0.0, 1.0, out=params.group("mu_tau"))
    np.clip(params.group("t_center"), 0.0, 1.0, out=params.group("t_center"))
    np.maximum(params.group("s_tau"), 0.0, out=params.group("s_tau"))
    s0 = params.group("scale_coeffs")[:, 0]
    params.group("scale_coeffs")[:, 0] = np.maximum(s0, SCALE_FLOOR)
    if len(params.group("radii")):
        np.maximum(params.group("radii"), 1e-4, out=params.group("radii"))


def loss(rendered, target, lambda_ssim: float = 0.2) -> float:
    """(1 - λ) L1 + λ (1 - SSIM)."""
    a = np.asarray(getattr(rendered, "pixels", rendered), dtype=np.float64)
    b = np.asarray(getattr(target, "pixels", target), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    l1 = float(np.mean(np.abs(a - b)))
    if lambda_ssim == 0.0:
        return l1
    return (1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - ssim(a, b))


def render_params(scene: Scene, params: ParamVector, cam: Camera, t: float, *,
                  use_remainder: bool = True) -> ImageBuffer:
    """numpy render straight from a parameter vector (no attribute validation)."""
    controls = params.controls(scene) if use_remainder else None
    state = transform_arrays(params.arrays(), t, controls, scene.neighbors)
    return render_state(state, cam, scene.background)


class _TorchScene:
    """Holds the constant tensors needed to evaluate a scene from a flat tensor."""

    def __init__(self, scene: Scene, params: ParamVector, use_remainder: bool = True):
        self.scene = scene
        self.spans = params.spans
        self.use_remainder = use_remainder and scene.controls is not None
        if scene.controls is not None:
            self.gp_pos = torch.as_tensor(np.asarray(scene.controls.positions, dtype=np.float64))
            self.nb_idx = torch.as_tensor(scene.neighbors.indices)
            self.nb_dist = torch.as_tensor(np.asarray(scene.neighbors.distances, dtype=np.float64))
            self.net_shapes = scene.controls.net.shapes(scene.controls.count)
        else:
            self.gp_pos = self.nb_idx = self.nb_dist = None

    def unpack(self, theta: torch.Tensor) -> dict:
        p = {}
        for name, (start, stop, shape) in self.spans.items():
            if name == "net":
                continue
            p[name] = theta[start:stop].reshape(shape)
        if self.gp_pos is not None:
            start, stop, _ = self.spans["net"]
            flat, i, net = theta[start:stop], 0, {}
            for key, shape in self.net_shapes.items():
                n = int(np.prod(shape))
                net[key] = flat[i : i + n].reshape(shape)
                i += n
            p["net"] = net
        return p

    def render(self, theta: torch.Tensor, cam: Camera, t: float) -> torch.Tensor:
        p = self.unpack(theta)
        state = tm.scene_state(p, t, self.gp_pos, self.nb_idx, self.nb_dist, self.use_remainder)
        return tm.rasterize(*state, cam, self.scene.background)


def _group_diagnostics(params: ParamVector) -> str:
    bad = [n for n in GROUPS if not np.all(np.isfinite(params.group(n)))]
    return f"non-finite parameter groups: {bad or 'none'}"


def gradient(scene: Scene, params: ParamVector, sample: Sample, lambda_ssim: float = 0.0,
             flags: dict | None = None) -> ParamVector:
    """Reverse-mode gradient of the loss of one sample; frozen coordinates get exactly zero."""
    flags = flags or {}
    ts = _TorchScene(scene, params, flags.get("peano_remainder", True))
    value, grad, _ = _loss_and_grad(ts, params.data, [sample], lambda_ssim)
    if not np.isfinite(value):
        raise GradientError(f"loss is not finite; {_group_diagnostics(params)}")
    grad = np.where(trainable_mask(params, flags), grad, 0.0)
    return params.like(grad)


def _loss_and_grad(ts: _TorchScene, data: np.ndarray, samples, lambda_ssim: float):
    theta = torch.tensor(data, dtype=tm.DTYPE, requires_grad=True)
    total = torch.zeros((), dtype=tm.DTYPE)
    psnrs = []
    for s in samples:  # fixed-order reduction
        img = ts.render(theta, s.camera, s.t)
        total = total + tm.loss(img, torch.as_tensor(s.target.pixels), lambda_ssim)
        psnrs.append(psnr(img.detach().numpy(), s.target))
    total = total / len(samples)
    total.backward()
    return float(total.detach()), theta.grad.numpy().copy(), float(np.mean(psnrs))


def fd_gradient(scene: Scene, params: ParamVector, sample: Sample, lambda_ssim: float = 0.0,
                step: float = 1e-4, indices=None, flags: dict | None = None) -> ParamVector:
    """Central finite differences of the numpy render + loss."""
    flags = flags or {}
    use_rem = flags.get("peano_remainder", True)
    mask = trainable_mask(params, flags)
    idx = range(len(params)) if indices is None else indices
    out = np.zeros(len(params))
    work = params.copy()
    for i in idx:
        if not mask[i]:
            continue
        x0 = work.data[i]
        work.data[i] = x0 + step
        hi = loss(render_params(scene, work, sample.camera, sample.t, use_remainder=use_rem), sample.target, lambda_ssim)
        work.data[i] = x0 - step
        lo = loss(render_params(scene, work, sample.camera, sample.t, use_remainder=use_rem), sample.target, lambda_ssim)
        work.data[i] = x0
        out[i] = (hi - lo) / (2.0 * step)
    return params.like(out)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr, beta1: float = 0.9,
         beta2: float = 0.999, eps: float = 1e-8) -> np.ndarray:
    """One bias-corrected Adam update; ``lr`` is a scalar or per-coordinate array."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ValueError("parameter and gradient shapes differ")
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grads
    state.v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps)


def learning_rates(params: ParamVector, config: FitConfig, iteration: int) -> np.ndarray:
    lr = np.empty(len(params))
    frac = iteration / max(config.iterations - 1, 1)
    for name, (start, stop, shape) in params.spans.items():
        base = config.lr[name]
        if name == "pos_coeffs":
            base = base * config.position_lr_final_ratio**frac
        seg = np.full(shape, base, dtype=np.float64)
        if name in ("pos_coeffs", "scale_coeffs", "rot_coeffs"):
            orders = np.arange(shape[1])
            seg *= (config.order_lr_scale ** orders)[None, :, None]
        lr[start:stop] = seg.ravel()
    return lr


@dataclass
class FitResult:
    scene: Scene
    history: list  # (iteration, loss, psnr)

    def history_csv(self) -> str:
        lines = ["iteration,loss,psnr"]
        lines += [f"{i},{l:.9g},{p:.6f}" for i, l, p in self.history]
        return "\n".join(lines) + "\n"


def fit(scene: Scene, config: FitConfig, samples=None, callback=None) -> FitResult:
    """Adam fit of every unfrozen parameter against ``samples`` (or ``config.samples``)."""
    samples = list(config.samples if samples is None else samples)
    if config.iterations == 0:
        return FitResult(scene, [])
    if not samples:
        raise ValueError("fit needs at least one training sample")
    flags = config.flags
    params = apply_ablations(ParamVector.from_scene(scene), flags)
    mask = trainable_mask(params, flags)
    ts = _TorchScene(scene, params, flags["peano_remainder"])
    rng = np.random.default_rng(config.seed)
    state = AdamState.zeros(len(params))
    history = []
    first_loss, bad_run = None, 0
    queue = []
    for it in range(config.iterations):
        batch = []
        for _ in range(config.batch_size):
            if not queue:
                queue = list(rng.permutation(len(samples)))
            batch.append(samples[queue.pop()])
        value, grad, train_psnr = _loss_and_grad(ts, params.data, batch, config.lambda_ssim)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            raise GradientError(f"non-finite loss/gradient at iteration {it}; {_group_diagnostics(params)}")
        first_loss = value if first_loss is None else first_loss
        bad_run = bad_run + 1 if value > 1e3 * first_loss else 0
        if bad_run >= 100:
            raise FitDiverged(f"loss above 1000x its initial value for 100 iterations (at {it})", history)
        grad = np.where(mask, grad, 0.0)
        new = step(params.data, grad, state, learning_rates(params, config, it))
        params.data[mask] = new[mask]
        project_constraints(params)
        if it % config.history_every == 0 or it == config.iterations - 1:
            history.append((it, value, train_psnr))
        if callback is not None:
            callback(it, value)
    return FitResult(params.to_scene(scene), history)


def evaluate(scene: Scene, samples) -> tuple[float, float]:
    """Mean PSNR and SSIM of ``scene`` over ``samples``."""
    from .renderer import render

    ps, ss = [], []
    for s in samples:
        img = render(scene, s.camera, s.t)
        ps.append(psnr(img, s.target))
        ss.append(ssim(img, s.target) if min(img.width, img.height) >= 11 else float("nan"))
    return float(np.mean(ps)), float(np.mean(ss))
