"""PSNR and SSIM on [0, 1] RGB images."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = 0.01**2
C2 = 0.03**2


def _pixels(img) -> np.ndarray:
    return np.asarray(getattr(img, "pixels", img), dtype=np.float64)


def _pair(a, b):
    a, b = _pixels(a), _pixels(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable "valid" correlation over the two leading axes
    n = len(g)
    h, w = img.shape[:2]
    rows = sum(g[k] * img[k : h - n + 1 + k] for k in range(n))
    return sum(g[k] * rows[:, k : w - n + 1 + k] for k in range(n))


def ssim_map(a, b) -> np.ndarray:
    a, b = _pair(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    g = gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + C1) * (2 * cov + C2)
    den = (mu_a**2 + mu_b**2 + C1) * (var_a + var_b + C2)
    return num / den


def ssim(a, b) -> float:
    """Mean local SSIM; channels are averaged with equal weight."""
    return float(np.mean(ssim_map(a, b)))


@dataclass
class MetricReport:
    frames: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    def add(self, name: str, rendered, truth) -> None:
        self.frames.append(name)
        self.psnr.append(psnr(rendered, truth))
        self.ssim.append(ssim(rendered, truth))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))

    def to_csv(self) -> str:
        # the lpips column stays empty: no pretrained network is shipped
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame", "psnr", "ssim", "lpips"])
        for name, p, s in zip(self.frames, self.psnr, self.ssim):
            w.writerow([name, f"{p:.6f}", f"{s:.6f}", ""])
        w.writerow(["mean", f"{self.mean_psnr:.6f}", f"{self.mean_ssim:.6f}", ""])
        return buf.getvalue()

    def table(self) -> str:
        lines = [f"{'frame':<24}{'PSNR':>10}{'SSIM':>10}"]
        for name, p, s in zip(self.frames, self.psnr, self.ssim):
            lines.append(f"{name:<24}{p:>10.3f}{s:>10.4f}")
        lines.append(f"{'mean':<24}{self.mean_psnr:>10.3f}{self.mean_ssim:>10.4f}")
        return "\n".join(lines)
