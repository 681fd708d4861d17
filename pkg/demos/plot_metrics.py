"""
PSNR and SSIM
=============

Two images differing by a constant 0.1 sit at 20 dB. SSIM reacts to
structure: a checkerboard against its inverse scores below zero.
"""

import numpy as np

from taylorgs.metrics import MetricReport, psnr, ssim

a = np.full((32, 32, 3), 0.4)
print("psnr(a, a + 0.1) =", psnr(a, a + 0.1))

board = (np.indices((32, 32)).sum(0) % 2).astype(float)[..., None].repeat(3, 2)
print("ssim(board, 1 - board) =", ssim(board, 1 - board))

rng = np.random.default_rng(0)
report = MetricReport()
for i in range(3):
    noisy = np.clip(a + rng.normal(0, 0.02 * (i + 1), a.shape), 0, 1)
    report.add(f"frame{i}", noisy, a)
print(report.table())
