"""Dynamic Gaussian splatting with Taylor-polynomial motion and a learned remainder field."""
from .core import (
    Camera,
    Gaussian4D,
    Scene,
    TaylorCoeffs,
    build_covariance,
    eval_gaussian,
    quat_mul,
    quat_to_rotmat,
)
from .metrics import MetricReport, psnr, ssim
from .optimizer import FitConfig, ParamVector, Sample, fit
from .remainder_field import ControlPointSet, DeformNet, NeighborTable, eval_full_transform
from .renderer import ImageBuffer, render
from .taylor_field import TaylorEval, eval_taylor

__version__ = "0.1.0"
