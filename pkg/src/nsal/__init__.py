"""Nonlinear saliency maps on a self-contained differentiable network engine."""

from .imaging import Kernel, gaussian_kernel, load_image, render_montage, save_image
from .model import (
    Network,
    SensitivityField,
    default_network,
    load_model,
    predict,
    save_model,
    sensitivity,
    train,
)
from .saliency import (
    SaliencyConfig,
    SaliencyResult,
    TrajectoryRecord,
    TrajectoryStep,
    blur_below_level,
    enhancement_step,
    mask_below_level,
    quantile_level,
    retrace_best,
    run_linear,
    run_nonlinear,
)

__version__ = "0.1.0"

__all__ = [
    "Kernel",
    "Network",
    "SaliencyConfig",
    "SaliencyResult",
    "SensitivityField",
    "TrajectoryRecord",
    "TrajectoryStep",
    "blur_below_level",
    "default_network",
    "enhancement_step",
    "gaussian_kernel",
    "load_image",
    "load_model",
    "mask_below_level",
    "predict",
    "quantile_level",
    "render_montage",
    "retrace_best",
    "run_linear",
    "run_nonlinear",
    "save_image",
    "save_model",
    "sensitivity",
    "train",
]
