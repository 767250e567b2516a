"""Linear and nonlinear saliency trajectories.

Each step ranks pixels by the per-pixel norm of the class-probability
gradient, low-pass filters the lowest-ranked fraction, pushes the whole image
along the gradient and clips back to [0, 1]. The nonlinear mode recomputes
the gradient at every step; the linear mode freezes the gradient computed at
the original image. A trajectory records every intermediate image together
with a masked saliency map and the resulting class probabilities.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imaging import Kernel, gaussian_kernel, save_image
from .model import Network, SensitivityField, predict, sensitivity
from .tensor import DTYPE, ShapeError

DEFAULT_SCHEDULE = (0.0, 0.05, 0.10, 0.20, 0.30, 0.50, 0.75, 0.95)

# With step_size="auto" the most sensitive pixel moves by this much per step.
AUTO_STEP_BUDGET = 0.05


@dataclass(frozen=True)
class Level:
    """Selection cutoff on a pixel-norm grid.

    ``value`` is the norm of the first unselected pixel; pixels strictly
    below it are selected, plus the ``tie_count`` lowest row-major pixels
    whose norm equals ``value``. ``value`` is -inf when nothing is selected.
    """

    value: float
    tie_count: int = 0

    @property
    def empty(self) -> bool:
        return math.isinf(self.value) and self.value < 0


@dataclass(frozen=True)
class SaliencyConfig:
    step_size: float | str = "auto"
    schedule: tuple[float, ...] = DEFAULT_SCHEDULE
    steps_per_fraction: int = 25
    kernel_sigma: float = 1.0
    kernel_radius: int = 2
    background: tuple[float, ...] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if isinstance(self.step_size, str):
            if self.step_size != "auto":
                raise ValueError(f"step_size must be a number or 'auto', got {self.step_size!r}")
        elif self.step_size < 0:
            raise ValueError(f"step_size must be non-negative, got {self.step_size}")
        if not self.schedule:
            raise ValueError("schedule must not be empty")
        for q in self.schedule:
            if not 0.0 <= q < 1.0:
                raise ValueError(f"blur fractions must lie in [0, 1), got {q}")
        if any(b >= a for a, b in zip(self.schedule[1:], self.schedule)):
            raise ValueError("schedule must be strictly increasing")
        if self.steps_per_fraction < 1:
            raise ValueError("steps_per_fraction must be positive")
        if self.kernel_sigma <= 0 or self.kernel_radius < 1:
            raise ValueError("kernel sigma and radius must be positive")
        if any(not 0.0 <= b <= 1.0 for b in self.background):
            raise ValueError("background channels must lie in [0, 1]")

    def kernel(self) -> Kernel:
        return gaussian_kernel(self.kernel_sigma, self.kernel_radius)


@dataclass
class TrajectoryStep:
    blur_fraction: float
    class_probs: np.ndarray
    image: np.ndarray
    map: np.ndarray
    mask: np.ndarray  # boolean H x W selection that produced ``map``


@dataclass
class TrajectoryRecord:
    target_class: int
    mode: str
    steps: list[TrajectoryStep] = field(default_factory=list)

    def target_probs(self) -> np.ndarray:
        return np.array(
            [s.class_probs[self.target_class] for s in self.steps], dtype=DTYPE
        )


@dataclass(frozen=True)
class SaliencyResult:
    best_step: TrajectoryStep
    best_index: int
    best_prob: float
    threshold_estimate: float | None


# ---------------------------------------------------------------------------
# pixel selection


def quantile_level(pixel_norm: np.ndarray, blur_fraction: float) -> Level:
    """Cutoff selecting exactly floor(blur_fraction * H * W) pixels.

    Pixels are ranked by (norm, row-major index); the lowest-ranked are
    selected, so counts stay exact even when norms are heavily tied.
    """
    if pixel_norm.size == 0:
        raise ValueError("pixel norm grid is empty")
    if not 0.0 <= blur_fraction < 1.0:
        raise ValueError(f"blur fraction must lie in [0, 1), got {blur_fraction}")
    flat = pixel_norm.ravel()
    # tiny guard so percent-derived fractions (e.g. 15/100) hit their intended count
    count = int(math.floor(blur_fraction * flat.size + 1e-9))
    if count == 0:
        return Level(value=float("-inf"), tie_count=0)
    order = np.argsort(flat, kind="stable")
    cutoff = float(flat[order[count]])
    below = int(np.count_nonzero(flat < cutoff))
    return Level(value=cutoff, tie_count=count - below)


def selection_mask(pixel_norm: np.ndarray, level: Level) -> np.ndarray:
    """Boolean H x W mask of the pixels a level selects."""
    if level.empty:
        return np.zeros(pixel_norm.shape, dtype=bool)
    flat = pixel_norm.ravel()
    mask = flat < level.value
    if level.tie_count:
        ties = np.flatnonzero(flat == level.value)
        mask[ties[: level.tie_count]] = True
    return mask.reshape(pixel_norm.shape)


# ---------------------------------------------------------------------------
# image updates


def _blur_full(image: np.ndarray, kernel: Kernel) -> np.ndarray:
    r = kernel.radius
    padded = np.pad(image, ((r, r), (r, r), (0, 0)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (2 * r + 1, 2 * r + 1), axis=(0, 1))
    return np.einsum("hwcij,ij->hwc", win, kernel.weights, dtype=image.dtype)


def blur_below_level(
    image: np.ndarray, pixel_norm: np.ndarray, level: Level, kernel: Kernel
) -> np.ndarray:
    """Replace selected pixels by their kernel-weighted neighborhood average.

    Neighborhoods are read entirely from the input image (never from already
    blurred pixels) and edges clamp to the nearest pixel. Unselected pixels
    are copied verbatim.
    """
    if image.shape[:2] != pixel_norm.shape:
        raise ShapeError(
            f"image {image.shape[:2]} and pixel norm {pixel_norm.shape} disagree"
        )
    mask = selection_mask(pixel_norm, level)
    if not mask.any():
        return image.copy()
    return np.where(mask[:, :, None], _blur_full(image, kernel), image)


def mask_below_level(
    image: np.ndarray, pixel_norm: np.ndarray, level: Level, background
) -> np.ndarray:
    """Paint selected pixels in the background color, exactly."""
    if image.shape[:2] != pixel_norm.shape:
        raise ShapeError(
            f"image {image.shape[:2]} and pixel norm {pixel_norm.shape} disagree"
        )
    background = np.asarray(background, dtype=image.dtype)
    if background.shape != (image.shape[2],):
        raise ShapeError(
            f"background has {background.shape} channels, image has {image.shape[2]}"
        )
    out = image.copy()
    out[selection_mask(pixel_norm, level)] = background
    return out


def enhancement_step(
    prev: np.ndarray,
    sens: SensitivityField,
    level: Level,
    step_size: float,
    kernel: Kernel,
) -> np.ndarray:
    """One update: blur the selection, add the scaled gradient, clip to [0,1]."""
    if step_size < 0:
        raise ValueError(f"step_size must be non-negative, got {step_size}")
    blurred = blur_below_level(prev, sens.pixel_norm, level, kernel)
    return np.clip(blurred + DTYPE(step_size) * sens.grad, 0.0, 1.0)


def resolve_step_size(configured: float | str, sens: SensitivityField) -> float:
    if configured == "auto":
        peak = float(sens.pixel_norm.max())
        return AUTO_STEP_BUDGET / peak if peak > 0 else 0.0
    return float(configured)


# ---------------------------------------------------------------------------
# trajectories


def _run(
    net: Network,
    image: np.ndarray,
    class_index: int,
    cfg: SaliencyConfig,
    frozen: bool,
) -> TrajectoryRecord:
    if not 0 <= class_index < net.num_classes:
        raise ValueError(f"class index {class_index} out of range [0, {net.num_classes})")
    kernel = cfg.kernel()
    record = TrajectoryRecord(
        target_class=class_index, mode="linear" if frozen else "nonlinear"
    )
    current = np.ascontiguousarray(image, dtype=DTYPE)
    sens = sensitivity(net, current, class_index) if frozen else None
    for q in cfg.schedule:
        for _ in range(cfg.steps_per_fraction):
            if not frozen:
                sens = sensitivity(net, current, class_index)
            level = quantile_level(sens.pixel_norm, q)
            step = resolve_step_size(cfg.step_size, sens)
            current = enhancement_step(current, sens, level, step, kernel)
            record.steps.append(
                TrajectoryStep(
                    blur_fraction=q,
                    class_probs=predict(net, current),
                    image=current,
                    map=mask_below_level(current, sens.pixel_norm, level, cfg.background),
                    mask=selection_mask(sens.pixel_norm, level),
                )
            )
    return record


def run_nonlinear(
    net: Network, image: np.ndarray, class_index: int, cfg: SaliencyConfig
) -> TrajectoryRecord:
    """Trajectory with the sensitivity field recomputed at every step."""
    return _run(net, image, class_index, cfg, frozen=False)


def run_linear(
    net: Network, image: np.ndarray, class_index: int, cfg: SaliencyConfig
) -> TrajectoryRecord:
    """Trajectory driven by the single gradient taken at the original image."""
    return _run(net, image, class_index, cfg, frozen=True)


def retrace_best(traj: TrajectoryRecord) -> SaliencyResult:
    """Best recorded point and the blur fraction where the target first wins."""
    if not traj.steps:
        raise ValueError("cannot retrace an empty trajectory")
    probs = traj.target_probs()
    best = int(np.argmax(probs))  # earliest maximum wins ties
    threshold = None
    for step, p in zip(traj.steps, probs):
        if p > 0.5:
            threshold = float(step.blur_fraction)
            break
    return SaliencyResult(
        best_step=traj.steps[best],
        best_index=best,
        best_prob=float(probs[best]),
        threshold_estimate=threshold,
    )


# ---------------------------------------------------------------------------
# serialization


def write_trajectory_csv(traj: TrajectoryRecord, path) -> None:
    """One row per step: step_index, blur_fraction, target_prob, top1_index, top1_prob."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step_index", "blur_fraction", "target_prob", "top1_index", "top1_prob"])
        for i, step in enumerate(traj.steps):
            top1 = int(np.argmax(step.class_probs))
            writer.writerow(
                [
                    i,
                    f"{step.blur_fraction:.9g}",
                    f"{float(step.class_probs[traj.target_class]):.9g}",
                    top1,
                    f"{float(step.class_probs[top1]):.9g}",
                ]
            )


def snapshot_indices(traj: TrajectoryRecord) -> list[int]:
    """Last step of each schedule fraction, in order."""
    out = []
    for i, step in enumerate(traj.steps):
        if i + 1 == len(traj.steps) or traj.steps[i + 1].blur_fraction != step.blur_fraction:
            out.append(i)
    return out


def write_snapshots(traj: TrajectoryRecord, out_dir) -> dict:
    """Save per-fraction image/map PNG pairs and return the manifest mapping."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"mode": traj.mode, "target_class": traj.target_class, "snapshots": []}
    for i in snapshot_indices(traj):
        step = traj.steps[i]
        image_name = f"step_{i:04d}_image.png"
        map_name = f"step_{i:04d}_map.png"
        save_image(step.image, out_dir / image_name)
        save_image(step.map, out_dir / map_name)
        manifest["snapshots"].append(
            {
                "step_index": i,
                "blur_fraction": float(step.blur_fraction),
                "image": image_name,
                "map": map_name,
            }
        )
    return manifest


def write_manifest(manifest: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
