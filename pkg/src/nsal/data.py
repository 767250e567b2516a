"""Synthetic 32x32 RGB shapes dataset: square, disk, triangle, cross.

Each image holds one bright primary shape on a darker cluttered background.
Image ``i`` of a dataset is a pure function of ``(seed, i)``, so datasets are
reproducible and extensible without regenerating earlier images.
"""

from __future__ import annotations

import numpy as np

from .tensor import DTYPE

CLASS_NAMES = ("square", "disk", "triangle", "cross")
IMAGE_SIZE = 32


def _shape_mask(kind: str, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]
    dy = yy - cy
    dx = xx - cx
    if kind == "square":
        return (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if kind == "disk":
        return dy**2 + dx**2 <= r**2
    if kind == "triangle":
        # filled isoceles triangle, apex up
        return (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) / 2.0)
    if kind == "cross":
        arm = max(r / 3.0, 1.0)
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= r)) | (
            (np.abs(dy) <= arm) & (np.abs(dx) <= r)
        )
    raise ValueError(f"unknown shape kind {kind!r}")


def make_shape_image(seed: int, index: int) -> tuple[np.ndarray, int]:
    """Image ``index`` of the dataset seeded with ``seed``, plus its label."""
    rng = np.random.default_rng([seed, index])
    label = index % len(CLASS_NAMES)
    img = np.empty((IMAGE_SIZE, IMAGE_SIZE, 3), dtype=DTYPE)
    img[:] = rng.uniform(0.05, 0.40, size=3).astype(DTYPE)

    # background clutter: a few small dull rectangles
    for _ in range(rng.integers(3, 7)):
        y = int(rng.integers(0, IMAGE_SIZE - 3))
        x = int(rng.integers(0, IMAGE_SIZE - 3))
        hh = int(rng.integers(2, 5))
        ww = int(rng.integers(2, 5))
        img[y : y + hh, x : x + ww] = rng.uniform(0.0, 0.50, size=3).astype(DTYPE)

    cy = float(rng.uniform(11.0, 21.0))
    cx = float(rng.uniform(11.0, 21.0))
    radius = float(rng.uniform(5.0, 9.0))
    color = rng.uniform(0.60, 1.0, size=3).astype(DTYPE)
    img[_shape_mask(CLASS_NAMES[label], cy, cx, radius)] = color
    return img, label


def make_shapes_dataset(seed: int, count: int) -> tuple[np.ndarray, np.ndarray]:
    """``count`` images and labels; classes assigned round-robin."""
    if count <= 0:
        raise ValueError(f"count must be positive, got {count}")
    images = np.empty((count, IMAGE_SIZE, IMAGE_SIZE, 3), dtype=DTYPE)
    labels = np.empty(count, dtype=np.int64)
    for i in range(count):
        images[i], labels[i] = make_shape_image(seed, i)
    return images, labels
