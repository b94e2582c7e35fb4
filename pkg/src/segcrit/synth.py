"""Synthetic piecewise-constant test images and seeded Gaussian noise.

Templates are drawn on the unit square and rasterised by sampling each pixel
centre ``((j + 0.5) / width, (i + 0.5) / height)``:

``squares7``
    seven squares tiling the image: three of side 1/2 (top-left, top-right,
    bottom-left quadrants) and four of side 1/4 filling the bottom-right
    quadrant. Two small squares sit next to a large square of close gray
    value; every other adjacent pair differs by at least 1.
``rects8``
    eight equal vertical strips, gray values increasing left to right.
``freeform4``
    background, a disc, a rectangle and an L-shape.

Default gray values are this package's choice; all can be overridden.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .core import GroundTruthImage, ObservedImage, SegmentationError
from .rng import standard_normal

MIN_SIDE = 16

# (row0, row1, col0, col1) in 1/16 units, half-open; the top-left quadrant is region 0.
_SQUARES7 = [
    (0, 8, 8, 16),     # large, top-right
    (8, 16, 0, 8),     # large, bottom-left
    (8, 12, 8, 12),    # small
    (8, 12, 12, 16),   # small, under the top-right square
    (12, 16, 8, 12),   # small, right of the bottom-left square
    (12, 16, 12, 16),  # small
]

DEFAULT_MEANS = {
    "squares7": (0.0, 2.0, 4.0, 0.3, 1.3, 3.3, 2.3),
    "rects8": (0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0),
    "freeform4": (0.0, 1.0, 2.0, 3.0),
}
TEMPLATES = tuple(DEFAULT_MEANS) + ("custom",)


def _centres(height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    v = (np.arange(height) + 0.5) / height
    u = (np.arange(width) + 0.5) / width
    return v[:, None], u[None, :]


def _squares7(height: int, width: int) -> np.ndarray:
    v, u = _centres(height, width)
    labels = np.zeros((height, width), dtype=np.int64)
    for k, (r0, r1, c0, c1) in enumerate(_SQUARES7, start=1):
        inside = (v >= r0 / 16) & (v < r1 / 16) & (u >= c0 / 16) & (u < c1 / 16)
        labels[inside] = k
    return labels


def _rects8(height: int, width: int) -> np.ndarray:
    _, u = _centres(height, width)
    strip = np.minimum((u * 8).astype(np.int64), 7)
    return np.broadcast_to(strip, (height, width)).copy()


def _freeform4(height: int, width: int) -> np.ndarray:
    v, u = _centres(height, width)
    labels = np.zeros((height, width), dtype=np.int64)
    disc = (v - 0.3) ** 2 + (u - 0.3) ** 2 < 0.18**2
    rect = (v >= 0.6) & (v < 0.85) & (u >= 0.15) & (u < 0.55)
    ell = ((v >= 0.15) & (v < 0.85) & (u >= 0.65) & (u < 0.8)) | (
        (v >= 0.7) & (v < 0.85) & (u >= 0.65) & (u < 0.95)
    )
    labels[np.broadcast_to(disc, labels.shape)] = 1
    labels[np.broadcast_to(rect, labels.shape)] = 2
    labels[np.broadcast_to(ell, labels.shape)] = 3
    return labels


_BUILDERS = {"squares7": _squares7, "rects8": _rects8, "freeform4": _freeform4}


def resample_nearest(labels: np.ndarray, height: int, width: int) -> np.ndarray:
    h, w = labels.shape
    rows = np.minimum(((np.arange(height) + 0.5) * h / height).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(width) + 0.5) * w / width).astype(np.int64), w - 1)
    return labels[np.ix_(rows, cols)]


@dataclass(frozen=True, eq=False)
class TestImageSpec:
    template: str
    width: int
    height: int
    means: Optional[Sequence[float]] = None
    labels: Optional[np.ndarray] = None  # custom template only

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise ValueError(f"unknown template {self.template!r}; choose from {TEMPLATES}")
        if self.template == "custom":
            if self.labels is None or self.means is None:
                raise ValueError("custom template needs a label map and means")
            expected = int(np.unique(np.asarray(self.labels)).size)
        else:
            expected = len(DEFAULT_MEANS[self.template])
        if self.means is not None and len(self.means) != expected:
            raise ValueError(f"{self.template} needs {expected} gray values, got {len(self.means)}")

    @property
    def region_means(self) -> Tuple[float, ...]:
        if self.means is not None:
            return tuple(float(x) for x in self.means)
        return DEFAULT_MEANS[self.template]

    @property
    def name(self) -> str:
        return self.template

    def at_side(self, side: int) -> "TestImageSpec":
        return TestImageSpec(self.template, side, side, self.means, self.labels)


def generate(spec: TestImageSpec) -> GroundTruthImage:
    if spec.template == "custom":
        labels = np.asarray(spec.labels, dtype=np.int64)
        if labels.shape != (spec.height, spec.width):
            labels = resample_nearest(labels, spec.height, spec.width)
        _, dense = np.unique(labels, return_inverse=True)
        labels = dense.reshape(labels.shape)
    else:
        if spec.width < MIN_SIDE or spec.height < MIN_SIDE:
            raise SegmentationError(
                f"{spec.template} needs at least {MIN_SIDE}x{MIN_SIDE} pixels, "
                f"got {spec.width}x{spec.height}"
            )
        labels = _BUILDERS[spec.template](spec.height, spec.width)
    means = np.asarray(spec.region_means, dtype=float)
    if np.unique(labels).size != means.size:
        raise SegmentationError("a template region vanished at this resolution")
    return GroundTruthImage(labels, means)


@dataclass(frozen=True)
class NoiseSpec:
    snr: float
    seed: int

    def __post_init__(self):
        if not self.snr > 0:
            raise ValueError("snr must be > 0")


def signal_variance(gt: GroundTruthImage) -> float:
    return float(np.var(gt.signal))


def add_noise(gt: GroundTruthImage, noise: NoiseSpec) -> ObservedImage:
    """``y = f + sigma * z`` with ``sigma = sd(f) / snr`` and ``z`` from the seeded stream."""
    var_f = signal_variance(gt)
    if var_f <= 0.0 and math.isfinite(noise.snr):
        raise ValueError("constant ground truth has var(f) = 0; snr is undefined")
    sigma = math.sqrt(var_f) / noise.snr
    z = standard_normal(noise.seed, gt.n).reshape(gt.labels.shape)
    return ObservedImage(gt.signal + sigma * z, noise_sigma=sigma)
