"""Shared domain types: images, segmentations and per-region sufficient statistics.

All label maps are 2-D integer arrays of shape ``(height, width)`` stored in
row-major order. Regions are 4-connected and adjacency is measured in shared
4-neighbour pixel edges.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


class SegmentationError(ValueError):
    """Malformed label map (disconnected or empty regions, bad shape)."""


class DimensionMismatch(ValueError):
    pass


class CriterionKind(str, Enum):
    AIC = "aic"
    BIC = "bic"
    MDL = "mdl"

    @classmethod
    def parse(cls, value) -> "CriterionKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown criterion {value!r}; expected aic, bic or mdl") from None

    def __str__(self) -> str:
        return self.name


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _as_label_grid(labels) -> np.ndarray:
    lab = np.array(labels, dtype=np.int64, copy=True)
    if lab.ndim == 1:
        lab = lab[None, :]
    if lab.ndim != 2 or lab.size == 0:
        raise SegmentationError(f"label map must be a non-empty 2-D grid, got shape {lab.shape}")
    return lab


def count_components(labels: np.ndarray) -> int:
    """Number of 4-connected components of equal-label pixels."""
    h, w = labels.shape
    idx = np.arange(h * w).reshape(h, w)
    same_h = labels[:, :-1] == labels[:, 1:]
    same_v = labels[:-1, :] == labels[1:, :]
    src = np.concatenate([idx[:, :-1][same_h], idx[:-1, :][same_v]])
    dst = np.concatenate([idx[:, 1:][same_h], idx[1:, :][same_v]])
    graph = coo_matrix((np.ones(src.size, dtype=np.int8), (src, dst)), shape=(h * w, h * w))
    ncomp, _ = connected_components(graph, directed=False)
    return int(ncomp)


def _first_occurrence_relabel(labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Relabel so ids follow row-major first-pixel order.

    Returns the new grid and ``order`` where ``order[new_id] = old_id``.
    """
    flat = labels.ravel()
    uniq, first, inverse = np.unique(flat, return_index=True, return_inverse=True)
    rank = np.empty(uniq.size, dtype=np.int64)
    by_first = np.argsort(first, kind="stable")
    rank[by_first] = np.arange(uniq.size)
    return rank[inverse].reshape(labels.shape), uniq[by_first]


@dataclass(frozen=True, eq=False)
class Segmentation:
    """Pixel -> region label map.

    Construct through :func:`canonicalize` (or :meth:`from_labels`) to get the
    canonical first-pixel ordering; the raw constructor accepts any integers.
    """

    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "labels", _readonly(_as_label_grid(self.labels)))

    @classmethod
    def from_labels(cls, labels, check: bool = True) -> "Segmentation":
        return canonicalize(cls(labels), check=check)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def m(self) -> int:
        return int(np.unique(self.labels).size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Segmentation):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)

    def __hash__(self) -> int:
        return hash((self.labels.shape, self.labels.tobytes()))

    def __repr__(self) -> str:
        return f"Segmentation({self.height}x{self.width}, m={self.m})"


def canonicalize(seg, check: bool = True) -> Segmentation:
    """Return an equivalent segmentation whose ids follow first-pixel order.

    Raises :class:`SegmentationError` if any label is split into several
    4-connected pieces (``check=False`` skips this test for callers that build
    regions by merging adjacent ones).
    """
    labels = seg.labels if isinstance(seg, Segmentation) else _as_label_grid(seg)
    relabeled, _ = _first_occurrence_relabel(labels)
    if check:
        m = int(relabeled.max()) + 1
        ncomp = count_components(relabeled)
        if ncomp != m:
            raise SegmentationError(
                f"label map has {m} labels but {ncomp} connected components; "
                "every region must be 4-connected"
            )
    return Segmentation(relabeled)


@dataclass(frozen=True, eq=False)
class ObservedImage:
    """Noisy gray values ``y`` on a ``height x width`` grid."""

    values: np.ndarray
    noise_sigma: Optional[float] = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.size == 0:
            raise ValueError(f"image values must be a non-empty 2-D grid, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("image values must all be finite")
        if self.noise_sigma is not None and self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class GroundTruthImage:
    """Piecewise-constant truth: a canonical label map plus one gray value per region."""

    labels: np.ndarray
    means: np.ndarray

    def __post_init__(self):
        seg = Segmentation(self.labels)
        means = np.array(self.means, dtype=np.float64, copy=True).ravel()
        relabeled, order = _first_occurrence_relabel(seg.labels)
        m = order.size
        if means.size != m or not np.array_equal(np.sort(order), np.arange(m)):
            raise SegmentationError(
                f"ground truth needs labels exactly 0..{means.size - 1}, "
                f"got {m} distinct labels {order[:10].tolist()}..."
            )
        if count_components(relabeled) != m:
            raise SegmentationError("every ground-truth region must be 4-connected")
        object.__setattr__(self, "labels", _readonly(relabeled))
        object.__setattr__(self, "means", _readonly(means[order]))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def m(self) -> int:
        return self.means.size

    @property
    def signal(self) -> np.ndarray:
        """The true image ``f`` as a float grid."""
        return self.means[self.labels]

    def segmentation(self) -> Segmentation:
        return Segmentation(self.labels)

    def observe(self) -> ObservedImage:
        """Noise-free observation ``y = f``."""
        return ObservedImage(self.signal, noise_sigma=0.0)


@dataclass(frozen=True, eq=False)
class RegionLedger:
    """Per-region sufficient statistics plus the region adjacency graph.

    ``adjacency`` maps ``(lo, hi)`` region pairs (``lo < hi``) to the number of
    4-neighbour pixel pairs straddling the two regions. ``boundary`` counts a
    region's boundary pixel edges, frame edges included. ``ssd`` holds each
    region's centred sum of squares, kept separately from ``sumsq`` because
    ``sumsq - sums**2 / area`` cancels badly when a region is nearly flat.
    """

    area: np.ndarray
    boundary: np.ndarray
    sums: np.ndarray
    sumsq: np.ndarray
    ssd: np.ndarray
    adjacency: Dict[Tuple[int, int], int]
    frame_edges: np.ndarray
    max_sq: float = 0.0

    @property
    def m(self) -> int:
        return self.area.size

    @property
    def n(self) -> int:
        return int(self.area.sum())

    def region_rss(self) -> np.ndarray:
        return self.ssd

    def rss(self) -> float:
        return float(np.sum(self.region_rss()))

    def shared_edges(self, a: int, b: int) -> int:
        return self.adjacency.get((min(a, b), max(a, b)), 0)


def frame_edge_counts(height: int, width: int) -> np.ndarray:
    """Per-pixel number of sides lying on the image frame."""
    fe = np.zeros((height, width), dtype=np.int64)
    fe[0, :] += 1
    fe[-1, :] += 1
    fe[:, 0] += 1
    fe[:, -1] += 1
    return fe


def adjacency_arrays(labels: np.ndarray, m: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Region pairs ``(lo, hi)`` with their shared-edge counts, sorted by ``(lo, hi)``."""
    pairs = []
    for a, b in ((labels[:, :-1], labels[:, 1:]), (labels[:-1, :], labels[1:, :])):
        diff = a != b
        pairs.append(np.stack([a[diff], b[diff]]))
    ab = np.concatenate(pairs, axis=1)
    lo = np.minimum(ab[0], ab[1])
    hi = np.maximum(ab[0], ab[1])
    code, counts = np.unique(lo * m + hi, return_counts=True)
    return code // m, code % m, counts


def build_ledger(seg: Segmentation, img: ObservedImage) -> RegionLedger:
    if seg.labels.shape != img.values.shape:
        raise DimensionMismatch(f"segmentation {seg.labels.shape} vs image {img.values.shape}")
    labels = seg.labels
    m = int(labels.max()) + 1
    flat = labels.ravel()
    y = img.values.ravel()
    area = np.bincount(flat, minlength=m)
    if np.any(area == 0):
        raise SegmentationError("labels must be dense 0..m-1 with no empty region")
    sums = np.bincount(flat, weights=y, minlength=m)
    sumsq = np.bincount(flat, weights=y * y, minlength=m)
    resid = y - (sums / area)[flat]
    ssd = np.bincount(flat, weights=resid * resid, minlength=m)
    frame = np.bincount(flat, weights=frame_edge_counts(*labels.shape).ravel(), minlength=m)
    frame = frame.astype(np.int64)

    lo, hi, counts = adjacency_arrays(labels, m)
    boundary = frame + np.bincount(lo, weights=counts, minlength=m).astype(np.int64)
    boundary += np.bincount(hi, weights=counts, minlength=m).astype(np.int64)
    adjacency = dict(zip(zip(lo.tolist(), hi.tolist()), counts.tolist()))
    return RegionLedger(
        area=_readonly(area.astype(np.int64)),
        boundary=_readonly(boundary),
        sums=_readonly(sums),
        sumsq=_readonly(sumsq),
        ssd=_readonly(ssd),
        adjacency=adjacency,
        frame_edges=_readonly(frame),
        max_sq=float(np.max(y * y)),
    )


def format_label_text(labels: np.ndarray) -> str:
    return "".join(" ".join(str(int(v)) for v in row) + "\n" for row in np.asarray(labels))


def parse_label_text(text: str) -> np.ndarray:
    rows = [line.split() for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")]
    if not rows:
        raise SegmentationError("empty label grid")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise SegmentationError("label grid rows have unequal lengths")
    return np.array([[int(v) for v in r] for r in rows], dtype=np.int64)
