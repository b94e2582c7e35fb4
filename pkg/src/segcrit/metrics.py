"""Evaluation of a segmentation against the planted truth.

``mse`` is the total squared error of the fitted piecewise-constant image
(divide by ``n`` for the per-pixel mean used in MSE tables). The partition
distance pairs regions by canonical index, so it measures disagreement of the
first-pixel-ordered region lists rather than an optimal matching.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .core import DimensionMismatch, GroundTruthImage, ObservedImage, Segmentation, canonicalize


@dataclass(frozen=True)
class EvalReport:
    m_hat: int
    mse: float  # total over pixels
    mse_ratio: Optional[float]  # sqrt(mse / n) / sigma, None when sigma unknown
    symdiff_frac: float
    rss: float


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes differ: {a.shape} vs {b.shape}")


def fitted_image(seg: Segmentation, img: ObservedImage) -> np.ndarray:
    """Each pixel replaced by the mean of its region."""
    _check_dims(seg.labels, img.values)
    flat = seg.labels.ravel()
    first, inv = np.unique(flat, return_index=True, return_inverse=True)[1:]
    y = img.values.ravel()
    ref = y[first]  # averaging offsets from one region pixel keeps constant regions exact
    means = ref + np.bincount(inv, weights=y - ref[inv]) / np.bincount(inv)
    return means[inv].reshape(seg.labels.shape)


def mse(gt: GroundTruthImage, seg: Segmentation, img: ObservedImage) -> float:
    """Total squared error ``sum_i (f_i - fhat_i)^2``, accumulated with ``math.fsum``."""
    _check_dims(gt.labels, seg.labels)
    _check_dims(gt.labels, img.values)
    err = (gt.signal - fitted_image(seg, img)).ravel()
    return math.fsum((err * err).tolist())


def symdiff_distance(gt: GroundTruthImage, seg: Segmentation) -> float:
    """Fraction of pixels in the union of ``R0_k xor Rhat_k`` over ``k < min(m, m0)``.

    Both partitions are put in canonical order first; a pixel counts when its
    truth and estimated canonical ids differ and at least one of them is
    below ``min(m, m0)``.
    """
    _check_dims(gt.labels, seg.labels)
    g = canonicalize(gt.labels, check=False).labels
    s = canonicalize(seg, check=False).labels
    k = min(int(g.max()) + 1, int(s.max()) + 1)
    hit = (g != s) & ((g < k) | (s < k))
    return float(np.count_nonzero(hit)) / g.size


def evaluate(gt: GroundTruthImage, seg: Segmentation, img: ObservedImage,
             sigma: Optional[float] = None) -> EvalReport:
    total = mse(gt, seg, img)
    sigma = img.noise_sigma if sigma is None else sigma
    ratio = math.sqrt(total / img.n) / sigma if sigma else None
    resid = img.values - fitted_image(seg, img)
    rss = math.fsum((resid.ravel() ** 2).tolist())
    return EvalReport(seg.m, total, ratio, symdiff_distance(gt, seg), rss)


@dataclass(frozen=True)
class MhatTable:
    """Counts of ``m_hat`` per bin; ``labels`` run ``"<lo"``, ``lo``..``hi-1``, ``"hi+"``."""

    labels: List[str]
    counts: List[int]

    def as_dict(self) -> Dict[str, int]:
        return dict(zip(self.labels, self.counts))

    @property
    def total(self) -> int:
        return sum(self.counts)


def bin_labels(lo: int, hi: int) -> List[str]:
    return [f"<{lo}"] + [str(v) for v in range(lo, hi)] + [f"{hi}+"]


def tabulate_mhat(records: Iterable, lo: int = 3, hi: int = 10) -> MhatTable:
    """Frequency of ``m_hat`` with an overflow bin ``hi+`` and an underflow bin
    ``<lo`` so the counts always add up to the number of records.

    ``records`` may hold objects with an ``m_hat`` attribute or plain ints.
    """
    if hi <= lo:
        raise ValueError("need lo < hi")
    values = [int(getattr(r, "m_hat", r)) for r in records]
    labels = bin_labels(lo, hi)
    counts = Counter()
    for v in values:
        if v < lo:
            counts[labels[0]] += 1
        elif v >= hi:
            counts[labels[-1]] += 1
        else:
            counts[str(v)] += 1
    return MhatTable(labels, [counts[b] for b in labels])
