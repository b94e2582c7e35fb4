"""AIC, BIC and MDL scores of a segmentation, and their exact merge increments.

Scores are the raw criteria with natural logs; the ``2/n`` scaling used when
stating the estimators is monotone for fixed ``n`` and is not applied.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import CriterionKind, RegionLedger

LN3_HALF = 0.5 * math.log(3.0)
RSS_FLOOR_REL = 1e-12


class NotAdjacent(ValueError):
    pass


@dataclass(frozen=True)
class CriterionScore:
    kind: CriterionKind
    value: float
    rss: float
    m: int


def rss_floor(n: int, max_sq: float) -> float:
    """Smallest RSS admitted inside ``ln(RSS/n)``; keeps exact fits finite."""
    return n * RSS_FLOOR_REL * max(1.0, max_sq)


def penalty(kind: CriterionKind, m: int, n: int, sum_boundary: float = 0.0, sum_log_area: float = 0.0) -> float:
    kind = CriterionKind.parse(kind)
    if kind is CriterionKind.AIC:
        return 2.0 * m
    if kind is CriterionKind.BIC:
        return m * math.log(n)
    return m * math.log(n) + LN3_HALF * sum_boundary + 0.5 * sum_log_area


def fit_term(rss: float, n: int, floor: float) -> float:
    return 0.5 * n * math.log(max(rss, floor) / n)


def region_means(ledger: RegionLedger) -> np.ndarray:
    return ledger.sums / ledger.area


def score(kind, ledger: RegionLedger, n: Optional[int] = None) -> CriterionScore:
    kind = CriterionKind.parse(kind)
    n = ledger.n if n is None else n
    rss = ledger.rss()
    pen = penalty(
        kind,
        ledger.m,
        n,
        float(np.sum(ledger.boundary)),
        float(np.sum(np.log(ledger.area))),
    )
    value = pen + fit_term(rss, n, rss_floor(n, ledger.max_sq))
    return CriterionScore(kind, value, rss, ledger.m)


def merge_rss_increase(a1: float, s1: float, a2: float, s2: float) -> float:
    """Pooled-variance identity: RSS gained by fusing two regions."""
    d = s1 / a1 - s2 / a2
    return a1 * a2 / (a1 + a2) * d * d


def penalty_delta(kind: CriterionKind, n: int, a1: float, a2: float, shared: int) -> float:
    """Change of the penalty term when two regions sharing ``shared`` edges merge."""
    if kind is CriterionKind.AIC:
        return -2.0
    if kind is CriterionKind.BIC:
        return -math.log(n)
    return (
        -math.log(n)
        - 2.0 * LN3_HALF * shared
        + 0.5 * (math.log(a1 + a2) - math.log(a1) - math.log(a2))
    )


def fit_delta(rss: float, drss: float, n: int, floor: float) -> float:
    before = max(rss, floor)
    after = max(rss + drss, floor)
    if rss >= floor:
        return 0.5 * n * math.log1p(drss / rss)
    return 0.5 * n * math.log(after / before)


def merge_delta(kind, ledger: RegionLedger, a: int, b: int, n: Optional[int] = None) -> float:
    """``score(after merging a and b) - score(before)`` computed from ledger statistics."""
    kind = CriterionKind.parse(kind)
    n = ledger.n if n is None else n
    shared = ledger.shared_edges(a, b)
    if a == b or shared < 1:
        raise NotAdjacent(f"regions {a} and {b} are not adjacent")
    a1, a2 = float(ledger.area[a]), float(ledger.area[b])
    drss = merge_rss_increase(a1, float(ledger.sums[a]), a2, float(ledger.sums[b]))
    return penalty_delta(kind, n, a1, a2, shared) + fit_delta(
        ledger.rss(), drss, n, rss_floor(n, ledger.max_sq)
    )


def merged_ledger(ledger: RegionLedger, a: int, b: int) -> RegionLedger:
    """Ledger after fusing ``a`` and ``b``; the merged region keeps id ``min(a, b)``
    and ids above ``max(a, b)`` shift down by one."""
    lo, hi = min(a, b), max(a, b)
    shared = ledger.shared_edges(lo, hi)
    if lo == hi or shared < 1:
        raise NotAdjacent(f"regions {a} and {b} are not adjacent")
    keep = np.ones(ledger.m, dtype=bool)
    keep[hi] = False

    def fold(arr, extra=0):
        out = arr.copy()
        out[lo] = arr[lo] + arr[hi] + extra
        return out[keep]

    remap = np.arange(ledger.m)
    remap[hi] = lo
    remap[hi + 1 :] -= 1
    adjacency = {}
    for (p, q), e in ledger.adjacency.items():
        p2, q2 = int(remap[p]), int(remap[q])
        if p2 == q2:
            continue
        key = (min(p2, q2), max(p2, q2))
        adjacency[key] = adjacency.get(key, 0) + e
    return RegionLedger(
        area=fold(ledger.area),
        boundary=fold(ledger.boundary, -2 * shared),
        sums=fold(ledger.sums),
        sumsq=fold(ledger.sumsq),
        ssd=fold(ledger.ssd, merge_rss_increase(float(ledger.area[lo]), float(ledger.sums[lo]),
                                                float(ledger.area[hi]), float(ledger.sums[hi]))),
        adjacency=adjacency,
        frame_edges=fold(ledger.frame_edges),
        max_sq=ledger.max_sq,
    )
