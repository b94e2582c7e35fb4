"""Exhaustive minimisation over all connected partitions of a tiny grid.

Partitions are enumerated as restricted growth strings over the pixels in
row-major order, so each partition appears once, already in canonical
first-pixel label order, and the stream is sorted lexicographically. A branch
is cut as soon as some label has a finished piece (no unassigned 4-neighbour
left) while other pixels of the same label lie elsewhere.

Scores are computed here directly from the label arrays, independently of
:mod:`segcrit.criteria`, so the oracle doubles as a check on that module.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, List

import numpy as np

from .core import CriterionKind, ObservedImage, Segmentation

MAX_PIXELS = 12


class OracleTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class OracleResult:
    best: Segmentation
    best_score: float
    partitions_evaluated: int


def _check_size(width: int, height: int) -> None:
    if width < 1 or height < 1:
        raise ValueError("grid sides must be >= 1")
    if width * height > MAX_PIXELS:
        raise OracleTooLarge(f"{width}x{height} grid has {width * height} pixels; the oracle handles at most {MAX_PIXELS}")


def _neighbours(width: int, height: int) -> List[List[int]]:
    out = []
    for p in range(width * height):
        r, c = divmod(p, width)
        nb = []
        if r > 0:
            nb.append(p - width)
        if c > 0:
            nb.append(p - 1)
        if c + 1 < width:
            nb.append(p + 1)
        if r + 1 < height:
            nb.append(p + width)
        out.append(nb)
    return out


def _viable(lab: List[int], k: int, nbrs: List[List[int]]) -> bool:
    """Pixels ``0..k`` are assigned; can every label still end up connected?"""
    seen = [False] * (k + 1)
    for start in range(k + 1):
        if seen[start]:
            continue
        label = lab[start]
        stack = [start]
        seen[start] = True
        size = 0
        open_piece = False
        while stack:
            p = stack.pop()
            size += 1
            for q in nbrs[p]:
                if q > k:
                    open_piece = True
                elif not seen[q] and lab[q] == label:
                    seen[q] = True
                    stack.append(q)
        if not open_piece:
            total = sum(1 for p in range(k + 1) if lab[p] == label)
            if total != size:
                return False
    return True


@lru_cache(maxsize=32)
def _partition_table(width: int, height: int) -> np.ndarray:
    _check_size(width, height)
    n = width * height
    nbrs = _neighbours(width, height)
    lab = [0] * n
    rows = []

    def extend(k: int, top: int) -> None:
        if k == n:
            # every piece is closed now, so viability already implies connectivity
            rows.append(list(lab))
            return
        for label in range(top + 2):
            lab[k] = label
            if _viable(lab, k, nbrs):
                extend(k + 1, max(top, label))

    lab[0] = 0
    if _viable(lab, 0, nbrs):
        extend(1, 0)
    table = np.array(rows, dtype=np.int64).reshape(len(rows), n)
    table.setflags(write=False)
    return table


def count_partitions(width: int, height: int) -> int:
    return int(_partition_table(width, height).shape[0])


def enumerate_partitions(width: int, height: int) -> Iterator[Segmentation]:
    """Every partition of a ``height x width`` grid into 4-connected regions,
    once each, canonical labels, lexicographic order."""
    for row in _partition_table(width, height):
        yield Segmentation(row.reshape(height, width))


def partition_scores(img: ObservedImage, kind) -> np.ndarray:
    """Criterion value of every enumerated partition, in enumeration order."""
    kind = CriterionKind.parse(kind)
    h, w = img.shape
    table = _partition_table(w, h)
    n = h * w
    y = img.values.ravel()
    onehot = table[:, :, None] == np.arange(n)[None, None, :]  # (P, pixel, label)
    area = onehot.sum(axis=1).astype(float)
    sums = np.einsum("pil,i->pl", onehot, y)
    used = area > 0
    safe = np.where(used, area, 1.0)
    fitted = np.einsum("pil,pl->pi", onehot, sums / safe)
    rss = ((y[None, :] - fitted) ** 2).sum(axis=1)
    m = used.sum(axis=1).astype(float)

    grid = table.reshape(-1, h, w)
    cuts = (grid[:, :, 1:] != grid[:, :, :-1]).sum(axis=(1, 2)) + (grid[:, 1:, :] != grid[:, :-1, :]).sum(axis=(1, 2))
    perimeter = 2.0 * cuts + 2.0 * (h + w)  # sum of region boundary lengths incl. frame
    log_area = np.where(used, np.log(safe), 0.0).sum(axis=1)

    floor = n * 1e-12 * max(1.0, float(np.max(y * y)))
    fit = 0.5 * n * np.log(np.maximum(rss, floor) / n)
    if kind is CriterionKind.AIC:
        return 2.0 * m + fit
    if kind is CriterionKind.BIC:
        return m * math.log(n) + fit
    return m * math.log(n) + 0.5 * math.log(3.0) * perimeter + 0.5 * log_area + fit


def brute_force_segment(img: ObservedImage, kind) -> OracleResult:
    """Exact argmin of the criterion over all connected partitions; the first
    partition in lexicographic order wins exact ties."""
    h, w = img.shape
    _check_size(w, h)
    scores = partition_scores(img, kind)
    best = int(np.argmin(scores))
    table = _partition_table(w, h)
    return OracleResult(Segmentation(table[best].reshape(h, w)), float(scores[best]), int(scores.size))
