"""Pixel-level boundary refinement of a segmentation.

A boundary pixel is moved to an adjacent region whenever that lowers the
criterion score. Moves never disconnect the source region: a local
simple-point test on the 3x3 neighbourhood is used, which is sufficient (if
conservative) for global 4-connectivity. A region whose last pixel leaves
disappears, so the region count can only fall. Every accepted move strictly
lowers the score, hence the pass loop terminates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .core import CriterionKind, ObservedImage, Segmentation, build_ledger, canonicalize
from .criteria import LN3_HALF, rss_floor, score

# ring around a pixel, in cyclic order; consecutive entries are 4-adjacent
_RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))
_SIDES = ((-1, 0), (0, 1), (1, 0), (0, -1))


@dataclass(frozen=True)
class RefineResult:
    segmentation: Segmentation
    moves: int
    passes: int
    score_before: float
    score_after: float


def _keeps_connected(lab, h, w, i, j, a) -> bool:
    inside = []
    for di, dj in _RING:
        r, c = i + di, j + dj
        inside.append(0 <= r < h and 0 <= c < w and lab[r][c] == a)
    runs_with_side = 0
    # rotate so the scan starts just after a non-member; all-member rings are one run
    if all(inside):
        return True
    start = inside.index(False)
    in_run = False
    run_has_side = False
    for k in range(1, 9):
        idx = (start + k) % 8
        if inside[idx]:
            in_run = True
            if idx % 2 == 0:
                run_has_side = True
        elif in_run:
            runs_with_side += run_has_side
            in_run = run_has_side = False
    return runs_with_side <= 1


def refine_boundaries(img: ObservedImage, seg: Segmentation, kind=CriterionKind.MDL,
                      max_passes: int = 100) -> RefineResult:
    kind = CriterionKind.parse(kind)
    ledger = build_ledger(seg, img)
    n = img.n
    floor = rss_floor(n, ledger.max_sq)
    before = score(kind, ledger, n).value
    h, w = seg.labels.shape
    lab = seg.labels.tolist()
    y = img.values.tolist()
    area = ledger.area.astype(float).tolist()
    sums = ledger.sums.tolist()
    rss = ledger.rss()
    ln_n = math.log(n)
    log = math.log
    half_n = 0.5 * n
    mdl = kind is CriterionKind.MDL
    per_region = {CriterionKind.AIC: 2.0, CriterionKind.BIC: ln_n, CriterionKind.MDL: ln_n}[kind]
    edge_cost = 2.0 * LN3_HALF if mdl else 0.0
    moves = 0
    passes = 0

    while passes < max_passes:
        passes += 1
        grid = np.array(lab)
        edge = np.zeros((h, w), dtype=bool)
        dh = grid[:, :-1] != grid[:, 1:]
        dv = grid[:-1, :] != grid[1:, :]
        edge[:, :-1] |= dh
        edge[:, 1:] |= dh
        edge[:-1, :] |= dv
        edge[1:, :] |= dv
        moved = 0
        for i, j in zip(*np.nonzero(edge)):
            i = int(i)
            j = int(j)
            a = lab[i][j]
            yv = y[i][j]
            nbr = []
            for di, dj in _SIDES:
                r, c = i + di, j + dj
                if 0 <= r < h and 0 <= c < w:
                    nbr.append(lab[r][c])
            cands = sorted(set(nbr) - {a})
            if not cands:
                continue
            aa = area[a]
            mu_a = sums[a] / aa
            if aa > 1:
                d_out = -aa / (aa - 1.0) * (yv - mu_a) ** 2
                dm = 0
                darea_a = log(aa - 1.0) - log(aa)
            else:
                d_out = 0.0
                dm = -1
                darea_a = -log(aa)
            cross_a = sum(1 for t in nbr if t != a)
            best = None
            for b in cands:
                bb = area[b]
                d_in = bb / (bb + 1.0) * (yv - sums[b] / bb) ** 2
                new_rss = rss + d_out + d_in
                fit = half_n * log(max(new_rss, floor) / max(rss, floor))
                pen = per_region * dm
                if mdl:
                    cross_b = sum(1 for t in nbr if t != b)
                    pen += edge_cost * (cross_b - cross_a) + 0.5 * (darea_a + log(bb + 1.0) - log(bb))
                delta = fit + pen
                if delta < -1e-9 and (best is None or delta < best[0]):
                    best = (delta, b, d_in)
            if best is None:
                continue
            if aa > 1 and not _keeps_connected(lab, h, w, i, j, a):
                continue
            _, b, d_in = best
            lab[i][j] = b
            area[a] -= 1.0
            sums[a] -= yv
            area[b] += 1.0
            sums[b] += yv
            rss = max(rss + d_out + d_in, 0.0)
            moved += 1
        moves += moved
        if not moved:
            break

    out = canonicalize(Segmentation(np.array(lab)), check=False)
    after = score(kind, build_ledger(out, img), n).value
    return RefineResult(out, moves, passes, before, after)
