"""Greedy agglomerative region merging for AIC, BIC and MDL segmentation.

Starting from an oversegmentation, the adjacent pair with the smallest score
increment is merged until one region remains, and the best-scoring visited
state with at most ``M`` regions is returned. Stale heap entries are dropped
through per-region version counters, and region membership is replayed with a
disjoint-set forest once the best step is known.

The criterion that orders the merges (``MergeConfig.order``) is separate from
the one that picks the returned state (``MergeConfig.kind``). The default
order is MDL for BIC and MDL, so both select a state of one MDL merging
procedure, and AIC for AIC. ``order=None`` ("self") always merges by the
selecting criterion's own increments; a criterion name fixes the order for
every kind.
"""
from __future__ import annotations

import csv
import heapq
import io
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .core import CriterionKind, ObservedImage, Segmentation, build_ledger, canonicalize, count_components
from .criteria import LN3_HALF, penalty, rss_floor
from .criteria import score as criterion_score

PER_PIXEL = "per-pixel"
AUTO = "auto"


def parse_init(init: Union[str, int, None]) -> Tuple[str, int]:
    """``"per-pixel"`` -> ``("per-pixel", 1)``; ``"block:K"`` -> ``("block", K)``;
    ``"auto"`` -> ``("auto", 0)``."""
    if init is None or init == PER_PIXEL:
        return PER_PIXEL, 1
    if isinstance(init, tuple):
        name, k = init
        return parse_init(f"{name}:{k}" if name == "block" else name)
    if isinstance(init, int):
        return parse_init(f"block:{init}")
    text = str(init).strip().lower()
    if text == AUTO:
        return AUTO, 0
    if text in ("pixel", "per_pixel", "perpixel"):
        return PER_PIXEL, 1
    if text.startswith("block"):
        _, _, k = text.partition(":")
        try:
            k = int(k or text[5:].strip("()"))
        except ValueError:
            raise ValueError(f"bad init {init!r}; expected block:K") from None
        if k < 1:
            raise ValueError("block side must be >= 1")
        return ("block", k) if k > 1 else (PER_PIXEL, 1)
    raise ValueError(f"unknown init {init!r}; expected per-pixel, block:K or auto")


def format_init(init) -> str:
    name, k = parse_init(init)
    return name if name in (PER_PIXEL, AUTO) else f"block:{k}"


def auto_inits(img: ObservedImage) -> List[str]:
    """Candidate oversegmentations tried by ``init="auto"``, finest first.

    Square blocks of side 2, 4, 8, ... up to a sixteenth of the shorter image
    side. Per-pixel is added in front when the image is made of flat patches
    (at most one flat 4-connected patch per four pixels), where it recovers
    the patches exactly; on noisy data a per-pixel start only reaches
    near-perfect fits with almost ``n`` regions. Images narrower than 8
    pixels use per-pixel alone.
    """
    h, w = img.shape
    side = min(h, w)
    if side < 8:
        return [PER_PIXEL]
    out = []
    k = 2
    while k <= max(2, side // 16):
        out.append(f"block:{k}")
        k *= 2
    if 4 * count_components(img.values) <= img.n:
        out.insert(0, PER_PIXEL)
    return out


DEFAULT_ORDER = "default"


def default_order(kind: CriterionKind) -> CriterionKind:
    """Merge order used by ``order="default"``: AIC merges by its own
    increments, BIC and MDL along the MDL path."""
    return CriterionKind.AIC if kind is CriterionKind.AIC else CriterionKind.MDL


def _parse_order(order) -> Union[CriterionKind, str, None]:
    if isinstance(order, str) and order.lower() == DEFAULT_ORDER:
        return DEFAULT_ORDER
    if order is None or (isinstance(order, str) and order.lower() in ("self", "own", "none")):
        return None
    return CriterionKind.parse(order)


@dataclass(frozen=True)
class MergeConfig:
    """``kind`` selects the returned state; ``order`` drives the merge sequence
    (``"default"``, ``None`` = same as ``kind``, or a fixed criterion);
    ``refine`` adds boundary-pixel refinement."""

    kind: CriterionKind = CriterionKind.MDL
    max_regions: Optional[int] = None  # None -> n
    init: str = AUTO
    order: Union[CriterionKind, str, None] = DEFAULT_ORDER
    refine: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", CriterionKind.parse(self.kind))
        object.__setattr__(self, "init", format_init(self.init))
        object.__setattr__(self, "order", _parse_order(self.order))
        if self.max_regions is not None and self.max_regions < 1:
            raise ValueError("max_regions must be >= 1")

    @property
    def merge_order(self) -> CriterionKind:
        return self.order_for(self.kind)

    def order_for(self, kind: CriterionKind) -> CriterionKind:
        if self.order == DEFAULT_ORDER:
            return default_order(kind)
        return kind if self.order is None else self.order


class MergeStep(NamedTuple):
    region_a: int
    region_b: int
    delta: float
    score: float
    m: int
    rss: float


@dataclass
class MergeTrace:
    kind: CriterionKind
    init: str
    initial_m: int
    initial_score: float
    initial_rss: float
    steps: List[MergeStep]
    best_step: int  # number of merges applied in the best state
    best_m: int
    best_score: float
    order: Optional[CriterionKind] = None  # merge-ordering criterion
    final_score: Optional[float] = None  # after refinement, when enabled
    refine_moves: int = 0

    def scores(self) -> np.ndarray:
        return np.array([self.initial_score] + [s.score for s in self.steps])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "region_a", "region_b", "delta", "score", "m"])
        for i, s in enumerate(self.steps, 1):
            w.writerow([i, s.region_a, s.region_b, repr(s.delta), repr(s.score), s.m])
        return buf.getvalue()


class DisjointSet:
    """Union-find over integer ids ``0..size-1`` with path halving."""

    def __init__(self, size: int):
        self.parent = np.arange(size, dtype=np.int64)

    def find(self, x: int) -> int:
        p = self.parent
        while p[x] != x:
            p[x] = p[p[x]]
            x = p[x]
        return int(x)

    def union(self, child: int, root: int) -> None:
        self.parent[self.find(child)] = self.find(root)

    def roots(self) -> np.ndarray:
        p = self.parent
        while True:
            nxt = p[p]
            if np.array_equal(nxt, p):
                return p.copy()
            p = nxt


def initial_segmentation(img: ObservedImage, init=PER_PIXEL) -> Segmentation:
    name, k = parse_init(init)
    h, w = img.shape
    rows = np.arange(h) // k
    cols = np.arange(w) // k
    ncols = -(-w // k)
    labels = rows[:, None] * ncols + cols[None, :]
    return Segmentation(labels)


class _Path(NamedTuple):
    merges: List[Tuple[int, int]]  # (survivor, absorbed), initial-region ids
    pairs: List[Tuple[int, int]]  # (lo, hi) as chosen
    drss: np.ndarray
    dpen: np.ndarray  # MDL penalty change per merge


def _greedy_path(ledger, n: int, kind: CriterionKind, floor: float, rekey_growth: float = 1.05) -> _Path:
    """Merge to a single region, returning the merge sequence.

    AIC and BIC change their penalty by a constant per merge, so ordering by
    the RSS increase is exactly ordering by the score increment and both share
    one path. MDL keys are full increments; they depend on the current total
    RSS, so the heap is rebuilt once that total has grown by ``rekey_growth``
    and at least an eighth of the live regions have merged since the last
    build (keeps rebuilds amortised O(1) per merge).
    """
    area = ledger.area.astype(float).tolist()
    sums = ledger.sums.tolist()
    m = len(area)
    nbrs: List[Optional[Dict[int, int]]] = [dict() for _ in range(m)]
    for (a, b), e in ledger.adjacency.items():
        nbrs[a][b] = e
        nbrs[b][a] = e
    version = [0] * m
    log = math.log
    log1p = math.log1p
    ln_n = log(n)
    half_n = 0.5 * n
    two_ln3h = 2.0 * LN3_HALF
    mdl = kind is CriterionKind.MDL
    rss = max(ledger.rss(), 0.0)

    def drss_of(a, b):
        a1 = area[a]
        a2 = area[b]
        d = sums[a] / a1 - sums[b] / a2
        return a1 * a2 / (a1 + a2) * d * d

    def mdl_key(a, b, e, r):
        a1 = area[a]
        a2 = area[b]
        d = sums[a] / a1 - sums[b] / a2
        x = a1 * a2 / (a1 + a2) * d * d
        if r >= floor:
            fit = half_n * log1p(x / r)
        else:
            after = r + x
            fit = half_n * log(after / floor) if after > floor else 0.0
        return fit - ln_n - two_ln3h * e + 0.5 * (log(a1 + a2) - log(a1) - log(a2))

    def build_heap(r):
        heap = []
        for a in range(m):
            na = nbrs[a]
            if na is None:
                continue
            va = version[a]
            for b, e in na.items():
                if b > a:
                    key = mdl_key(a, b, e, r) if mdl else drss_of(a, b)
                    heap.append((key, a, b, va, version[b]))
        heapq.heapify(heap)
        return heap

    heap = build_heap(rss)
    built_at = max(rss, floor)
    built_step = 0
    merges: List[Tuple[int, int]] = []
    pairs: List[Tuple[int, int]] = []
    drss_list: List[float] = []
    dpen_list: List[float] = []
    heappush = heapq.heappush
    heappop = heapq.heappop

    while heap:
        _, a, b, va, vb = heappop(heap)
        if version[a] != va or version[b] != vb:
            continue
        na, nb = nbrs[a], nbrs[b]
        e = na[b]
        x = drss_of(a, b)
        a1, a2 = area[a], area[b]
        dpen_list.append(-ln_n - two_ln3h * e + 0.5 * (log(a1 + a2) - log(a1) - log(a2)))
        pairs.append((a, b))
        drss_list.append(x)
        # fold the region with fewer neighbours into the other
        if len(na) >= len(nb):
            keep, gone, nk, ng = a, b, na, nb
        else:
            keep, gone, nk, ng = b, a, nb, na
        merges.append((keep, gone))
        area[keep] = a1 + a2
        sums[keep] = sums[a] + sums[b]
        del nk[gone]
        del ng[keep]
        for t, et in ng.items():
            nk[t] = nk.get(t, 0) + et
            nt = nbrs[t]
            del nt[gone]
            nt[keep] = nk[t]
        nbrs[gone] = None
        version[gone] = -1
        version[keep] += 1
        rss += x

        if mdl and max(rss, floor) > rekey_growth * built_at and 8 * (len(merges) - built_step) >= m - len(merges):
            heap = build_heap(rss)
            built_at = max(rss, floor)
            built_step = len(merges)
            continue
        vk = version[keep]
        for t, et in nk.items():
            key = mdl_key(keep, t, et, rss) if mdl else drss_of(keep, t)
            if keep < t:
                heappush(heap, (key, keep, t, vk, version[t]))
            else:
                heappush(heap, (key, t, keep, version[t], vk))

    return _Path(merges, pairs, np.array(drss_list, dtype=float), np.array(dpen_list, dtype=float))


def _trace_for(kind: CriterionKind, path: _Path, ledger, n: int, floor: float, init: str,
               max_regions: Optional[int], order: Optional[CriterionKind] = None) -> MergeTrace:
    m0 = ledger.m
    rss0 = max(ledger.rss(), 0.0)
    score0 = penalty(
        kind, m0, n, float(np.sum(ledger.boundary)), float(np.sum(np.log(ledger.area)))
    ) + 0.5 * n * math.log(max(rss0, floor) / n)
    if kind is CriterionKind.MDL:
        dpen = path.dpen
    elif kind is CriterionKind.BIC:
        dpen = np.full(path.drss.size, -math.log(n))
    else:
        dpen = np.full(path.drss.size, -2.0)
    rss = rss0 + np.cumsum(path.drss)
    before = np.maximum(np.concatenate([[rss0], rss[:-1]]), floor)
    after = np.maximum(rss, floor)
    with np.errstate(divide="ignore"):
        dfit = 0.5 * n * np.where(before > floor, np.log1p(path.drss / before), np.log(after / before))
    delta = dpen + dfit
    scores = score0 + np.cumsum(delta)
    ms = m0 - np.arange(1, delta.size + 1)

    all_scores = np.concatenate([[score0], scores])
    all_m = np.concatenate([[m0], ms])
    limit = n if max_regions is None else max_regions
    allowed = all_m <= limit
    if not allowed.any():
        allowed = all_m == all_m.min()
    masked = np.where(allowed, all_scores, np.inf)
    best = int(np.argmin(masked))  # first minimum: fewest merges among ties
    steps = [
        MergeStep(int(p[0]), int(p[1]), float(d), float(s), int(mm), float(r))
        for p, d, s, mm, r in zip(path.pairs, delta, scores, ms, rss)
    ]
    return MergeTrace(
        kind=kind,
        init=init,
        initial_m=m0,
        initial_score=float(score0),
        initial_rss=float(rss0),
        steps=steps,
        best_step=best,
        best_m=int(all_m[best]),
        best_score=float(all_scores[best]),
        order=order,
        final_score=float(all_scores[best]),
    )


def _labels_after(init_seg: Segmentation, merges: Sequence[Tuple[int, int]], nsteps: int) -> Segmentation:
    ds = DisjointSet(init_seg.m)
    for keep, gone in merges[:nsteps]:
        ds.parent[gone] = keep
    roots = ds.roots()
    return canonicalize(Segmentation(roots[init_seg.labels]), check=False)


class _Run(NamedTuple):
    init: str
    init_seg: Segmentation
    ledger: object
    floor: float
    path: _Path


def _run_path(img: ObservedImage, init: str, order: CriterionKind) -> _Run:
    init_seg = initial_segmentation(img, init)
    ledger = build_ledger(init_seg, img)
    floor = rss_floor(img.n, ledger.max_sq)
    return _Run(init, init_seg, ledger, floor, _greedy_path(ledger, img.n, order, floor))


def _select(img: ObservedImage, run: _Run, kind: CriterionKind, max_regions, order) -> Tuple[Segmentation, MergeTrace]:
    trace = _trace_for(kind, run.path, run.ledger, img.n, run.floor, run.init, max_regions, order)
    return _labels_after(run.init_seg, run.path.merges, trace.best_step), trace


def _best_run(img: ObservedImage, inits: Sequence[str], order: CriterionKind, max_regions) -> _Run:
    """Run the ``order`` path from every init and keep the one whose selected
    partition has the lowest from-scratch ``order`` score.

    Exact ties (in practice: the same partition reached from several inits)
    go to the init listed last, the coarsest, whose path offers the fewest
    small spurious regions to the other criteria."""
    best = None
    for init in inits:
        run = _run_path(img, init, order)
        if len(inits) == 1:
            return run
        seg, _ = _select(img, run, order, max_regions, order)
        value = criterion_score(order, build_ledger(seg, img), img.n).value
        if best is None or value <= best[0]:
            best = (value, run)
    return best[1]


def _refined(img: ObservedImage, seg: Segmentation, trace: MergeTrace, kind: CriterionKind,
             order: CriterionKind, max_regions, max_rounds: int = 4) -> Segmentation:
    """Alternate boundary refinement with re-merging from the refined partition
    while the ``kind`` score keeps falling."""
    from .refine import refine_boundaries

    current = criterion_score(kind, build_ledger(seg, img), img.n).value
    moves = 0
    for _ in range(max_rounds):
        res = refine_boundaries(img, seg, kind)
        if res.moves == 0:
            break
        moves += res.moves
        seg, current = res.segmentation, res.score_after
        ledger = build_ledger(seg, img)
        floor = rss_floor(img.n, ledger.max_sq)
        run = _Run(trace.init, seg, ledger, floor, _greedy_path(ledger, img.n, order, floor))
        merged, mtrace = _select(img, run, kind, max_regions, order)
        if mtrace.best_step == 0 or not mtrace.best_score < current:
            break
        seg, current = merged, criterion_score(kind, build_ledger(merged, img), img.n).value
    trace.final_score = float(current)
    trace.refine_moves = moves
    return seg


def segment_criteria(img: ObservedImage, kinds: Iterable, cfg: Optional[MergeConfig] = None,
                     **overrides) -> Dict[CriterionKind, Tuple[Segmentation, MergeTrace]]:
    """Segment one image under several criteria, sharing merge paths.

    Criteria with the same merge order select along one shared path; with
    ``init="auto"`` that path is the one (over :func:`auto_inits`) whose
    partition selected by the ordering criterion scores lowest. ``overrides``
    replace fields of ``cfg``.
    """
    cfg = cfg or MergeConfig()
    if overrides:
        fields = dict(kind=cfg.kind, max_regions=cfg.max_regions, init=cfg.init, order=cfg.order, refine=cfg.refine)
        fields.update(overrides)
        cfg = MergeConfig(**fields)
    kinds = [CriterionKind.parse(k) for k in kinds]
    inits = auto_inits(img) if cfg.init == AUTO else [cfg.init]
    runs: Dict[CriterionKind, _Run] = {}
    out = {}
    for kind in kinds:
        order = cfg.order_for(kind)
        if order not in runs:
            runs[order] = _best_run(img, inits, order, cfg.max_regions)
        seg, trace = _select(img, runs[order], kind, cfg.max_regions, order)
        if cfg.refine:
            seg = _refined(img, seg, trace, kind, order, cfg.max_regions)
        out[kind] = (seg, trace)
    return out


def segment(img: ObservedImage, cfg: Optional[MergeConfig] = None) -> Tuple[Segmentation, MergeTrace]:
    cfg = cfg or MergeConfig()
    return segment_criteria(img, [cfg.kind], cfg)[cfg.kind]


def segment_best_of(img: ObservedImage, cfg: MergeConfig, inits: Sequence) -> Tuple[Segmentation, MergeTrace]:
    """Run :func:`segment` from each init and keep the lowest-scoring result.

    Results are compared on from-scratch ``cfg.kind`` scores of the returned
    partitions; exact ties go to the init listed first.
    """
    if not inits:
        raise ValueError("inits must be non-empty")
    best = None
    for init in inits:
        seg, trace = segment(img, MergeConfig(cfg.kind, cfg.max_regions, init, cfg.order, cfg.refine))
        value = criterion_score(cfg.kind, build_ledger(seg, img), img.n).value
        if best is None or value < best[0]:
            best = (value, seg, trace)
    return best[1], best[2]
