"""Monte Carlo sweeps over (image, snr, size, criterion) with replicates.

Each (image, snr, size) *cell* and replicate gets its own noise seed,
``derive_seed(base_seed, cell_index, replicate)``. All criteria are scored on
the same noisy replicate (a paired design), and one task segments that
replicate under every requested criterion. Tasks may run in a process pool;
records are appended to a JSON-lines log by the parent process only, and the
tables are built from the sorted records, so output does not depend on worker
count or completion order. Re-running with an existing log skips the tasks
already recorded there.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import CriterionKind, parse_label_text
from .merge import MergeConfig, segment_criteria
from .metrics import bin_labels, evaluate, tabulate_mhat
from .rng import derive_seed
from .synth import NoiseSpec, TestImageSpec, add_noise, generate

LOG_NAME = "trials.jsonl"


class CellError(RuntimeError):
    """A replicate failed; the message names its coordinates."""


@dataclass(frozen=True)
class ExperimentConfig:
    specs: Tuple[TestImageSpec, ...]
    snrs: Tuple[float, ...]
    sizes: Tuple[int, ...]
    criteria: Tuple[CriterionKind, ...] = tuple(CriterionKind)
    reps: int = 50
    base_seed: int = 20240601
    optimizer: MergeConfig = field(default_factory=MergeConfig)
    parallelism: int = 1
    mhat_bins: Tuple[int, int] = (3, 10)

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        object.__setattr__(self, "snrs", tuple(float(s) for s in self.snrs))
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "criteria", tuple(CriterionKind.parse(c) for c in self.criteria))
        for name in ("specs", "snrs", "sizes", "criteria"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be non-empty")
        if len(set(self.criteria)) != len(self.criteria):
            raise ValueError("criteria must be distinct")
        if any(not s > 0 for s in self.snrs):
            raise ValueError("snrs must be positive")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    def spec_ids(self) -> List[str]:
        names = [s.name for s in self.specs]
        return [n if names.count(n) == 1 else f"{n}#{i}" for i, n in enumerate(names)]

    def cells(self) -> List[Tuple[int, int, int]]:
        """(spec index, snr index, size index) in sweep order."""
        return [
            (a, b, c)
            for a in range(len(self.specs))
            for b in range(len(self.snrs))
            for c in range(len(self.sizes))
        ]

    def fingerprint(self) -> str:
        """Stable digest of everything that affects the records."""
        doc = config_to_dict(self)
        doc.pop("parallelism")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def desk_preset(**overrides) -> ExperimentConfig:
    """Scaled-down sweep: three templates, snr 1/2/4, sides 32/64/128, 50 reps."""
    fields = dict(
        specs=[TestImageSpec(t, 64, 64) for t in ("squares7", "rects8", "freeform4")],
        snrs=[1.0, 2.0, 4.0],
        sizes=[32, 64, 128],
        reps=50,
    )
    fields.update(overrides)
    return ExperimentConfig(**fields)


@dataclass(frozen=True)
class TrialRecord:
    spec: str
    snr: float
    side: int
    criterion: str
    replicate: int
    seed: int
    sigma: float
    m_true: int
    m_hat: int
    mse: float
    mse_ratio: float
    symdiff_frac: float
    score: float
    wall_time: float = 0.0  # seconds for the whole replicate (all criteria)

    @property
    def n(self) -> int:
        return self.side * self.side

    def key(self, cfg: ExperimentConfig) -> tuple:
        return (
            cfg.spec_ids().index(self.spec),
            cfg.snrs.index(self.snr),
            cfg.sizes.index(self.side),
            [c.value for c in cfg.criteria].index(self.criterion),
            self.replicate,
        )


# ---------------------------------------------------------------- config I/O


def _spec_to_dict(spec: TestImageSpec) -> dict:
    d = {"template": spec.template}
    if spec.means is not None:
        d["means"] = [float(x) for x in spec.means]
    if spec.labels is not None:
        d["labels"] = np.asarray(spec.labels).tolist()
    return d


def _spec_from(obj) -> TestImageSpec:
    if isinstance(obj, TestImageSpec):
        return obj
    if isinstance(obj, str):
        obj = {"template": obj}
    template = obj["template"]
    labels = obj.get("labels")
    if template.startswith("custom:"):
        labels = parse_label_text(Path(template[7:]).read_text())
        template = "custom"
    elif "labels_path" in obj:
        labels = parse_label_text(Path(obj["labels_path"]).read_text())
    means = obj.get("means")
    if template == "custom" and labels is not None:
        labels = np.asarray(labels)
        if means is None:
            means = list(range(int(np.unique(labels).size)))
        h, w = labels.shape
        return TestImageSpec("custom", w, h, means, labels)
    return TestImageSpec(template, 64, 64, means, None)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    opt = cfg.optimizer
    return {
        "specs": [_spec_to_dict(s) for s in cfg.specs],
        "snrs": list(cfg.snrs),
        "sizes": list(cfg.sizes),
        "criteria": [c.value for c in cfg.criteria],
        "reps": cfg.reps,
        "base_seed": cfg.base_seed,
        "optimizer": {
            "init": opt.init,
            "max_regions": opt.max_regions,
            "order": "self" if opt.order is None else getattr(opt.order, "value", opt.order),
            "refine": opt.refine,
        },
        "parallelism": cfg.parallelism,
        "mhat_bins": list(cfg.mhat_bins),
    }


def _split(value: str) -> List[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _truthy(value) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ("1", "true", "yes", "on")


def config_from_dict(doc: dict) -> ExperimentConfig:
    known = {"specs", "snrs", "sizes", "criteria", "reps", "base_seed", "optimizer", "parallelism", "mhat_bins",
             "init", "max_regions", "order", "refine"}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    opt = dict(doc.get("optimizer") or {})
    for k in ("init", "max_regions", "order", "refine"):
        if k in doc:
            opt[k] = doc[k]
    max_regions = opt.get("max_regions")
    optimizer = MergeConfig(
        init=opt.get("init", "auto"),
        max_regions=None if max_regions in (None, "", "none", "n") else int(max_regions),
        order=opt.get("order", "default"),
        refine=_truthy(opt.get("refine", False)),
    )
    fields = {"optimizer": optimizer}
    if "specs" in doc:
        fields["specs"] = [_spec_from(s) for s in doc["specs"]]
    for k in ("snrs", "sizes", "criteria"):
        if k in doc:
            fields[k] = doc[k]
    for k in ("reps", "base_seed", "parallelism"):
        if k in doc:
            fields[k] = int(doc[k])
    if "mhat_bins" in doc:
        fields["mhat_bins"] = tuple(int(v) for v in doc["mhat_bins"])
    if "specs" not in fields:
        raise ValueError("config needs specs")
    for k in ("snrs", "sizes"):
        if k not in fields:
            raise ValueError(f"config needs {k}")
    return ExperimentConfig(**fields)


def parse_config_text(text: str) -> ExperimentConfig:
    """JSON document, or flat ``key = value`` lines with comma-separated lists."""
    stripped = text.strip()
    if stripped.startswith("{"):
        return config_from_dict(json.loads(stripped))
    doc: Dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in ("specs", "criteria"):
            doc[key] = _split(value)
        elif key in ("snrs",):
            doc[key] = [float(v) for v in _split(value)]
        elif key in ("sizes", "mhat_bins"):
            doc[key] = [int(v) for v in _split(value)]
        else:
            doc[key] = value
    return config_from_dict(doc)


def load_config(path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text())


# ---------------------------------------------------------------- running


def replicate_seed(base_seed: int, cell_index: int, replicate: int) -> int:
    return derive_seed(base_seed, cell_index, replicate)


@dataclass(frozen=True)
class _Task:
    spec_id: str
    spec: TestImageSpec
    snr: float
    side: int
    cell_index: int
    replicate: int
    seed: int
    criteria: Tuple[CriterionKind, ...]
    optimizer: MergeConfig


def _tasks(cfg: ExperimentConfig) -> List[_Task]:
    ids = cfg.spec_ids()
    out = []
    for ci, (a, b, c) in enumerate(cfg.cells()):
        for r in range(cfg.reps):
            out.append(
                _Task(ids[a], cfg.specs[a], cfg.snrs[b], cfg.sizes[c], ci, r,
                      replicate_seed(cfg.base_seed, ci, r), cfg.criteria, cfg.optimizer)
            )
    return out


def run_task(task: _Task) -> List[TrialRecord]:
    where = f"spec={task.spec_id} snr={task.snr:g} side={task.side} replicate={task.replicate}"
    stage = "generate"
    try:
        t0 = time.perf_counter()
        gt = generate(task.spec.at_side(task.side))
        img = add_noise(gt, NoiseSpec(task.snr, task.seed))
        stage = "segment"
        results = segment_criteria(img, task.criteria, task.optimizer)
        elapsed = time.perf_counter() - t0
        records = []
        for kind in task.criteria:
            stage = f"evaluate criterion={kind.value}"
            seg, trace = results[kind]
            ev = evaluate(gt, seg, img)
            records.append(
                TrialRecord(
                    spec=task.spec_id,
                    snr=task.snr,
                    side=task.side,
                    criterion=kind.value,
                    replicate=task.replicate,
                    seed=task.seed,
                    sigma=img.noise_sigma,
                    m_true=gt.m,
                    m_hat=ev.m_hat,
                    mse=ev.mse,
                    mse_ratio=ev.mse_ratio,
                    symdiff_frac=ev.symdiff_frac,
                    score=trace.final_score,
                    wall_time=elapsed,
                )
            )
        return records
    except Exception as exc:
        crit = ",".join(k.value for k in task.criteria)
        raise CellError(f"cell failed ({where} criteria={crit}) during {stage}: {type(exc).__name__}: {exc}") from exc


def _read_log(path: Path, fingerprint: str) -> List[TrialRecord]:
    if not path.exists():
        return []
    records = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError:
                # a torn final line from an interrupted run is dropped
                continue
            if "config" in doc:
                if doc["config"] != fingerprint:
                    raise ValueError(f"{path} was written by a different experiment config")
                continue
            records.append(TrialRecord(**doc))
    return records


def run(cfg: ExperimentConfig, log_path=None, progress=None) -> List[TrialRecord]:
    """Run every (cell, replicate) not already in the log; returns all records
    sorted by (spec, snr, size, criterion, replicate)."""
    fingerprint = cfg.fingerprint()
    done: Dict[Tuple[str, float, int, int], List[TrialRecord]] = {}
    log = None
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        for rec in _read_log(log_path, fingerprint):
            done.setdefault((rec.spec, rec.snr, rec.side, rec.replicate), []).append(rec)
        fresh = not log_path.exists() or log_path.stat().st_size == 0
        log = log_path.open("a")
        if fresh:
            log.write(json.dumps({"config": fingerprint}) + "\n")
            log.flush()

    wanted = {k.value for k in cfg.criteria}
    records: List[TrialRecord] = []
    pending = []
    for task in _tasks(cfg):
        prior = done.get((task.spec_id, task.snr, task.side, task.replicate), [])
        if {r.criterion for r in prior} >= wanted:
            records.extend(r for r in prior if r.criterion in wanted)
        else:
            pending.append(task)

    def accept(batch: List[TrialRecord]) -> None:
        records.extend(batch)
        if log is not None:
            for rec in batch:
                log.write(json.dumps(asdict(rec)) + "\n")
            log.flush()
        if progress is not None:
            progress(len(records), len(cfg.cells()) * cfg.reps * len(cfg.criteria))

    try:
        if cfg.parallelism == 1 or len(pending) <= 1:
            for task in pending:
                accept(run_task(task))
        else:
            with ProcessPoolExecutor(max_workers=cfg.parallelism) as pool:
                futures = [pool.submit(run_task, t) for t in pending]
                for fut in as_completed(futures):
                    accept(fut.result())
    finally:
        if log is not None:
            log.close()
    records.sort(key=lambda r: r.key(cfg))
    return records


# ---------------------------------------------------------------- tables


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x)) if isinstance(x, float) else str(x)


def _csv(rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


TRIALS_COLUMNS = ["spec", "snr", "side", "n", "criterion", "replicate", "seed", "sigma", "m_true", "m_hat",
                  "mse", "mse_ratio", "symdiff_frac", "score"]


def trials_csv(records: Sequence[TrialRecord]) -> str:
    """One row per record; wall time is left to the JSON log so reruns compare byte-for-byte."""
    rows = [TRIALS_COLUMNS]
    for r in records:
        rows.append([r.spec, _fmt(r.snr), r.side, r.n, r.criterion, r.replicate, r.seed, _fmt(r.sigma), r.m_true, r.m_hat,
                     _fmt(r.mse), _fmt(r.mse_ratio), _fmt(r.symdiff_frac), _fmt(r.score)])
    return _csv(rows)


def _ordered(values):
    out = []
    for v in values:
        if v not in out:
            out.append(v)
    return out


def mhat_freq_csv(records: Sequence[TrialRecord], bins: Tuple[int, int] = (3, 10)) -> str:
    """Rows ``(spec, snr, m_hat bin)``; columns ``CRITERION@side`` grouped by size."""
    specs = _ordered(r.spec for r in records)
    snrs = _ordered(r.snr for r in records)
    sides = _ordered(r.side for r in records)
    crits = _ordered(r.criterion for r in records)
    cols = [(s, c) for s in sides for c in crits]
    groups: Dict[tuple, List[TrialRecord]] = {}
    for r in records:
        groups.setdefault((r.spec, r.snr, r.side, r.criterion), []).append(r)
    labels = bin_labels(*bins)
    rows = [["spec", "snr", "m_hat"] + [f"{c.upper()}@{s}" for s, c in cols]]
    for spec in specs:
        for snr in snrs:
            if not any((spec, snr, s, c) in groups for s, c in cols):
                continue
            tables = [tabulate_mhat(groups.get((spec, snr, s, c), []), *bins).counts for s, c in cols]
            for i, label in enumerate(labels):
                rows.append([spec, _fmt(snr), label] + [t[i] for t in tables])
    return _csv(rows)


def mse_summary_csv(records: Sequence[TrialRecord]) -> str:
    """Per cell: mean per-pixel MSE x 1000 and ``sqrt(mean per-pixel MSE) / sigma``."""
    groups: Dict[tuple, List[TrialRecord]] = {}
    for r in records:
        groups.setdefault((r.spec, r.snr, r.criterion, r.side), []).append(r)
    rows = [["spec", "snr", "criterion", "side", "n", "reps", "mse_x1000", "mse_ratio", "m_hat_mean", "symdiff_mean"]]
    for (spec, snr, crit, side), rs in groups.items():
        n = side * side
        per_pixel = math.fsum(r.mse for r in rs) / (len(rs) * n)
        sig = rs[0].sigma  # fixed within a cell
        ratio = math.sqrt(per_pixel) / sig if sig else None
        rows.append([spec, _fmt(snr), crit.upper(), side, n, len(rs), _fmt(1000.0 * per_pixel), _fmt(ratio),
                     _fmt(sum(r.m_hat for r in rs) / len(rs)),
                     _fmt(math.fsum(r.symdiff_frac for r in rs) / len(rs))])
    return _csv(rows)


def emit_tables(records: Sequence[TrialRecord], out_dir, bins: Tuple[int, int] = (3, 10)) -> Dict[str, Path]:
    if not records:
        raise ValueError("no records to tabulate")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "trials.csv": trials_csv(records),
        "mhat_freq.csv": mhat_freq_csv(records, bins),
        "mse_summary.csv": mse_summary_csv(records),
    }
    paths = {}
    for name, text in files.items():
        (out / name).write_text(text)
        paths[name] = out / name
    return paths


def run_experiment(cfg: ExperimentConfig, out_dir, progress=None) -> List[TrialRecord]:
    out = Path(out_dir)
    records = run(cfg, out / LOG_NAME, progress)
    emit_tables(records, out, cfg.mhat_bins)
    return records
