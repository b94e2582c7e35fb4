import json

import numpy as np
import pytest

from segcrit.core import CriterionKind
from segcrit.harness import (
    CellError, ExperimentConfig, TrialRecord, config_from_dict, config_to_dict, desk_preset, emit_tables,
    load_config, parse_config_text, replicate_seed, run, run_experiment, run_task, _tasks,
)
from segcrit.merge import MergeConfig
from segcrit.synth import TestImageSpec


def _small(**kw):
    fields = dict(specs=[TestImageSpec("squares7", 16, 16)], snrs=[4.0], sizes=[16], reps=2)
    fields.update(kw)
    return ExperimentConfig(**fields)


def test_record_count_and_order():
    cfg = _small()
    recs = run(cfg)
    assert len(recs) == 6
    assert [(r.criterion, r.replicate) for r in recs] == [(c, r) for c in ("aic", "bic", "mdl") for r in (0, 1)]
    # the three criteria of a replicate see the same noisy image
    by_rep = {r.replicate: {x.seed for x in recs if x.replicate == r.replicate} for r in recs}
    assert all(len(s) == 1 for s in by_rep.values())
    assert all(r.m_true == 7 and r.n == 256 for r in recs)


def test_determinism_serial_vs_parallel(tmp_path):
    cfg = _small(snrs=[2.0, 4.0])
    run_experiment(cfg, tmp_path / "a")
    run_experiment(ExperimentConfig(**{**cfg.__dict__, "parallelism": 2}), tmp_path / "b")
    for name in ("trials.csv", "mhat_freq.csv", "mse_summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seeds_distinct_across_cells_and_reps():
    cfg = _small(snrs=[1.0, 2.0], sizes=[16, 32], reps=5)
    seeds = [t.seed for t in _tasks(cfg)]
    assert len(seeds) == len(set(seeds)) == 20
    assert replicate_seed(1, 0, 0) != replicate_seed(2, 0, 0)


def test_resume_skips_finished_replicates(tmp_path):
    cfg = _small()
    log = tmp_path / "trials.jsonl"
    first = run(cfg, log)
    lines = log.read_text().splitlines()
    assert json.loads(lines[0]) == {"config": cfg.fingerprint()}
    calls = []
    second = run(cfg, log, progress=lambda done, total: calls.append(done))
    assert calls == [] and log.read_text().splitlines() == lines
    assert [r.m_hat for r in first] == [r.m_hat for r in second]
    # a torn last line is dropped and that replicate is redone
    log.write_text("\n".join(lines[:-1]) + "\n" + lines[-1][:10])
    third = run(cfg, log)
    assert [(r.criterion, r.replicate, r.m_hat) for r in third] == [(r.criterion, r.replicate, r.m_hat) for r in first]


def test_resume_rejects_other_config(tmp_path):
    log = tmp_path / "trials.jsonl"
    run(_small(), log)
    with pytest.raises(ValueError):
        run(_small(base_seed=1), log)


def test_fingerprint_ignores_parallelism():
    assert _small().fingerprint() == _small(parallelism=3).fingerprint()
    assert _small().fingerprint() != _small(reps=3).fingerprint()


def test_config_round_trip_and_text():
    cfg = desk_preset(optimizer=MergeConfig(init="block:4", max_regions=20, order="self"))
    again = config_from_dict(json.loads(json.dumps(config_to_dict(cfg))))
    assert again.fingerprint() == cfg.fingerprint()
    text = """
    # comment
    specs = squares7, rects8
    snrs = 1, 4
    sizes = 32
    criteria = mdl
    reps = 3
    init = block:2
    """
    c = parse_config_text(text)
    assert [s.template for s in c.specs] == ["squares7", "rects8"]
    assert c.snrs == (1.0, 4.0) and c.criteria == (CriterionKind.MDL,) and c.optimizer.init == "block:2"
    with pytest.raises(ValueError):
        parse_config_text("specs = squares7\nsnrs = 1\nsizes = 32\nbogus = 1")
    with pytest.raises(ValueError):
        parse_config_text("specs = squares7\nsizes = 32")


def test_load_config_custom_labels(tmp_path):
    (tmp_path / "lab.txt").write_text("0 0 1 1\n0 0 1 1\n2 2 2 2\n2 2 2 2\n")
    (tmp_path / "cfg.json").write_text(json.dumps(
        {"specs": [{"template": "custom", "labels_path": str(tmp_path / "lab.txt"), "means": [0, 1, 2]}],
         "snrs": [4], "sizes": [16], "reps": 1}))
    cfg = load_config(tmp_path / "cfg.json")
    recs = run(cfg)
    assert {r.m_true for r in recs} == {3}


def test_config_validation():
    with pytest.raises(ValueError):
        _small(reps=0)
    with pytest.raises(ValueError):
        _small(snrs=[0.0])
    with pytest.raises(ValueError):
        _small(criteria=["mdl", "mdl"])


def test_cell_error_names_coordinates():
    # a 16x16 custom map shrunk to side 2 loses regions, so generation fails
    lab = np.repeat(np.arange(4), 4)[None, :].repeat(16, axis=0)
    cfg = ExperimentConfig(specs=[TestImageSpec("custom", 16, 16, [0, 1, 2, 3], lab)], snrs=[2.0], sizes=[2], reps=1)
    with pytest.raises(CellError) as info:
        run_task(_tasks(cfg)[0])
    msg = str(info.value)
    assert "spec=custom" in msg and "side=2" in msg and "replicate=0" in msg and "generate" in msg


def test_emit_tables_structure(tmp_path):
    recs = run(_small(sizes=[16, 32]))
    paths = emit_tables(recs, tmp_path, (3, 10))
    trials = paths["trials.csv"].read_text().splitlines()
    assert trials[0].startswith("spec,snr,side,n,criterion,replicate,seed")
    assert len(trials) == 1 + 12
    freq = paths["mhat_freq.csv"].read_text().splitlines()
    assert freq[0] == "spec,snr,m_hat,AIC@16,BIC@16,MDL@16,AIC@32,BIC@32,MDL@32"
    assert len(freq) == 1 + 9
    cols = np.array([[int(v) for v in line.split(",")[3:]] for line in freq[1:]])
    assert cols.sum(axis=0).tolist() == [2] * 6
    summary = paths["mse_summary.csv"].read_text().splitlines()
    assert len(summary) == 1 + 6
    with pytest.raises(ValueError):
        emit_tables([], tmp_path)


def test_high_snr_cell_recovers_truth():
    recs = run(_small(snrs=[1e6], sizes=[32], criteria=["bic", "mdl"]))
    assert all(r.m_hat == 7 and r.symdiff_frac == 0.0 for r in recs)
