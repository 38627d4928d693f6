import csv
import json

import numpy as np
import pytest

from fedsim.config import ExperimentConfig
from fedsim.engine import RoundRecord, run_experiment
from fedsim.report import (NOT_APPLICABLE, ReportBundle, pairing_hits, pairing_indicator, read_accuracy_csv,
                           read_weights_csv, write_accuracy_csv, write_bundle, write_summary_json, write_sweep_csv,
                           write_weights_csv)


def records(rounds, n, rng):
    out = []
    for t in range(rounds):
        w = rng.random((n, n)) + 0.01
        out.append(RoundRecord(t, tuple(rng.random(n)), tuple(rng.random(n) * 3), w / w.sum(axis=1, keepdims=True)))
    return out


def test_accuracy_rows_and_parse_back(tmp_path, rng):
    recs = records(2, 3, rng)
    path = write_accuracy_csv(ReportBundle(ExperimentConfig(), recs), tmp_path / "a.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "round,client_id,val_accuracy,val_loss"
    assert len(lines) == 7
    back = read_accuracy_csv(path)
    for r in recs:
        for i in range(3):
            assert back[r.round, i] == (r.val_accuracy[i], r.val_loss[i])
    keys = [tuple(map(int, line.split(",")[:2])) for line in lines[1:]]
    assert keys == sorted(keys)


def test_empty_records_rejected():
    with pytest.raises(ValueError):
        ReportBundle(ExperimentConfig(), [])


def test_weights_rows_and_sums(tmp_path):
    cfg = ExperimentConfig(samples_per_client=200)
    recs = run_experiment(cfg)
    path = write_weights_csv(ReportBundle(cfg, recs), tmp_path / "w.csv")
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3600
    back = read_weights_csv(path)
    for r in recs:
        assert np.array_equal(back[r.round], r.weights)
        assert np.allclose(back[r.round].sum(axis=1), 1.0, rtol=0, atol=1e-9)


def test_uniform_weights_for_baselines(tmp_path):
    cfg = ExperimentConfig(samples_per_client=200, rounds=3, strategy="fedavg")
    path = write_weights_csv(ReportBundle(cfg, run_experiment(cfg)), tmp_path / "w.csv")
    with path.open() as fh:
        assert {float(r["weight"]) for r in csv.DictReader(fh)} == {1 / 6}


def test_summary(tmp_path, rng):
    cfg = ExperimentConfig(rounds=3)
    recs = records(3, 6, rng)
    bundle = ReportBundle(cfg, recs)
    doc = json.loads(write_summary_json(bundle, tmp_path / "s.json").read_text())
    final = recs[-1].val_accuracy
    assert doc["summary"]["mean"] == pytest.approx(sum(final) / 6, abs=1e-15)
    assert doc["summary"]["min"] == min(final) and doc["summary"]["max"] == max(final)
    assert ExperimentConfig(**doc["config"]) == cfg
    assert doc["acceptance_metrics"]["mean_final_accuracy"] == {"fedsmart": bundle.summary["mean"]}
    assert doc["acceptance_metrics"]["pairing"]["n_clients"] == 6


def test_pairing_not_applicable_without_pairs(rng):
    assert pairing_indicator(ExperimentConfig(n_clients=1, heterogeneity="iid"), np.ones((1, 1))) == NOT_APPLICABLE
    assert pairing_indicator(ExperimentConfig(heterogeneity="iid"), np.eye(6)) == NOT_APPLICABLE


def test_pairing_hits():
    w = np.full((6, 6), 0.1)
    for i in range(6):
        w[i, (i + 3) % 6] = 0.4
    w[2, 0] = 0.4  # tie with the designated peer does not count
    hits = pairing_hits(w)
    assert hits == [True, True, False, True, True, True]
    assert pairing_hits(np.full((6, 6), 1 / 6)) == [False] * 6


def test_bundle_layout(tmp_path, rng):
    cfg = ExperimentConfig(strategy="local", master_seed=4, rounds=2)
    target = write_bundle(ReportBundle(cfg, records(2, 6, rng)), tmp_path)
    assert target == tmp_path / "local_4"
    assert sorted(p.name for p in target.iterdir()) == ["accuracy.csv", "summary.json", "weights.csv"]


def test_sweep_csv_order(tmp_path):
    from fedsim.engine import SweepRow
    rows = [SweepRow("b", 1, 0, (0.5,), (0.1,)), SweepRow("a", 2, 1, (0.25,), (0.2,)),
            SweepRow("a", 2, 0, (0.75,), (0.3,))]
    lines = write_sweep_csv(rows, tmp_path / "s.csv").read_text().splitlines()
    assert lines[1:] == ["a,2,0,0,0.75,0.3", "a,2,1,0,0.25,0.2", "b,1,0,0,0.5,0.1"]
