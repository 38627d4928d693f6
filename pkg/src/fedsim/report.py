"""CSV/JSON artifacts for accuracy curves and weight trajectories.

Reals are written with ``repr`` so reading a file back gives the exact
values that were in memory.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ExperimentConfig
from .data import designated_pair
from .engine import RoundRecord

NOT_APPLICABLE = "not-applicable"


def pairing_hits(weights: np.ndarray) -> list[bool]:
    """Per client: is the strictly largest off-diagonal weight on its designated pair?"""
    n = weights.shape[0]
    hits = []
    for i in range(n):
        others = [(weights[i, j], j) for j in range(n) if j != i]
        best = max(w for w, _ in others)
        leaders = [j for w, j in others if w == best]
        hits.append(leaders == [designated_pair(i, n)])
    return hits


def pairing_indicator(cfg: ExperimentConfig, weights: np.ndarray):
    if cfg.heterogeneity != "paired_noniid" or cfg.n_clients < 2:
        return NOT_APPLICABLE
    hits = pairing_hits(weights)
    return {"clients_paired": int(sum(hits)), "n_clients": cfg.n_clients, "all_paired": all(hits),
            "per_client": hits}


@dataclass(frozen=True)
class ReportBundle:
    config: ExperimentConfig
    records: tuple[RoundRecord, ...]

    def __post_init__(self):
        if not self.records:
            raise ValueError("a report needs at least one round record")
        object.__setattr__(self, "records", tuple(self.records))

    @property
    def summary(self) -> dict:
        final = list(self.records[-1].val_accuracy)
        return {
            "round": self.records[-1].round,
            "final_val_accuracy": final,
            "mean": float(np.mean(final)),
            "min": min(final),
            "max": max(final),
        }

    def acceptance_metrics(self) -> dict:
        return {
            "pairing": pairing_indicator(self.config, self.records[-1].weights),
            "mean_final_accuracy": {self.config.strategy: self.summary["mean"]},
        }


def _fmt(x: float) -> str:
    return repr(float(x))


def write_accuracy_csv(bundle: ReportBundle, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "client_id", "val_accuracy", "val_loss"])
        for rec in sorted(bundle.records, key=lambda r: r.round):
            for cid, (acc, ls) in enumerate(zip(rec.val_accuracy, rec.val_loss)):
                w.writerow([rec.round, cid, _fmt(acc), _fmt(ls)])
    return path


def write_weights_csv(bundle: ReportBundle, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "owner_id", "peer_id", "weight"])
        for rec in sorted(bundle.records, key=lambda r: r.round):
            n = rec.weights.shape[0]
            for i in range(n):
                for j in range(n):
                    w.writerow([rec.round, i, j, _fmt(rec.weights[i, j])])
    return path


def write_summary_json(bundle: ReportBundle, path) -> Path:
    path = Path(path)
    doc = {
        "config": bundle.config.to_dict(),
        "summary": bundle.summary,
        "acceptance_metrics": bundle.acceptance_metrics(),
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def run_dir(outdir, cfg: ExperimentConfig) -> Path:
    return Path(outdir) / f"{cfg.strategy}_{cfg.master_seed}"


def write_bundle(bundle: ReportBundle, outdir) -> Path:
    """Write ``<outdir>/<strategy>_<seed>/{accuracy.csv,weights.csv,summary.json}``."""
    target = run_dir(outdir, bundle.config)
    target.mkdir(parents=True, exist_ok=True)
    write_accuracy_csv(bundle, target / "accuracy.csv")
    write_weights_csv(bundle, target / "weights.csv")
    write_summary_json(bundle, target / "summary.json")
    return target


def read_accuracy_csv(path) -> dict[tuple[int, int], tuple[float, float]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return {(int(r["round"]), int(r["client_id"])): (float(r["val_accuracy"]), float(r["val_loss"]))
                for r in csv.DictReader(fh)}


def read_weights_csv(path) -> dict[int, np.ndarray]:
    """Round -> n x n weight matrix."""
    cells: dict[int, dict[tuple[int, int], float]] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            cells.setdefault(int(r["round"]), {})[(int(r["owner_id"]), int(r["peer_id"]))] = float(r["weight"])
    out = {}
    for rnd, entries in cells.items():
        n = 1 + max(i for i, _ in entries)
        m = np.empty((n, n))
        for (i, j), v in entries.items():
            m[i, j] = v
        out[rnd] = m
    return out


def write_sweep_csv(rows: Sequence, path) -> Path:
    """One line per (strategy, seed, round, client), sorted by that key."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "seed", "round", "client_id", "val_accuracy", "val_loss"])
        for row in sorted(rows, key=lambda r: (r.strategy, r.seed, r.round)):
            for cid, (acc, ls) in enumerate(zip(row.val_accuracy, row.val_loss)):
                w.writerow([row.strategy, row.seed, row.round, cid, _fmt(acc), _fmt(ls)])
    return path
