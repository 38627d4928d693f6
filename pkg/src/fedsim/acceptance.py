"""The ten acceptance criteria, each returning one pass/fail result.

Reference computations here are written as plain Python loops over floats so
they share no code path with the vectorised implementation they check.
Simulation runs are cached per (strategy, heterogeneity, seed) because
several criteria read the same runs.
"""

from __future__ import annotations

import json
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import engine
from .algorithms import StrategyState, fedsmart_round, fedsmart_weight_update
from .config import ExperimentConfig
from .data import ClientPartition
from .model import ClientUpdate, Dataset, gradient, loss
from .report import ReportBundle, pairing_hits, read_weights_csv, write_bundle

SEEDS = tuple(range(10))


@dataclass(frozen=True)
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float
    budget: float

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] criterion {self.number:2d} {self.title}: {self.detail} ({self.seconds:.1f}s of {self.budget:g}s)"


# -- reference computations -------------------------------------------------

def ref_median(values) -> float:
    v = sorted(float(x) for x in values)
    k = len(v)
    return v[k // 2] if k % 2 else (v[k // 2 - 1] + v[k // 2]) / 2.0


def ref_weight_update(prev, accs, eta) -> list[float]:
    med = ref_median(accs)
    raw = [max(p + eta * (a - med), 0.0) for p, a in zip(prev, accs)]
    total = sum(raw)
    if total == 0.0:
        return [1.0 / len(raw)] * len(raw)
    return [r / total for r in raw]


def ref_accuracy(theta, rows, labels) -> float:
    hits = 0
    for x, y in zip(rows, labels):
        z = sum(t * xi for t, xi in zip(theta[:-1], x)) + theta[-1]
        p = 1.0 / (1.0 + math.exp(-z))
        hits += int((1 if p >= 0.5 else 0) == y)
    return hits / len(labels)


def ref_fedsmart_round(models, weights, deltas, validations, eta):
    """One FedSmart round written out client by client, peer by peer."""
    n = len(models)
    new_models, new_weights = [], []
    for i in range(n):
        rows, labels = validations[i]
        accs = []
        for j in range(n):
            candidate = [a + b for a, b in zip(models[i], deltas[j])]
            accs.append(ref_accuracy(candidate, rows, labels))
        w = ref_weight_update(weights[i], accs, eta)
        mixed = list(models[i])
        for k in range(len(mixed)):
            mixed[k] += sum(w[j] * deltas[j][k] for j in range(n))
        new_models.append(mixed)
        new_weights.append(w)
    return new_models, new_weights


# -- shared runs --------------------------------------------------------------

_RUNS: dict[tuple, engine.RunResult] = {}


def cached_run(strategy: str, heterogeneity: str, seed: int, **overrides) -> engine.RunResult:
    key = (strategy, heterogeneity, seed, tuple(sorted(overrides.items())))
    if key not in _RUNS:
        cfg = ExperimentConfig(strategy=strategy, heterogeneity=heterogeneity, master_seed=seed, **overrides)
        _RUNS[key] = engine.execute(cfg)
    return _RUNS[key]


def final_mean_accuracy(strategy: str, heterogeneity: str, seed: int) -> float:
    return float(np.mean(cached_run(strategy, heterogeneity, seed).records[-1].val_accuracy))


# -- criteria ---------------------------------------------------------------

def c1_gradient(rng_seed: int = 1) -> tuple[bool, str]:
    rng = np.random.default_rng(rng_seed)
    h = 1e-6
    worst = 0.0
    failures = 0
    for _ in range(100):
        d = int(rng.integers(1, 11))
        m = int(rng.integers(1, 21))
        ds = Dataset(rng.normal(size=(m, d)), rng.integers(0, 2, size=m))
        theta = rng.normal(scale=0.5, size=d + 1)
        g = gradient(theta, ds)
        for k in range(d + 1):
            e = np.zeros(d + 1)
            e[k] = h
            fd = (loss(theta + e, ds) - loss(theta - e, ds)) / (2 * h)
            err = abs(g[k] - fd)
            tol = max(1e-4 * abs(fd), 1e-8)
            worst = max(worst, err / tol)
            failures += err > tol
    return failures == 0, f"{failures} component mismatches, worst error/tolerance {worst:.3g}"


def _random_simplex(rng, n):
    w = rng.exponential(size=n)
    return w / w.sum()


def c2_weight_update(rng_seed: int = 2) -> tuple[bool, str]:
    rng = np.random.default_rng(rng_seed)
    worst = 0.0
    for trial in range(1000):
        n = int(rng.integers(1, 9))
        prev = _random_simplex(rng, n)
        accs = rng.integers(0, 21, size=n) / 20 if trial % 2 else rng.random(n)
        eta = float(rng.uniform(0.01, 5.0))
        got = fedsmart_weight_update(prev, accs, eta)
        want = ref_weight_update(prev.tolist(), accs.tolist(), eta)
        worst = max(worst, max(abs(a - b) for a, b in zip(got, want)))
    return worst <= 1e-12, f"max deviation {worst:.3g} over 1000 triples"


def c3_algorithm(rng_seed: int = 3) -> tuple[bool, str]:
    rng = np.random.default_rng(rng_seed)
    n, d = 3, 2
    worst = 0.0
    for _ in range(20):
        models = rng.normal(size=(n, d + 1))
        weights = np.stack([_random_simplex(rng, n) for _ in range(n)])
        deltas = rng.normal(size=(n, d + 1))
        parts, validations = [], []
        for i in range(n):
            X, y = rng.normal(size=(4, d)), rng.integers(0, 2, size=4)
            parts.append(ClientPartition(i, Dataset(X, y), Dataset(X, y), 0, 4))
            validations.append((X.tolist(), y.tolist()))
        eta = float(rng.uniform(0.1, 2.0))
        state = StrategyState(models, weights, 0, eta=eta)
        updates = [ClientUpdate(i, deltas[i], 4) for i in range(n)]
        out = fedsmart_round(state, updates, parts)
        ref_m, ref_w = ref_fedsmart_round(models.tolist(), weights.tolist(), deltas.tolist(), validations, eta)
        worst = max(worst, float(np.max(np.abs(out.models - np.array(ref_m)))),
                    float(np.max(np.abs(out.weights - np.array(ref_w)))))
    return worst <= 1e-12, f"max deviation {worst:.3g} over 20 instances"


def c4_simplex() -> tuple[bool, str]:
    run = cached_run("fedsmart", "paired_noniid", 0)
    with tempfile.TemporaryDirectory() as tmp:
        target = write_bundle(ReportBundle(run.config, run.records), tmp)
        matrices = read_weights_csv(target / "weights.csv")
    bad = 0
    rows = 0
    for m in matrices.values():
        for row in m:
            rows += 1
            bad += bool(np.any(row < 0) or abs(math.fsum(row) - 1.0) > 1e-9)
    ok = bad == 0 and rows == run.config.n_clients * run.config.rounds
    return ok, f"{bad} of {rows} weight rows off the simplex"


def c5_pairing() -> tuple[bool, str]:
    per_seed = []
    for seed in SEEDS:
        hits = pairing_hits(cached_run("fedsmart", "paired_noniid", seed).records[-1].weights)
        per_seed.append(sum(hits))
    full = sum(k == 6 for k in per_seed)
    return full >= 7, f"all 6 clients paired in {full}/10 seeds (need 7); paired clients per seed {per_seed}"


def c6_vs_local() -> tuple[bool, str]:
    wins = sum(final_mean_accuracy("fedsmart", "paired_noniid", s) > final_mean_accuracy("local", "paired_noniid", s)
               for s in SEEDS)
    fs = np.mean([final_mean_accuracy("fedsmart", "paired_noniid", s) for s in SEEDS])
    lo = np.mean([final_mean_accuracy("local", "paired_noniid", s) for s in SEEDS])
    return wins >= 8 and fs > lo, f"FedSmart beats local in {wins}/10 seeds (need 8); means {fs:.4f} vs {lo:.4f}"


def c7_vs_fedavg() -> tuple[bool, str]:
    acc = {(st, het, s): final_mean_accuracy(st, het, s)
           for st in ("fedsmart", "fedavg") for het in ("paired_noniid", "iid") for s in SEEDS}
    ge_noniid = sum(acc["fedsmart", "paired_noniid", s] >= acc["fedavg", "paired_noniid", s] for s in SEEDS)
    close_iid = sum(abs(acc["fedsmart", "iid", s] - acc["fedavg", "iid", s]) <= 0.02 for s in SEEDS)
    fs_iid = sum(acc["fedsmart", "iid", s] >= acc["fedsmart", "paired_noniid", s] for s in SEEDS)
    fa_iid = sum(acc["fedavg", "iid", s] >= acc["fedavg", "paired_noniid", s] for s in SEEDS)
    ok = min(ge_noniid, close_iid, fs_iid, fa_iid) >= 8
    return ok, (f"non-IID FedSmart>=FedAvg {ge_noniid}/10, IID within 2 points {close_iid}/10, "
                f"IID>=non-IID FedSmart {fs_iid}/10 FedAvg {fa_iid}/10 (each needs 8)")


def _bundle_bytes(cfg: ExperimentConfig, outdir) -> dict[str, bytes]:
    engine.clear_partition_cache()
    target = write_bundle(ReportBundle(cfg, engine.run_experiment(cfg)), outdir)
    return {name: (target / name).read_bytes() for name in ("accuracy.csv", "weights.csv", "summary.json")}


def c8_determinism() -> tuple[bool, str]:
    cfg = ExperimentConfig()
    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        first, second = _bundle_bytes(cfg, a), _bundle_bytes(cfg, b)
    differing = [k for k in first if first[k] != second[k]]
    return not differing, f"differing files: {differing or 'none'}"


def c9_transport() -> tuple[bool, str]:
    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        local = _bundle_bytes(ExperimentConfig(transport="inprocess"), a)
        tcp = _bundle_bytes(ExperimentConfig(transport="tcp"), b)
    differing = [k for k in ("accuracy.csv", "weights.csv") if local[k] != tcp[k]]
    # summary.json embeds the config, which names the transport; compare the rest
    s_local, s_tcp = json.loads(local["summary.json"]), json.loads(tcp["summary.json"])
    if (s_local["summary"], s_local["acceptance_metrics"]) != (s_tcp["summary"], s_tcp["acceptance_metrics"]):
        differing.append("summary.json")
    return not differing, f"differing outputs: {differing or 'none'}"


def c10_fixed_point(rng_seed: int = 10) -> tuple[bool, str]:
    rng = np.random.default_rng(rng_seed)
    changed = 0
    for _ in range(1000):
        n = int(rng.integers(1, 12))
        prev = _random_simplex(rng, n)
        accs = np.full(n, float(rng.random()))
        out = fedsmart_weight_update(prev, accs, float(rng.uniform(1e-3, 10.0)))
        changed += not np.array_equal(out, prev)
    return changed == 0, f"{changed} of 1000 equal-accuracy updates moved the weights"


CRITERIA: dict[int, tuple[str, float, Callable[[], tuple[bool, str]]]] = {
    1: ("gradient vs finite differences", 1.0, c1_gradient),
    2: ("weight update vs reference", 1.0, c2_weight_update),
    3: ("FedSmart round vs reference loop", 5.0, c3_algorithm),
    4: ("simplex invariant in weights.csv", 30.0, c4_simplex),
    5: ("pairing emergence", 300.0, c5_pairing),
    6: ("FedSmart vs local-only", 300.0, c6_vs_local),
    7: ("FedSmart vs FedAvg, IID vs non-IID", 300.0, c7_vs_fedavg),
    8: ("determinism of outputs", 60.0, c8_determinism),
    9: ("in-process vs TCP transport", 120.0, c9_transport),
    10: ("equal-accuracy fixed point", 1.0, c10_fixed_point),
}


def check(number: int) -> CriterionResult:
    title, budget, fn = CRITERIA[number]
    start = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:
        ok, detail = False, f"raised {type(exc).__name__}: {exc}"
    seconds = time.perf_counter() - start
    if seconds > budget:
        ok, detail = False, f"{detail}; over the time budget"
    return CriterionResult(number, title, ok, detail, seconds, budget)


def run_all(numbers=None, echo: Callable[[str], None] | None = print) -> list[CriterionResult]:
    results = []
    for number in numbers or sorted(CRITERIA):
        result = check(number)
        if echo:
            echo(result.line())
        results.append(result)
    return results
