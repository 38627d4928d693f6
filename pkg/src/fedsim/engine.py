"""Round loop: build data, train clients, move updates, aggregate, record."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .algorithms import StrategyState, get_strategy
from .config import ExperimentConfig
from .data import ClientPartition, build_paired_clients
from .model import accuracy, loss
from .transport import make_transport

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    val_accuracy: tuple[float, ...]
    val_loss: tuple[float, ...]
    weights: np.ndarray  # n x n, row i is client i's peer weights

    def __eq__(self, other):
        if not isinstance(other, RoundRecord):
            return NotImplemented
        return (self.round == other.round and self.val_accuracy == other.val_accuracy
                and self.val_loss == other.val_loss and np.array_equal(self.weights, other.weights))

    __hash__ = None

    @property
    def n_clients(self) -> int:
        return len(self.val_accuracy)


@dataclass
class RunResult:
    config: ExperimentConfig
    records: list[RoundRecord]
    final_state: StrategyState
    trace: list = field(default_factory=list)


_PARTITION_CACHE: dict[tuple, list[ClientPartition]] = {}


def partitions_for(cfg: ExperimentConfig) -> list[ClientPartition]:
    """Partitions depend on the data fields only, so runs differing in strategy share them."""
    key = cfg.data_key()
    if key not in _PARTITION_CACHE:
        if len(_PARTITION_CACHE) > 32:
            _PARTITION_CACHE.clear()
        _PARTITION_CACHE[key] = build_paired_clients(cfg)
    return _PARTITION_CACHE[key]


def clear_partition_cache():
    _PARTITION_CACHE.clear()


def evaluate(models: np.ndarray, partitions: Sequence[ClientPartition]):
    accs = tuple(accuracy(models[p.client_id], p.validation) for p in partitions)
    losses = tuple(loss(models[p.client_id], p.validation) for p in partitions)
    return accs, losses


def execute(cfg: ExperimentConfig, partitions: Sequence[ClientPartition] | None = None,
            transport=None) -> RunResult:
    """Run every round of ``cfg`` and keep the final strategy state alongside the records."""
    cfg.validate()
    if partitions is None:
        partitions = partitions_for(cfg)
    n, dim = cfg.n_clients, cfg.dim
    strategy = get_strategy(cfg.strategy)
    state = strategy.init_state(n, dim, master_seed=cfg.master_seed, eta=cfg.eta, epochs=cfg.epochs,
                                batch_size=cfg.batch_size, lr=cfg.lr)
    own_transport = transport is None and strategy.communicates
    if own_transport:
        transport = make_transport(cfg.transport, n, dim)
    records = []
    try:
        if strategy.communicates:
            received = transport.start(np.zeros(dim + 1), [len(p.train) for p in partitions])
            if any(not np.array_equal(r, np.zeros(dim + 1)) for r in received):
                raise RuntimeError("clients received a different initial model")
        for t in range(cfg.rounds):
            updates = strategy.client_phase(state, partitions)
            if strategy.communicates:
                updates = transport.exchange_round(t, updates, relay=strategy.relays_deltas)
            state = strategy.server_phase(state, updates, partitions)
            if strategy.communicates and not strategy.personal:
                got = transport.broadcast(t, state.models[0])
                if not np.array_equal(got, state.models[0]):
                    raise RuntimeError(f"round {t}: broadcast altered the global model")
            models = strategy.client_models(state, n)
            accs, losses = evaluate(models, partitions)
            records.append(RoundRecord(t, accs, losses, strategy.weight_matrix(state, n).copy()))
    finally:
        if own_transport:
            transport.close()
    trace = list(transport.trace.events) if transport is not None else []
    return RunResult(cfg, records, state, trace)


def run_experiment(cfg: ExperimentConfig) -> list[RoundRecord]:
    return execute(cfg).records


@dataclass(frozen=True)
class SweepRow:
    strategy: str
    seed: int
    round: int
    val_accuracy: tuple[float, ...]
    val_loss: tuple[float, ...]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.val_accuracy))


@dataclass
class SweepResult:
    rows: list[SweepRow]
    runs: dict[tuple[str, int], RunResult]
    errors: dict[tuple[str, int], str]

    def table(self) -> dict[tuple[str, int, int], SweepRow]:
        return {(r.strategy, r.seed, r.round): r for r in self.rows}


def run_sweep(base: ExperimentConfig, strategies: Sequence[str], seeds: Sequence[int]) -> SweepResult:
    """Cross product of strategies and seeds. A failing run is recorded and the rest continue."""
    if not strategies or not seeds:
        raise ValueError("run_sweep needs at least one strategy and one seed")
    rows, runs, errors = [], {}, {}
    for strategy in strategies:
        for seed in seeds:
            try:
                result = execute(base.replace(strategy=strategy, master_seed=seed))
            except Exception as exc:
                log.error("run %s seed %s failed: %s", strategy, seed, exc)
                errors[(strategy, seed)] = f"{strategy} seed {seed}: {type(exc).__name__}: {exc}"
                continue
            runs[(strategy, seed)] = result
            rows.extend(SweepRow(strategy, seed, r.round, r.val_accuracy, r.val_loss) for r in result.records)
    return SweepResult(rows, runs, errors)
