"""Aggregation strategies: FedSmart plus the FedAvg / FedSGD / LoAdaBoost /
local-only / centralized baselines.

Every strategy splits a round into a client phase (local work producing one
:class:`ClientUpdate` per client) and a server phase (consuming the collected
updates). The engine puts the transport between the two.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import ClientPartition
from .model import (ClientUpdate, ContractError, Dataset, accuracy, gradient, local_train, loss,
                    sgd_epochs)

_TRAIN_STREAM = 21
_BOOST_STREAM = 22


class ProtocolError(RuntimeError):
    pass


def round_seed(master_seed: int, client_id: int, rnd: int, stream: int = _TRAIN_STREAM) -> list[int]:
    return [master_seed, stream, client_id, rnd]


def median(values) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ContractError("median of an empty sequence")
    mid = v.size // 2
    if v.size % 2:
        return float(v[mid])
    return float((v[mid - 1] + v[mid]) / 2.0)


def fedsmart_weight_update(prev, accs, eta: float) -> np.ndarray:
    """Shift each peer weight by ``eta * (acc_j - median(acc))``, clamp at zero,
    renormalise to the simplex. All-zero rows fall back to uniform."""
    prev = np.asarray(prev, dtype=np.float64)
    accs = np.asarray(accs, dtype=np.float64)
    if prev.shape != accs.shape or prev.ndim != 1:
        raise ContractError(f"weight/accuracy length mismatch: {prev.shape} vs {accs.shape}")
    if not eta > 0:
        raise ContractError(f"eta must be positive, got {eta}")
    step = eta * (accs - median(accs))
    if not step.any():
        return prev.copy()
    raw = np.maximum(prev + step, 0.0)
    total = raw.sum()
    if total == 0.0:
        return np.full(prev.shape, 1.0 / prev.size)
    return raw / total


def mix_deltas(weights, deltas) -> np.ndarray:
    """Convex combination of update rows.

    Written relative to the first row so equal rows come back bit-for-bit
    even though the weights only sum to 1 up to rounding.
    """
    weights = np.asarray(weights, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    base = deltas[0]
    return base + weights @ (deltas - base)


def fedavg_aggregate(updates: Sequence[ClientUpdate]) -> np.ndarray:
    if not updates:
        raise ContractError("no updates to aggregate")
    sizes = np.array([u.train_size for u in updates], dtype=np.float64)
    return mix_deltas(sizes / sizes.sum(), np.stack([u.delta for u in updates]))


def candidate_accuracies(theta: np.ndarray, deltas: np.ndarray, validation: Dataset) -> np.ndarray:
    """Accuracy on ``validation`` of ``theta + delta_j`` for every peer j."""
    return np.array([accuracy(theta + d, validation) for d in deltas])


def fedsmart_client_step(theta: np.ndarray, prev_weights: np.ndarray, deltas: np.ndarray,
                         validation: Dataset, eta: float):
    """One client's side of a FedSmart round; returns (new params, new weights)."""
    accs = candidate_accuracies(theta, deltas, validation)
    w = fedsmart_weight_update(prev_weights, accs, eta)
    return theta + mix_deltas(w, deltas), w


@dataclass(frozen=True)
class StrategyState:
    models: np.ndarray  # one row per client, or a single global row
    weights: np.ndarray | None  # n x n peer weights, FedSmart only
    round: int
    master_seed: int = 0
    eta: float = 0.5
    epochs: int = 1
    batch_size: int = 32
    lr: float = 0.1

    def advance(self, models, weights=None) -> "StrategyState":
        return dataclasses.replace(self, models=models, weights=weights, round=self.round + 1)


def _train_kwargs(state: StrategyState) -> dict:
    return dict(epochs=state.epochs, batch_size=state.batch_size, lr=state.lr)


def _check_updates(updates: Sequence[ClientUpdate], n: int):
    ids = [u.client_id for u in updates]
    if ids != list(range(n)):
        raise ProtocolError(f"expected one update per client in id order 0..{n - 1}, got {ids}")


class Strategy:
    """Common interface. ``personal`` strategies keep one model per client."""

    name = ""
    personal = False
    communicates = True
    relays_deltas = False  # server returns the packed deltas rather than new params

    def init_state(self, n_clients: int, dim: int, **hyper) -> StrategyState:
        rows = n_clients if self.personal else 1
        return StrategyState(np.zeros((rows, dim + 1)), None, 0, **hyper)

    def client_models(self, state: StrategyState, n_clients: int) -> np.ndarray:
        if self.personal:
            return state.models
        return np.repeat(state.models, n_clients, axis=0)

    def weight_matrix(self, state: StrategyState, n_clients: int) -> np.ndarray:
        return np.full((n_clients, n_clients), 1.0 / n_clients)

    def client_update(self, state: StrategyState, client_id: int, part: ClientPartition) -> ClientUpdate:
        theta = state.models[client_id if self.personal else 0]
        return local_train(theta, part.train, rng_seed=round_seed(state.master_seed, client_id, state.round),
                           client_id=client_id, **_train_kwargs(state))

    def client_phase(self, state: StrategyState, partitions: Sequence[ClientPartition]) -> list[ClientUpdate]:
        return [self.client_update(state, p.client_id, p) for p in partitions]

    def server_phase(self, state, updates, partitions) -> StrategyState:
        raise NotImplementedError

    def play_round(self, state: StrategyState, partitions: Sequence[ClientPartition]) -> StrategyState:
        return self.server_phase(state, self.client_phase(state, partitions), partitions)


class FedSmart(Strategy):
    name = "fedsmart"
    personal = True
    relays_deltas = True

    def init_state(self, n_clients, dim, **hyper):
        state = super().init_state(n_clients, dim, **hyper)
        return dataclasses.replace(state, weights=np.full((n_clients, n_clients), 1.0 / n_clients))

    def weight_matrix(self, state, n_clients):
        return state.weights

    def server_phase(self, state, updates, partitions):
        return fedsmart_round(state, updates, partitions)


def fedsmart_round(state: StrategyState, updates: Sequence[ClientUpdate],
                   partitions: Sequence[ClientPartition]) -> StrategyState:
    n = state.models.shape[0]
    _check_updates(updates, n)
    deltas = np.stack([u.delta for u in updates])
    models = np.empty_like(state.models)
    weights = np.empty_like(state.weights)
    for i in range(n):
        models[i], weights[i] = fedsmart_client_step(
            state.models[i], state.weights[i], deltas, partitions[i].validation, state.eta)
    return state.advance(models, weights)


class FedAvg(Strategy):
    name = "fedavg"

    def server_phase(self, state, updates, partitions):
        _check_updates(updates, len(partitions))
        return state.advance(state.models + fedavg_aggregate(updates))


class FedSGD(Strategy):
    """Clients ship one full-batch gradient; the server takes a single step."""

    name = "fedsgd"

    def client_update(self, state, client_id, part):
        return ClientUpdate(client_id, gradient(state.models[0], part.train), len(part.train))

    def server_phase(self, state, updates, partitions):
        _check_updates(updates, len(partitions))
        return state.advance(state.models - state.lr * fedavg_aggregate(updates))


def fedsgd_round(state, partitions):
    return FedSGD().play_round(state, partitions)


def fedavg_round(state, partitions):
    return FedAvg().play_round(state, partitions)


def boost_mask(losses) -> list[bool]:
    """Clients whose loss is strictly above the cross-client median."""
    gate = median(losses)
    return [l > gate for l in losses]


class LoAdaBoost(FedAvg):
    """Loss-gated FedAvg: clients above the median training loss get one more epoch."""

    name = "loadaboost"

    def client_phase(self, state, partitions):
        start = state.models[0]
        trained = [super(LoAdaBoost, self).client_update(state, p.client_id, p) for p in partitions]
        losses = [loss(start + u.delta, p.train) for u, p in zip(trained, partitions)]
        out = []
        for u, p, boost in zip(trained, partitions, boost_mask(losses)):
            if boost:
                theta = sgd_epochs(start + u.delta, p.train, 1, state.batch_size, state.lr,
                                   round_seed(state.master_seed, p.client_id, state.round, _BOOST_STREAM))
                u = ClientUpdate(u.client_id, theta - start, u.train_size)
            out.append(u)
        return out


def loadaboost_round(state, partitions):
    return LoAdaBoost().play_round(state, partitions)


class LocalOnly(Strategy):
    name = "local"
    personal = True
    communicates = False

    def server_phase(self, state, updates, partitions):
        _check_updates(updates, state.models.shape[0])
        return state.advance(state.models + np.stack([u.delta for u in updates]))


def local_only_round(state, partitions):
    return LocalOnly().play_round(state, partitions)


def pool_train(partitions: Sequence[ClientPartition]) -> Dataset:
    if not partitions:
        raise ContractError("nothing to pool")
    ordered = sorted(partitions, key=lambda p: p.client_id)
    pooled = Dataset.concat([p.train for p in ordered])
    if len(pooled) == 0:
        raise ContractError("pooled training set is empty")
    return pooled


class Centralized(Strategy):
    """One model trained on every client's train share pooled in client-id order."""

    name = "centralized"
    communicates = False

    def client_phase(self, state, partitions):
        pooled = pool_train(partitions)
        return [local_train(state.models[0], pooled, rng_seed=round_seed(state.master_seed, 0, state.round),
                            **_train_kwargs(state))]

    def server_phase(self, state, updates, partitions):
        return state.advance(state.models + updates[0].delta)


def centralized_train(partitions, rounds: int = 1, **hyper) -> np.ndarray:
    strat = Centralized()
    state = strat.init_state(1, partitions[0].train.dim, **hyper) if partitions else None
    if state is None:
        raise ContractError("nothing to pool")
    for _ in range(rounds):
        state = strat.play_round(state, partitions)
    return state.models[0]


STRATEGIES = {cls.name: cls for cls in (FedSmart, FedAvg, FedSGD, LoAdaBoost, LocalOnly, Centralized)}


def get_strategy(name: str) -> Strategy:
    try:
        return STRATEGIES[name]()
    except KeyError:
        raise ContractError(f"unknown strategy {name!r}") from None
