"""Separate-process server and client for TCP runs.

Each client builds only its own partition, trains locally and talks to the
server over the line protocol. FedSmart clients receive the packed peer
deltas and do the evaluation and mixing themselves; FedAvg and FedSGD
clients receive the new global model instead.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .algorithms import fedavg_aggregate, fedsmart_client_step, round_seed
from .config import ConfigError, ExperimentConfig
from .data import build_client, specs_for
from .model import accuracy, gradient, local_train
from .transport import UpdateClient, UpdateServer

log = logging.getLogger(__name__)

DISTRIBUTED = ("fedsmart", "fedavg", "fedsgd")


def _check(cfg: ExperimentConfig):
    if cfg.strategy not in DISTRIBUTED:
        raise ConfigError(f"distributed mode supports {DISTRIBUTED}, not {cfg.strategy!r}")


def serve(cfg: ExperimentConfig, host: str = "127.0.0.1", port: int = 0, on_ready=None) -> np.ndarray | None:
    """Run the server side of every round. Returns the final global model, if any.

    ``on_ready`` is called with the bound ``(host, port)`` once listening.
    """
    _check(cfg)
    server = UpdateServer(cfg.n_clients, cfg.dim, host, port)
    if on_ready is not None:
        on_ready(server.address)
    log.info("listening on %s:%s", *server.address)
    model = np.zeros(cfg.dim + 1)
    try:
        server.accept_clients(model)
        for t in range(cfg.rounds):
            updates = server.collect(t)
            if cfg.strategy == "fedsmart":
                server.relay(t, updates)
                continue
            step = fedavg_aggregate(updates)
            model = model + step if cfg.strategy == "fedavg" else model - cfg.lr * step
            server.broadcast(t, model)
    finally:
        server.shutdown(cfg.rounds)
    return None if cfg.strategy == "fedsmart" else model


@dataclass
class ClientOutcome:
    client_id: int
    params: np.ndarray
    weights: np.ndarray | None
    val_accuracy: list[float]


def run_client(cfg: ExperimentConfig, client_id: int, host: str, port: int) -> ClientOutcome:
    _check(cfg)
    if not 0 <= client_id < cfg.n_clients:
        raise ConfigError(f"client id {client_id} outside 0..{cfg.n_clients - 1}")
    part = build_client(cfg, client_id, specs_for(cfg))
    client = UpdateClient(client_id, cfg.dim)
    theta = client.connect(host, port, len(part.train))
    weights = np.full(cfg.n_clients, 1.0 / cfg.n_clients) if cfg.strategy == "fedsmart" else None
    history = []
    try:
        for t in range(cfg.rounds):
            if cfg.strategy == "fedsgd":
                delta = gradient(theta, part.train)
            else:
                delta = local_train(theta, part.train, cfg.epochs, cfg.batch_size, cfg.lr,
                                    round_seed(cfg.master_seed, client_id, t), client_id).delta
            client.send_update(t, delta)
            package = client.receive_round(t)
            if package is None:
                break
            deltas, params = package
            if cfg.strategy == "fedsmart":
                theta, weights = fedsmart_client_step(theta, weights, np.stack(deltas), part.validation, cfg.eta)
            else:
                theta = params
            history.append(accuracy(theta, part.validation))
        client.wait_shutdown()
    finally:
        client.close()
    return ClientOutcome(client_id, theta, weights, history)
