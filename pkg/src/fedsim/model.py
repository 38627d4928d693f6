"""Logistic classifier over binary features, trained with mini-batch SGD.

Parameters travel as a flat float64 vector ``[w_0, ..., w_{d-1}, bias]``;
:class:`ModelParams` is the named view over that vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.special import expit

LOSS_EPS = 1e-12


class ContractError(ValueError):
    """Raised when an operation is called outside its preconditions."""


@dataclass(frozen=True)
class Example:
    features: tuple[float, ...]
    label: int


@dataclass(frozen=True)
class ModelParams:
    weights: np.ndarray
    bias: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def zeros(cls, dim: int) -> "ModelParams":
        return cls(np.zeros(dim), 0.0)

    @classmethod
    def from_vector(cls, vec: Sequence[float]) -> "ModelParams":
        vec = np.asarray(vec, dtype=np.float64)
        return cls(vec[:-1].copy(), vec[-1])

    def to_vector(self) -> np.ndarray:
        return np.append(self.weights, self.bias)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return np.array_equal(self.to_vector(), other.to_vector())

    __hash__ = None


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    delta: np.ndarray
    train_size: int

    def __post_init__(self):
        if self.train_size <= 0:
            raise ContractError(f"train_size must be positive, got {self.train_size}")
        d = np.asarray(self.delta, dtype=np.float64)
        d.setflags(write=False)
        object.__setattr__(self, "delta", d)

    def __eq__(self, other):
        if not isinstance(other, ClientUpdate):
            return NotImplemented
        return (
            self.client_id == other.client_id
            and self.train_size == other.train_size
            and np.array_equal(self.delta, other.delta)
        )

    __hash__ = None


class Dataset:
    """Row-major feature matrix plus 0/1 labels.

    Stands in for a list of :class:`Example` so batch math stays vectorised.
    """

    __slots__ = ("X", "y", "Xa")

    def __init__(self, X, y):
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.ascontiguousarray(y, dtype=np.int64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ContractError(f"bad dataset shapes X{X.shape} y{y.shape}")
        # bias column appended once so logits and gradients are single matmuls
        Xa = np.hstack([X, np.ones((X.shape[0], 1))])
        for arr in (X, y, Xa):
            arr.setflags(write=False)
        self.X = X
        self.y = y
        self.Xa = Xa

    @classmethod
    def from_examples(cls, examples: Iterable[Example], dim: int | None = None) -> "Dataset":
        examples = list(examples)
        if not examples:
            if dim is None:
                raise ContractError("dimension required for an empty dataset")
            return cls(np.zeros((0, dim)), np.zeros(0, dtype=np.int64))
        X = np.array([e.features for e in examples], dtype=np.float64)
        y = np.array([e.label for e in examples], dtype=np.int64)
        return cls(X, y)

    @classmethod
    def concat(cls, parts: Sequence["Dataset"]) -> "Dataset":
        return cls(np.concatenate([p.X for p in parts]), np.concatenate([p.y for p in parts]))

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.y.shape[0]

    def __iter__(self) -> Iterator[Example]:
        for row, label in zip(self.X, self.y):
            yield Example(tuple(float(v) for v in row), int(label))

    def take(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx])

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return np.array_equal(self.X, other.X) and np.array_equal(self.y, other.y)

    __hash__ = None

    def __repr__(self):
        return f"Dataset(n={len(self)}, d={self.dim}, positives={int(self.y.sum())})"


def _as_dataset(data) -> Dataset:
    if isinstance(data, Dataset):
        return data
    examples = list(data)
    if not examples:
        raise ContractError("empty batch")
    return Dataset.from_examples(examples)


def _nonempty(data, what="batch") -> Dataset:
    ds = _as_dataset(data)
    if len(ds) == 0:
        raise ContractError(f"empty {what}")
    return ds


def sigmoid(z):
    return expit(np.asarray(z, dtype=np.float64))


def _logits(theta: np.ndarray, ds: Dataset) -> np.ndarray:
    return ds.Xa @ theta


def _check_dim(theta: np.ndarray, ds: Dataset):
    if ds.dim != theta.shape[0] - 1:
        raise ContractError(f"feature dimension {ds.dim} does not match model dimension {theta.shape[0] - 1}")


def _theta(params) -> np.ndarray:
    if isinstance(params, ModelParams):
        return params.to_vector()
    return np.asarray(params, dtype=np.float64)


def predict_proba(params, features) -> float:
    theta = _theta(params)
    x = np.asarray(features, dtype=np.float64)
    if x.shape != (theta.shape[0] - 1,):
        raise ContractError(f"expected {theta.shape[0] - 1} features, got shape {x.shape}")
    return float(sigmoid(np.array(x @ theta[:-1] + theta[-1]))[()])


def batch_proba(params, data) -> np.ndarray:
    theta = _theta(params)
    ds = _as_dataset(data)
    _check_dim(theta, ds)
    return sigmoid(_logits(theta, ds))


def loss(params, batch) -> float:
    """Mean binary cross-entropy with probabilities clamped to [eps, 1 - eps]."""
    theta = _theta(params)
    ds = _nonempty(batch)
    _check_dim(theta, ds)
    p = np.clip(sigmoid(_logits(theta, ds)), LOSS_EPS, 1.0 - LOSS_EPS)
    ll = np.where(ds.y == 1, np.log(p), np.log1p(-p))
    return float(-ll.sum() / len(ds))


def _grad(theta: np.ndarray, Xa: np.ndarray, y: np.ndarray) -> np.ndarray:
    r = expit(Xa @ theta) - y
    return (Xa.T @ r) / Xa.shape[0]


def gradient(params, batch) -> np.ndarray:
    theta = _theta(params)
    ds = _nonempty(batch)
    _check_dim(theta, ds)
    return _grad(theta, ds.Xa, ds.y)


def sgd_epochs(theta: np.ndarray, train: Dataset, epochs: int, batch_size: int, lr: float,
               rng_seed) -> np.ndarray:
    """Run mini-batch SGD and return the final parameter vector (input untouched)."""
    rng = np.random.default_rng(rng_seed)
    theta = theta.copy()
    m = len(train)
    for _ in range(epochs):
        order = rng.permutation(m)
        if batch_size >= m:
            # a full batch is the whole set; keep row order so it matches gradient() bitwise
            Xa, y = train.Xa, train.y
        else:
            Xa, y = train.Xa[order], train.y[order]
        for start in range(0, m, batch_size):
            stop = start + batch_size
            theta = theta - lr * _grad(theta, Xa[start:stop], y[start:stop])
    return theta


def local_train(params, train, epochs: int, batch_size: int, lr: float, rng_seed,
                client_id: int = 0) -> ClientUpdate:
    theta = _theta(params)
    ds = _nonempty(train, "training set")
    _check_dim(theta, ds)
    if epochs < 1 or batch_size < 1:
        raise ContractError(f"epochs and batch_size must be >= 1, got {epochs}, {batch_size}")
    if not lr >= 0:
        raise ContractError(f"learning rate must be nonnegative, got {lr}")
    final = sgd_epochs(theta, ds, epochs, batch_size, lr, rng_seed)
    return ClientUpdate(client_id, final - theta, len(ds))


def accuracy(params, data) -> float:
    """Share of examples where ``predict_proba >= 0.5`` matches the label."""
    theta = _theta(params)
    ds = _nonempty(data, "dataset")
    _check_dim(theta, ds)
    pred = (sigmoid(_logits(theta, ds)) >= 0.5).astype(np.int64)
    return int((pred == ds.y).sum()) / len(ds)
