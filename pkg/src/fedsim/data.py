"""Synthetic stand-in for the ICU mortality table: 10 binary features, binary label.

Features mimic GENDER, AGE and eight DRUGS indicators. Clients come in pairs
that share a generating distribution; pairs differ by a rotation of the true
coefficients and feature marginals.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .model import ContractError, Dataset, sigmoid

FEATURE_NAMES = ["gender", "age"] + [f"drug_{k}" for k in range(8)]

# seed-stream tags so data, splits and training never share a random stream
_SPEC_STREAM = 11
_SAMPLE_STREAM = 12
_SPLIT_STREAM = 13
_UPSAMPLE_STREAM = 14

# logit of the pre-upsampling positive rate; roughly 1 in 4 patients die
_BASE_LOGIT = float(np.log(0.25 / 0.75))
_BIAS_OFFSET = 0.45
_GENDER_MARGINAL = 0.55


@dataclass(frozen=True)
class DistributionSpec:
    beta: np.ndarray
    bias: float
    feature_marginals: np.ndarray
    label_noise: float

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        marg = np.asarray(self.feature_marginals, dtype=np.float64)
        if beta.shape != marg.shape or beta.ndim != 1:
            raise ContractError("beta and feature_marginals must be vectors of equal length")
        if np.any(marg < 0) or np.any(marg > 1):
            raise ContractError("feature_marginals must lie in [0, 1]")
        if not 0.0 <= self.label_noise < 0.5:
            raise ContractError("label_noise must lie in [0, 0.5)")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "feature_marginals", marg)

    @property
    def dim(self) -> int:
        return self.beta.shape[0]


@dataclass(frozen=True)
class ClientPartition:
    client_id: int
    train: Dataset
    validation: Dataset
    distribution_id: int
    raw_train_size: int  # train share before minority up-sampling


def derive_specs(master_seed: int, n_specs: int, dim: int = 10,
                 label_noise: float = 0.0) -> list[DistributionSpec]:
    """Latent distributions for ``n_specs`` client groups.

    Feature 0 (gender) has the same weight and marginal everywhere. The other
    ``dim - 1`` coefficients are integers in {-2, -1, 1, 2}; group ``k`` uses
    the same core vector rotated by ``k`` blocks, so groups differ only by
    which features carry which effect. With several blocks the last block
    cancels the sum of the others, which keeps the rotated groups from
    sharing a common direction.

    Coefficients are integers and the bias sits on the grid ``Z + 0.45``, so
    every logit is at least 0.45 from the decision boundary both before and
    after the ln 3 shift caused by three-fold up-sampling.
    """
    if n_specs < 1 or dim < 2:
        raise ContractError(f"need n_specs >= 1 and dim >= 2, got {n_specs}, {dim}")
    rng = np.random.default_rng([master_seed, _SPEC_STREAM])
    n_core = dim - 1
    core = rng.choice(np.array([-2.0, -1.0, 1.0, 2.0]), size=n_core)
    shift = n_core // n_specs
    if n_specs > 1 and shift and n_core % n_specs == 0:
        blocks = core.reshape(n_specs, shift)
        blocks[-1] = -blocks[:-1].sum(axis=0)
        core = blocks.ravel()
    core_marginals = rng.uniform(0.2, 0.8, size=n_core)
    specs = []
    for k in range(n_specs):
        beta = np.concatenate([[1.0], np.roll(core, k * shift)])
        marginals = np.concatenate([[_GENDER_MARGINAL], np.roll(core_marginals, k * shift)])
        bias = np.floor(_BASE_LOGIT - beta @ marginals) + _BIAS_OFFSET
        specs.append(DistributionSpec(beta, float(bias), marginals, label_noise))
    return specs


def generate_client_data(spec: DistributionSpec, n_samples: int, seed) -> Dataset:
    if n_samples < 1:
        raise ContractError(f"n_samples must be >= 1, got {n_samples}")
    rng = np.random.default_rng(seed)
    U = rng.random((n_samples, spec.dim))
    # uniform columns go to features ranked by (beta, marginal), so specs that
    # only permute features get the same draws permuted the same way
    rank = np.lexsort((spec.feature_marginals, spec.beta))
    Uf = np.empty_like(U)
    Uf[:, rank] = U
    X = (Uf < spec.feature_marginals).astype(np.float64)
    p = sigmoid(X @ spec.beta + spec.bias)
    y = (rng.random(n_samples) < p).astype(np.int64)
    flip = rng.random(n_samples) < spec.label_noise
    y = np.where(flip, 1 - y, y)
    return Dataset(X, y)


def minority_class(y: np.ndarray) -> int:
    """Class with fewer examples; class 0 on a tie."""
    pos = int(y.sum())
    return 1 if pos < len(y) - pos else 0


def upsample_minority(data: Dataset, factor: int, seed) -> Dataset:
    if factor < 1:
        raise ContractError(f"factor must be >= 1, got {factor}")
    pos = int(data.y.sum())
    if pos == 0 or pos == len(data):
        raise ContractError("cannot up-sample a single-class dataset")
    minority = np.flatnonzero(data.y == minority_class(data.y))
    idx = np.concatenate([np.arange(len(data))] + [minority] * (factor - 1))
    rng = np.random.default_rng(seed)
    return data.take(idx[rng.permutation(len(idx))])


def split_indices(n: int, alpha: float, seed) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < alpha < 1.0:
        raise ContractError(f"alpha must lie in (0, 1), got {alpha}")
    if n < 2:
        raise ContractError(f"need at least 2 examples to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_val = max(1, int(np.floor(alpha * n)))
    return perm[n_val:], perm[:n_val]


def split_validation(data: Dataset, alpha: float, seed) -> tuple[Dataset, Dataset]:
    train_idx, val_idx = split_indices(len(data), alpha, seed)
    return data.take(train_idx), data.take(val_idx)


def distribution_ids(cfg: ExperimentConfig) -> list[int]:
    if cfg.heterogeneity == "iid":
        return [0] * cfg.n_clients
    if cfg.n_clients % 2:
        raise ConfigError(f"paired clients need an even count, got {cfg.n_clients}")
    half = cfg.n_clients // 2
    return [i % half for i in range(cfg.n_clients)]


def designated_pair(client_id: int, n_clients: int) -> int:
    half = n_clients // 2
    return (client_id + half) % n_clients


def specs_for(cfg: ExperimentConfig) -> list[DistributionSpec]:
    # IID runs use group 0 of the same draw, so IID and paired runs are comparable
    return derive_specs(cfg.master_seed, max(1, cfg.n_clients // 2), cfg.dim, cfg.label_noise)


def build_client(cfg: ExperimentConfig, client_id: int,
                 specs: list[DistributionSpec] | None = None) -> ClientPartition:
    dist = distribution_ids(cfg)[client_id]
    if specs is None:
        specs = specs_for(cfg)
    raw = generate_client_data(specs[dist], cfg.samples_per_client,
                               [cfg.master_seed, _SAMPLE_STREAM, client_id])
    train, val = split_validation(raw, cfg.alpha, [cfg.master_seed, _SPLIT_STREAM, client_id])
    # up-sampling touches the train share only so validation keeps the natural class balance
    up = upsample_minority(train, cfg.upsample_factor, [cfg.master_seed, _UPSAMPLE_STREAM, client_id])
    return ClientPartition(client_id, up, val, dist, len(train))


def build_paired_clients(cfg: ExperimentConfig) -> list[ClientPartition]:
    distribution_ids(cfg)  # rejects odd paired configs before any work
    specs = specs_for(cfg)
    return [build_client(cfg, i, specs) for i in range(cfg.n_clients)]


def dump_partitions(partitions: list[ClientPartition], outdir) -> list[Path]:
    """Write ``client_<id>.csv`` files with a ``split`` column (train/val)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for part in partitions:
        path = outdir / f"client_{part.client_id}.csv"
        dim = part.train.dim
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"feature_{k}" for k in range(dim)] + ["label", "split"])
            for split, ds in (("train", part.train), ("val", part.validation)):
                for row, label in zip(ds.X, ds.y):
                    w.writerow([repr(float(v)) for v in row] + [int(label), split])
        paths.append(path)
    return paths


def read_partition_csv(path) -> tuple[Dataset, Dataset]:
    rows = {"train": ([], []), "val": ([], [])}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 2
        for rec in reader:
            X, y = rows[rec[-1]]
            X.append([float(v) for v in rec[:dim]])
            y.append(int(rec[dim]))
    out = []
    for split in ("train", "val"):
        X, y = rows[split]
        out.append(Dataset(np.array(X, dtype=np.float64).reshape(len(y), dim), np.array(y, dtype=np.int64)))
    return out[0], out[1]
