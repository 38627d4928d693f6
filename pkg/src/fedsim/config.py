"""Experiment configuration and the flat ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

STRATEGIES = ("fedsmart", "fedavg", "fedsgd", "loadaboost", "local", "centralized")
HETEROGENEITY = ("iid", "paired_noniid")
TRANSPORTS = ("inprocess", "tcp")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    n_clients: int = 6
    rounds: int = 100
    alpha: float = 0.25
    eta: float = 0.5
    lr: float = 0.1
    epochs: int = 1
    batch_size: int = 32
    samples_per_client: int = 3500
    upsample_factor: int = 3
    strategy: str = "fedsmart"
    master_seed: int = 0
    heterogeneity: str = "paired_noniid"
    transport: str = "inprocess"
    dim: int = 10
    label_noise: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        checks = [
            (self.n_clients >= 1, "n_clients must be >= 1"),
            (self.rounds >= 1, "rounds must be >= 1"),
            (0.0 < self.alpha < 1.0, "alpha must lie in (0, 1)"),
            (self.eta > 0.0, "eta must be > 0"),
            (self.lr > 0.0, "lr must be > 0"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.samples_per_client >= 2, "samples_per_client must be >= 2"),
            (self.upsample_factor >= 1, "upsample_factor must be >= 1"),
            (self.strategy in STRATEGIES, f"strategy must be one of {STRATEGIES}"),
            (self.heterogeneity in HETEROGENEITY, f"heterogeneity must be one of {HETEROGENEITY}"),
            (self.transport in TRANSPORTS, f"transport must be one of {TRANSPORTS}"),
            (self.dim >= 1, "dim must be >= 1"),
            (0.0 <= self.label_noise < 0.5, "label_noise must lie in [0, 0.5)"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if self.heterogeneity == "paired_noniid" and self.n_clients % 2:
            raise ConfigError(f"paired_noniid needs an even n_clients, got {self.n_clients}")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def data_key(self) -> tuple:
        """Fields the generated partitions depend on; strategy is deliberately absent."""
        return (self.master_seed, self.n_clients, self.samples_per_client, self.alpha,
                self.upsample_factor, self.heterogeneity, self.dim, self.label_noise)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_pairs(pairs, source="<overrides>") -> dict:
    out = {}
    for lineno, line in enumerate(pairs, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(path=None, overrides=(), base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Defaults, then file values, then ``key=value`` overrides."""
    values = (base or ExperimentConfig()).to_dict()
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
        values.update(parse_pairs(text.splitlines(), source=str(path)))
    values.update(parse_pairs(overrides))
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def dump_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())
