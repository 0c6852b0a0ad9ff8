"""Flat ``key = value`` run configuration.

One file fully determines a run.  Lines starting with ``#`` are comments.
Unknown keys are rejected so a typo cannot silently fall back to a default.

Keys (defaults in :data:`DEFAULTS`)::

    image_seed, text_seed, init_seed, data_seed, train_seed, kmeans_seed
    d_e, hidden, d_t                   model dimensions
    temperature, epsilon_rel           interpolation factor estimator
    kmeans_k, kmeans_iters             k-means prototype ablation
    lr, steps, batch_size              decoder SGD
    n_train, n_val, n_proto            samples per domain and split
    pretrain_domain                    domain index 0
    finetune_domains                   comma list, order = factor index 1..N
    unseen_domains                     comma list, evaluated only
    method                             default method for ``eval``
    sweep_steps                        grid size of the lambda sweep
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from ..errors import ConfigError
from ..estimator import EstimatorConfig
from ..toymodel import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    image_seed: int = 0
    text_seed: int = 0
    init_seed: int = 0
    data_seed: int = 0
    train_seed: int = 0
    kmeans_seed: int = 0
    d_e: int = 32
    hidden: int = 64
    d_t: int = 16
    temperature: float = 0.01
    epsilon_rel: float = 1e-4
    kmeans_k: int = 8
    kmeans_iters: int = 50
    lr: float = 0.05
    steps: int = 2000
    batch_size: int = 32
    n_train: int = 600
    n_val: int = 300
    n_proto: int = 600
    pretrain_domain: str = "base"
    finetune_domains: tuple[str, ...] = ("shift-dark", "shift-texture")
    unseen_domains: tuple[str, ...] = ("mix-unseen",)
    method: str = "dwi"
    sweep_steps: int = 11

    def train_config(self, domain_index: int = 0) -> TrainConfig:
        return TrainConfig(lr=self.lr, steps=self.steps, batch_size=self.batch_size,
                           seed=self.train_seed * 1000 + domain_index)

    def estimator_config(self, **overrides) -> EstimatorConfig:
        return EstimatorConfig(temperature=self.temperature, **overrides)

    @property
    def seen_domains(self) -> tuple[str, ...]:
        return (self.pretrain_domain,) + self.finetune_domains

    @property
    def all_domains(self) -> tuple[str, ...]:
        return self.seen_domains + self.unseen_domains

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    def to_text(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            if isinstance(v, tuple):
                v = ",".join(v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def echo(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


DEFAULTS = RunConfig()


def _coerce(name: str, raw: str, default):
    try:
        if isinstance(default, tuple):
            return tuple(x.strip() for x in raw.split(",") if x.strip())
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"bad value for {name}: {raw!r}") from e


def parse_config(text: str, base: RunConfig = DEFAULTS) -> RunConfig:
    known = {f.name: getattr(base, f.name) for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw, known[key])
    cfg = replace(base, **values)
    validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text)


def validate(cfg: RunConfig) -> None:
    if cfg.temperature <= 0:
        raise ConfigError("temperature must be positive")
    if cfg.epsilon_rel <= 0:
        raise ConfigError("epsilon_rel must be positive")
    if min(cfg.d_e, cfg.hidden, cfg.d_t) < 1:
        raise ConfigError("model dimensions must be positive")
    if min(cfg.n_train, cfg.n_val, cfg.n_proto) < 1 or cfg.steps < 1:
        raise ConfigError("n_train, n_val, n_proto and steps must be >= 1")
    if cfg.sweep_steps < 2:
        raise ConfigError("sweep_steps must be >= 2")
    if len(set(cfg.seen_domains)) != len(cfg.seen_domains):
        raise ConfigError("domain names must be unique")
