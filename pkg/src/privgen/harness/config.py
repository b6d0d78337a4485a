"""Run configuration: flat `key = value` files with command-line overrides.

Precedence is CLI `--set key=value` > config file > defaults. Cross-field
constraints (batch size vs neighborhood size, dimension consistency) are
checked once at load so later stages can assume a coherent configuration.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

from .. import privacy as pv
from .. import sampler as hmc
from .. import scoremodel as sm
from .. import training as tr
from . import formats


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # data
    dataset: str = "mixture2(6)"  # generator spec or a path to dataset files
    n_train: int = 4000
    n_test: int = 1000
    test_fraction: float = 0.2
    # model
    embed_dim: int = 8
    hidden_dims: tuple = (64,)
    activation: str = "tanh"
    normalize_features: bool = True  # map features into [-1, 1] by the declared range
    # training
    epsilon: float = 10.0
    k: int = 10
    batch_size: int = 128
    iterations: int = 1500
    learning_rate: float = 2e-3
    optimizer: str = "adam"
    checkpoint_interval: int = 0  # 0 disables intermediate checkpoints
    # sampling: clamped decay with many refreshes plus the Metropolis
    # correction keeps chains from wandering off the learned density
    lambda0: float = 1e-3
    outer_iterations: int = 200
    leapfrog_steps: int = 25
    kinetic: str = "gaussian"
    metropolis: str = "path_integral"
    path_steps: int = 16
    max_step_multiplier: float = 40.0  # 0 disables the clamp
    n_generate: int = 2000
    # evaluation
    classifier_epochs: int = 400
    classifier_lr: float = 0.5
    # bookkeeping
    out_dir: str = "runs/out"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.batch_size < self.k:
            raise ConfigError(
                f"batch_size {self.batch_size} must be at least neighborhood size k={self.k}"
            )
        if self.n_generate < 2:
            raise ConfigError("n_generate must be at least 2")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must be in (0, 1)")
        try:
            pv.RRConfig(self.epsilon, self.k)
            hmc.KineticSpec.parse(self.kinetic)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.metropolis not in ("off", "exact_energy", "path_integral"):
            raise ConfigError("metropolis must be off, exact_energy, or path_integral")
        if self.metropolis == "exact_energy":
            raise ConfigError("exact_energy needs a potential oracle; only library callers can supply one")

    # pieces consumed by the pipeline
    def rr_config(self) -> pv.RRConfig:
        return pv.RRConfig(self.epsilon, self.k)

    def train_config(self) -> tr.TrainConfig:
        return tr.TrainConfig(
            batch_size=self.batch_size,
            iterations=self.iterations,
            learning_rate=self.learning_rate,
            rr=self.rr_config(),
            optimizer=self.optimizer,
            seed=self.seed,
        )

    def mlp_spec(self, feature_dim: int) -> sm.MLPSpec:
        return sm.MLPSpec(
            input_dim=feature_dim + self.embed_dim,
            hidden_dims=self.hidden_dims,
            activation=self.activation,
            seed=self.seed,
        )

    def sampler_config(self, init_lo, init_hi) -> hmc.SamplerConfig:
        return hmc.SamplerConfig(
            lambda0=self.lambda0,
            outer_iterations=self.outer_iterations,
            leapfrog_steps=self.leapfrog_steps,
            kinetic=hmc.KineticSpec.parse(self.kinetic),
            metropolis=self.metropolis,
            path_steps=self.path_steps,
            n_chains=self.n_generate,
            init_lo=init_lo,
            init_hi=init_hi,
            max_step_multiplier=self.max_step_multiplier or None,
            seed=self.seed + 1,
        )


_INT_KEYS = {
    "n_train", "n_test", "embed_dim", "k", "batch_size", "iterations",
    "checkpoint_interval", "outer_iterations", "leapfrog_steps", "path_steps",
    "n_generate", "classifier_epochs", "seed",
}
_FLOAT_KEYS = {
    "test_fraction", "epsilon", "learning_rate", "lambda0", "classifier_lr",
    "max_step_multiplier",
}
_BOOL_KEYS = {"normalize_features"}


def _coerce(key: str, raw: str):
    raw = raw.strip()
    if key == "hidden_dims":
        if not raw:
            return ()
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _BOOL_KEYS:
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key} expects a boolean, got {raw!r}")
    return raw


def parse_overrides(pairs):
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        out[key.strip()] = value.strip()
    return out


def load_run_config(path=None, overrides=None) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    raw = {}
    if path is not None:
        raw.update(formats.read_kv(path))
    raw.update(parse_overrides(overrides))
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    try:
        kwargs = {k: _coerce(k, str(v)) for k, v in raw.items()}
        return RunConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def config_text(cfg: RunConfig) -> str:
    lines = []
    for f in sorted(fields(RunConfig), key=lambda f: f.name):
        value = getattr(cfg, f.name)
        if f.name == "hidden_dims":
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(config_text(cfg).encode()).hexdigest()
