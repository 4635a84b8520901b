"""Pipeline configuration: one flat, self-describing set of defaults.

Every tunable of the pipeline lives here so a sweep is a one-key override.
Configs load from a flat YAML mapping; unknown keys are rejected by name.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ConfigError
from .fill import MfConfig
from .mlp import MlpConfig


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from a tuple of printable parts."""
    text = "|".join(repr(p) for p in parts)
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass(frozen=True)
class PipelineConfig:
    # hybrid filtering
    k: float = 0.5
    min_neighbors: int = 5
    context_filter: bool = True
    # collaborative fill; "majority_sign" is reserved but not implemented
    deviation_mode: str = "signed_mean"
    # factorization fill
    mf_rank: int = 10
    mf_learning_rate: float = 0.005
    mf_regularization: float = 0.02
    mf_epochs: int = 500
    # level-1 regression networks
    nrl1_hidden_sizes: tuple = (256, 128)
    nrl1_learning_rate: float = 0.01
    nrl1_momentum: float = 0.9
    nrl1_epochs: int = 50
    nrl1_min_gradient: float = 1e-5
    # level-2 regression network
    nrl2_hidden_sizes: tuple = (2,)
    nrl2_learning_rate: float = 0.01
    nrl2_momentum: float = 0.9
    nrl2_epochs: int = 1000
    nrl2_min_gradient: float = 1e-5
    # controller
    t_d: int = 200
    lambda_size: int | None = None  # tuples used to train level-2; defaults to t_d
    controller_mode: str = "fast"  # "fast" (held-out rows) or "exact" (per-cell retraining)
    # numerics
    activation: str = "sigmoid"
    dtype: str = "float32"
    threads: int = 1

    def __post_init__(self):
        if not 0.0 <= self.k <= 1.0:
            raise ConfigError("k must be in [0, 1]")
        if self.min_neighbors < 1:
            raise ConfigError("min_neighbors must be >= 1")
        if self.deviation_mode != "signed_mean":
            raise ConfigError(
                f"deviation_mode {self.deviation_mode!r} is not implemented; "
                "only 'signed_mean' is available"
            )
        if self.t_d < 1:
            raise ConfigError("t_d must be >= 1")
        if self.lambda_size is not None and self.lambda_size < 1:
            raise ConfigError("lambda_size must be >= 1")
        if self.controller_mode not in ("fast", "exact"):
            raise ConfigError(f"controller_mode must be fast or exact, got {self.controller_mode!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        object.__setattr__(self, "nrl1_hidden_sizes", tuple(int(h) for h in self.nrl1_hidden_sizes))
        object.__setattr__(self, "nrl2_hidden_sizes", tuple(int(h) for h in self.nrl2_hidden_sizes))
        # constructing the sub-configs validates the remaining fields
        self.nrl1_config(0)
        self.nrl2_config(0)
        self.mf_config(0)

    @property
    def effective_lambda_size(self) -> int:
        return self.t_d if self.lambda_size is None else self.lambda_size

    def nrl1_config(self, seed: int) -> MlpConfig:
        return MlpConfig(
            hidden_sizes=self.nrl1_hidden_sizes,
            learning_rate=self.nrl1_learning_rate,
            momentum=self.nrl1_momentum,
            max_epochs=self.nrl1_epochs,
            min_gradient=self.nrl1_min_gradient,
            seed=seed,
            activation=self.activation,
            dtype=self.dtype,
        )

    def nrl2_config(self, seed: int) -> MlpConfig:
        return MlpConfig(
            hidden_sizes=self.nrl2_hidden_sizes,
            learning_rate=self.nrl2_learning_rate,
            momentum=self.nrl2_momentum,
            max_epochs=self.nrl2_epochs,
            min_gradient=self.nrl2_min_gradient,
            seed=seed,
            activation=self.activation,
            dtype=self.dtype,
        )

    def mf_config(self, seed: int) -> MfConfig:
        return MfConfig(
            rank=self.mf_rank,
            learning_rate=self.mf_learning_rate,
            regularization=self.mf_regularization,
            epochs=self.mf_epochs,
            seed=seed,
        )

    def replace(self, **overrides) -> "PipelineConfig":
        bad = set(overrides) - {f.name for f in dataclasses.fields(self)}
        if bad:
            raise ConfigError(f"unknown configuration key(s): {', '.join(sorted(bad))}")
        return dataclasses.replace(self, **overrides)

    def as_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["nrl1_hidden_sizes"] = list(self.nrl1_hidden_sizes)
        out["nrl2_hidden_sizes"] = list(self.nrl2_hidden_sizes)
        return out

    def resolved_lines(self) -> list:
        """Stable ``key = value`` lines for report provenance."""
        return [f"{k} = {v!r}" for k, v in sorted(self.as_dict().items())]


def load_config(path) -> PipelineConfig:
    """Load a flat YAML mapping of config keys; unknown keys are rejected."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if raw is None:
        return PipelineConfig()
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a key-value mapping")
    for key in ("nrl1_hidden_sizes", "nrl2_hidden_sizes"):
        if key in raw:
            raw[key] = tuple(raw[key])
    return PipelineConfig().replace(**raw)


def save_config(config: PipelineConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config.as_dict(), sort_keys=True))
