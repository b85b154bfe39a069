"""Run configuration: flat key=value files, validation, stable hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .existence import UPDATE_SOURCES
from .querybank import STRATEGIES

ENCODER_BACKENDS = ("reference", "pretrained")
GROUNDING_SUBSETS = ("all", "present")


@dataclass
class RunConfig:
    """Everything a training or evaluation run needs, one flat record."""

    learning_rate: float = 5e-5
    dropout: float = 0.3
    batch_size: int = 8
    seed: int = 0
    lambda1: float = 1.0
    lambda2: float = 2.0
    encoder: str = "reference"
    query_strategy: str = "keyword_annotation"
    boundary_threshold: float = 0.5
    match_threshold: float = 0.5
    max_span_length: int = 16
    # Hyperparameter search stays inside these ranges; the configured
    # point itself must too.
    lr_min: float = 1e-5
    lr_max: float = 1e-4
    dropout_min: float = 0.1
    dropout_max: float = 0.6
    weight_decay: float = 0.01
    warmup_fraction: float = 0.1
    epochs: int = 20
    max_steps: int = 0  # 0 = no step cap
    checkpoint_every_epochs: int = 1
    early_stop_patience: int = 5
    omega_override: Optional[float] = None
    update_source: str = "start_end"
    share_scales: bool = False
    finetune_text: bool = True
    grounding_subset: str = "all"
    # Model shape (reference backend).
    dim: int = 64
    num_heads: int = 8
    text_hidden: int = 64
    text_layers: int = 2
    text_heads: int = 4
    vocab_size: int = 1024
    max_positions: int = 128

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.encoder not in ENCODER_BACKENDS:
            raise ValueError(f"encoder must be one of {ENCODER_BACKENDS}, got {self.encoder!r}")
        if self.query_strategy not in STRATEGIES:
            raise ValueError(f"query_strategy must be one of {STRATEGIES}")
        if self.update_source not in UPDATE_SOURCES:
            raise ValueError(f"update_source must be one of {UPDATE_SOURCES}")
        if self.grounding_subset not in GROUNDING_SUBSETS:
            raise ValueError(f"grounding_subset must be one of {GROUNDING_SUBSETS}")
        for name in ("boundary_threshold", "match_threshold"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must be in (0, 1), got {v}")
        if self.max_span_length < 1:
            raise ValueError("max_span_length must be at least 1")
        if not 0 < self.lr_min <= self.lr_max:
            raise ValueError("need 0 < lr_min <= lr_max")
        if not 0 <= self.dropout_min <= self.dropout_max < 1:
            raise ValueError("need 0 <= dropout_min <= dropout_max < 1")
        if not self.lr_min <= self.learning_rate <= self.lr_max:
            raise ValueError(
                f"learning_rate {self.learning_rate} outside the search range "
                f"[{self.lr_min}, {self.lr_max}]"
            )
        if not self.dropout_min <= self.dropout <= self.dropout_max:
            raise ValueError(
                f"dropout {self.dropout} outside the search range "
                f"[{self.dropout_min}, {self.dropout_max}]"
            )
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must be in [0, 1)")
        if self.epochs < 1 or self.max_steps < 0:
            raise ValueError("epochs must be >= 1 and max_steps >= 0")
        if self.omega_override is not None and not 0 < self.omega_override <= 1:
            raise ValueError("omega_override must be in (0, 1] when set")

    def to_text(self) -> str:
        """Canonical key = value serialization, sorted by key."""
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            value = getattr(self, f.name)
            lines.append(f"{f.name} = {'none' if value is None else value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]

    def model_fingerprint(self) -> str:
        """Hash of the fields that fix the network architecture and queries."""
        keys = (
            "encoder", "dim", "num_heads", "text_hidden", "text_layers", "text_heads",
            "vocab_size", "max_positions", "update_source", "share_scales",
            "query_strategy",
        )
        text = "\n".join(f"{k}={getattr(self, k)}" for k in keys)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def grid_points(self, n_lr: int = 4, n_dropout: int = 6) -> List[Tuple[float, float]]:
        """Log-spaced lr times linear dropout grid inside the declared ranges."""
        if n_lr < 1 or n_dropout < 1:
            raise ValueError("grid sizes must be at least 1")
        # exp(log(x)) can land a float ulp outside the range; clamp back.
        lrs = (
            [self.lr_min]
            if n_lr == 1
            else [
                min(
                    self.lr_max,
                    max(
                        self.lr_min,
                        math.exp(
                            math.log(self.lr_min)
                            + i * (math.log(self.lr_max) - math.log(self.lr_min)) / (n_lr - 1)
                        ),
                    ),
                )
                for i in range(n_lr)
            ]
        )
        drops = (
            [self.dropout_min]
            if n_dropout == 1
            else [
                self.dropout_min + i * (self.dropout_max - self.dropout_min) / (n_dropout - 1)
                for i in range(n_dropout)
            ]
        )
        return [(lr, dr) for lr in lrs for dr in drops]


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str):
    raw = raw.strip()
    ftype = _FIELD_TYPES[name]
    if name == "omega_override":
        return None if raw.lower() in ("none", "") else float(raw)
    if ftype == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if ftype == "int":
        return int(raw)
    if ftype == "float":
        return float(raw)
    return raw


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse flat ``key = value`` lines; unknown keys and bad values error."""
    values: Dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ValueError(f"{source}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _coerce(key, value)
        except ValueError as err:
            raise ValueError(f"{source}:{lineno}: {err}") from err
    return RunConfig(**values)


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), source=str(path))


def save_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(config.to_text(), encoding="utf-8")
