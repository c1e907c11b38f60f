"""Run configuration: defaults, key=value file parsing, validation."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import ConfigError
from .model import BasisDictionary, SESSION_SECONDS


@dataclass
class RunConfig:
    dictionary_size: int = 10
    tau_min: float = 1e-6
    tau_max: float = 1.0
    baseline_bins: int = 17
    session_open: float = 0.0
    session_close: float = SESSION_SECONDS
    min_events: int = 1000
    ridge: float = 1e-8
    seed: int = 12345
    control_replicates: int = 10
    window_days: int = 20
    max_events: int = 10_000_000
    jobs: int = 1
    half_tick: float = 0.25
    open_price: float = 4500.0

    def validate(self) -> "RunConfig":
        if self.dictionary_size < 1:
            raise ConfigError("dictionary_size must be >= 1")
        if self.tau_min <= 0 or self.tau_max <= 0:
            raise ConfigError("timescales must be positive")
        if self.dictionary_size > 1 and not self.tau_min < self.tau_max:
            raise ConfigError("tau_min must be smaller than tau_max")
        if self.baseline_bins < 1:
            raise ConfigError("baseline_bins must be >= 1")
        if not self.session_open < self.session_close:
            raise ConfigError("session_open must precede session_close")
        if self.min_events < 1:
            raise ConfigError("min_events must be >= 1")
        if self.ridge < 0:
            raise ConfigError("ridge must be nonnegative")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.control_replicates < 1:
            raise ConfigError("control_replicates must be >= 1")
        if self.window_days < 1:
            raise ConfigError("window_days must be >= 1")
        if self.max_events < 1:
            raise ConfigError("max_events must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.half_tick <= 0:
            raise ConfigError("half_tick must be positive")
        if self.open_price <= 0:
            raise ConfigError("open_price must be positive")
        return self

    @property
    def session(self) -> tuple:
        return (self.session_open, self.session_close)

    def basis(self) -> BasisDictionary:
        return BasisDictionary.log_spaced(
            self.dictionary_size, self.tau_min, self.tau_max
        )

    def edges(self) -> np.ndarray:
        return np.linspace(
            self.session_open, self.session_close, self.baseline_bins + 1
        )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_INT_FIELDS = {
    "dictionary_size", "baseline_bins", "min_events", "seed",
    "control_replicates", "window_days", "max_events", "jobs",
}


def parse_config(path) -> RunConfig:
    """Plain key = value file; unknown keys are rejected with their line."""
    overrides = {}
    valid = {f.name for f in fields(RunConfig)}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in valid:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            try:
                overrides[key] = int(value) if key in _INT_FIELDS else float(value)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key!r}") from exc
    return replace(RunConfig(), **overrides).validate()
