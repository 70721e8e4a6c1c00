"""Experiment configuration: plain key-value files with validated defaults."""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

__all__ = ["ExperimentConfig", "ConfigError", "parse_config", "parse_config_text", "serialize_config"]


class ConfigError(ValueError):
    """Configuration file problem, annotated with the offending line."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one benchmark campaign.

    Defaults follow the standard protocol: 40 iterations, 15 repetitions,
    delta 0.05, rho 0.15, tau 0.001, eta 0.1, one supplementary task evaluated
    2 * dimension times per iteration, disturbance factor 0.3.
    """

    problem: str = "branin"
    dimension: int = 0                  # 0 keeps the problem's default
    threshold: float = 0.0              # 0 keeps the problem's default
    n_tasks: int = 2
    disturbance: float = 0.3
    algorithm: str = "samsbo"           # comma-separated list allowed
    iterations: int = 40
    repetitions: int = 15
    delta: float = 0.05
    rho: float = 0.15
    tau: float = 0.001
    eta: float = 0.1
    supplementary_batch: int = 0        # 0 selects 2 * dimension
    seed: int = 0
    grid_size: int = 2048
    lengthscale: float = 0.2
    signal_variance: float = 1.0
    noise_variance: float = 0.01
    observation_noise: float = 0.01
    mcmc_samples: int = 200
    mcmc_chains: int = 2
    mcmc_burn_in: float = 0.5
    mcmc_target_acceptance: float = 0.3
    refresh_every: int = 1
    include_psi: bool = False
    seed_points: int = 3
    frequentist_trials: int = 500
    bayesian_trials: int = 200
    jobs: int = 1
    out: str = "results"

    def __post_init__(self):
        for name in ("delta", "rho", "tau", "mcmc_burn_in", "mcmc_target_acceptance"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {value}")
        if self.eta <= 0.0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if self.problem not in ("branin", "powell", "laser"):
            raise ConfigError(f"unknown problem {self.problem!r}")
        if self.iterations < 0 or self.repetitions < 1:
            raise ConfigError("iterations must be >= 0 and repetitions >= 1")
        for name in self.algorithms():
            if name not in ("samsbo", "safe-ucb", "ucb", "multi-task-ucb"):
                raise ConfigError(f"unknown algorithm {name!r}")

    def algorithms(self) -> list[str]:
        return [a.strip() for a in self.algorithm.split(",") if a.strip()]


_BOOL_WORDS = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


def _coerce(name: str, kind: type, raw: str, line_no: int):
    raw = raw.strip()
    try:
        if kind is bool:
            return _BOOL_WORDS[raw.lower()]
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except (ValueError, KeyError):
        raise ConfigError(f"line {line_no}: cannot parse {name} value {raw!r} as {kind.__name__}")


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines; '#' starts a comment, blank lines are ignored."""
    field_types = {f.name: f.type for f in fields(ExperimentConfig)}
    resolved = {f.name: type(getattr(ExperimentConfig(), f.name)) for f in fields(ExperimentConfig)}
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in field_types:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        values[key] = _coerce(key, resolved[key], raw, line_no)
    return ExperimentConfig(**values)


def parse_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_config_text(handle.read())


def serialize_config(config: ExperimentConfig) -> str:
    """Key-value text that parses back to an equal configuration."""
    lines = []
    for f in fields(ExperimentConfig):
        value = getattr(config, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
