"""
Copyright 2026 The popmarket Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
"""

import os
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import tomli
from pydantic import ConfigDict, Field, TypeAdapter, ValidationError, model_validator
from pydantic.dataclasses import dataclass

from .constants import (
    DEFAULT_CHAINS,
    DEFAULT_GENERATIONS,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_WINDOW,
    ENV_VAR_NESTING,
    ENV_VAR_PREFIX,
)
from .creation import StrategyProfile, default_profile
from .fitness_model import BitstringConfig, InitMode, MutationMode, Parameterization
from .inference import FitOptions
from .model import Condition
from .policies import CumulativeAdvantageMode, PolicyMixture, default_mixture
from .utils import merge_dicts, nest_dotted

STRICT = ConfigDict(extra="forbid")


@dataclass(config=STRICT)
class PolicySettings:
    pi: PolicyMixture = Field(default_factory=lambda: default_mixture(Condition.PI))
    npi: PolicyMixture = Field(default_factory=lambda: default_mixture(Condition.NPI))

    @model_validator(mode="after")
    def _npi_hides_popularity(self) -> "PolicySettings":
        if self.npi.popularity_weight > 0.0:
            raise ValueError("npi.cum_adv and npi.balancing must be 0, popularity is not shown in NPI")
        return self


@dataclass(config=STRICT)
class StrategySettings:
    pi: StrategyProfile = Field(default_factory=lambda: default_profile(Condition.PI))
    npi: StrategyProfile = Field(default_factory=lambda: default_profile(Condition.NPI))


@dataclass(config=STRICT)
class FitnessSettings:
    n_bits: int = Field(default=64, ge=1)
    mu_low: float = 2
    mu_high: float = 16
    mu_mode: MutationMode = MutationMode.COUNT
    selection_probability: float = Field(default=0.5, ge=0.0, le=1.0)
    c_mode: CumulativeAdvantageMode = CumulativeAdvantageMode.ARGMAX
    chains: int = Field(default=DEFAULT_CHAINS, ge=1)
    generations: int = Field(default=DEFAULT_GENERATIONS, ge=1)
    window: int = Field(default=DEFAULT_WINDOW, ge=1)
    init: InitMode = InitMode.RANDOM
    init_density: float = Field(default=0.45, ge=0.0, le=1.0)
    parameterizations: list[Parameterization] = Field(default_factory=lambda: list(Parameterization), min_length=1)

    @model_validator(mode="after")
    def _check_rates(self) -> "FitnessSettings":
        for parameterization in self.parameterizations:
            self.bitstring_config(parameterization)
        return self

    def bitstring_config(self, parameterization: Parameterization) -> BitstringConfig:
        return BitstringConfig(
            n_bits=self.n_bits,
            mu=self.mu_high if parameterization.high_mu else self.mu_low,
            mu_mode=self.mu_mode,
            c=parameterization.c,
            window=self.window,
            generations=self.generations,
            chains=self.chains,
            selection_probability=self.selection_probability,
            c_mode=self.c_mode,
            init=self.init,
            init_density=self.init_density,
        )


@dataclass(config=STRICT)
class AnalysisSettings:
    n_resamples: int = Field(default=10_000, ge=1)
    max_lag: int = Field(default=10, ge=0)
    n_bootstrap: int = Field(default=1000, ge=2)
    late_from: int = Field(default=48, ge=1)
    or_samples: int = Field(default=100_000, ge=100)


@dataclass(config=STRICT)
class InferenceSettings:
    max_iter: int = Field(default=500, ge=1)
    tol: float = Field(default=1e-8, gt=0.0)
    n_starts: int = Field(default=5, ge=1)
    n_bootstrap: int = Field(default=200, ge=0)
    fit_beta: bool = True
    shared_beta: bool = True

    def options(self, seed: int, beta: tuple[float, float, float, float]) -> FitOptions:
        return FitOptions(
            max_iter=self.max_iter,
            tol=self.tol,
            fit_beta=self.fit_beta,
            shared_beta=self.shared_beta,
            n_starts=self.n_starts,
            n_bootstrap=self.n_bootstrap,
            seed=seed,
            beta=beta,
        )


@dataclass(config=STRICT)
class ExperimentConfig:
    chains: int = Field(default=DEFAULT_CHAINS, ge=1)
    generations: int = Field(default=DEFAULT_GENERATIONS, ge=1)
    window: int = Field(default=DEFAULT_WINDOW, ge=1)
    paired: bool = True
    seed: int = Field(default=0, ge=0, lt=2**64)
    output_dir: str = DEFAULT_OUTPUT_DIR
    threads: int = Field(default=1, ge=1)
    seed_density: float = Field(default=0.15, ge=0.0, le=1.0)
    cum_adv_mode: CumulativeAdvantageMode = CumulativeAdvantageMode.ARGMAX
    beta: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    policies: PolicySettings = Field(default_factory=PolicySettings)
    strategies: StrategySettings = Field(default_factory=StrategySettings)
    fitness: FitnessSettings = Field(default_factory=FitnessSettings)
    analysis: AnalysisSettings = Field(default_factory=AnalysisSettings)
    inference: InferenceSettings = Field(default_factory=InferenceSettings)

    def mixture(self, condition: Condition) -> PolicyMixture:
        return self.policies.pi if condition is Condition.PI else self.policies.npi

    def profile(self, condition: Condition) -> StrategyProfile:
        return self.strategies.pi if condition is Condition.PI else self.strategies.npi

    def to_dict(self) -> dict[str, Any]:
        resolved: dict[str, Any] = TypeAdapter(ExperimentConfig).dump_python(self, mode="json")
        return resolved


def env_overrides(environ: Mapping[str, str]) -> dict[str, Any]:
    """`POPMARKET_FITNESS__N_BITS=32` becomes {"fitness": {"n_bits": "32"}}."""
    overrides: dict[str, Any] = {}
    for name, value in sorted(environ.items()):
        if name.startswith(ENV_VAR_PREFIX):
            keys = name[len(ENV_VAR_PREFIX) :].lower().split(ENV_VAR_NESTING)
            merge_dicts(overrides, nest_dotted(keys, value))
    return overrides


def build_config(data: dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig(**data)
    except ValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(part) for part in first["loc"]) or "config"
        raise ConfigValidationError(f"{key}: {first['msg']}") from e
    except TypeError as e:
        raise ConfigValidationError(str(e)) from e


def load_config(
    path: Path | None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> ExperimentConfig:
    """
    Reads the TOML config at `path` (all defaults when None), then applies environment overrides
    and finally `overrides`, which carries command-line flags.
    """
    data: dict[str, Any] = {}
    if path is not None:
        if not path.is_file():
            raise ConfigNotFoundError(f"config file {path} does not exist")
        try:
            data = tomli.loads(path.read_text())
        except tomli.TOMLDecodeError as e:
            raise ConfigParseError(f"{path}: {e}") from e
    # Partial sections merge over the defaults of their condition.
    data = merge_dicts(ExperimentConfig().to_dict(), data)
    merge_dicts(data, env_overrides(os.environ if environ is None else environ))
    merge_dicts(data, dict(overrides or {}))
    return build_config(data)


class ConfigError(Exception):
    pass


class ConfigNotFoundError(ConfigError):
    pass


class ConfigParseError(ConfigError):
    pass


class ConfigValidationError(ConfigError):
    pass
