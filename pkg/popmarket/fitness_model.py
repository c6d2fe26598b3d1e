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

from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np
import numpy.typing as npt
from pydantic import Field, model_validator
from pydantic.dataclasses import dataclass as pydantic_dataclass

from .constants import DEFAULT_CHAINS, DEFAULT_GENERATIONS, DEFAULT_WINDOW
from .metrics import MetricSeries
from .model import InvalidArgumentError
from .policies import CumulativeAdvantageMode, categorical_index
from .rng import Purpose, RngLedger

Bits = npt.NDArray[np.uint8]


class MutationMode(Enum):
    COUNT = "count"
    PROBABILITY = "probability"


class InitMode(Enum):
    RANDOM = "random"
    ZEROS = "zeros"


@pydantic_dataclass
class BitstringConfig:
    """
    One parameterization of the selection/mutation model. In count mode `mu` is the number of
    distinct bits flipped per generation; in probability mode it is the per-bit flip probability.
    Random initial strings set each bit with probability `init_density`.
    """

    n_bits: int = Field(default=64, ge=1)
    mu: float = 2
    mu_mode: MutationMode = MutationMode.COUNT
    c: float = Field(default=0.0, ge=0.0, le=1.0)
    window: int = Field(default=DEFAULT_WINDOW, ge=1)
    generations: int = Field(default=DEFAULT_GENERATIONS, ge=1)
    chains: int = Field(default=DEFAULT_CHAINS, ge=1)
    selection_probability: float = Field(default=0.5, ge=0.0, le=1.0)
    c_mode: CumulativeAdvantageMode = CumulativeAdvantageMode.ARGMAX
    init: InitMode = InitMode.RANDOM
    init_density: float = Field(default=0.45, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _check_mu(self) -> "BitstringConfig":
        if self.mu_mode is MutationMode.COUNT:
            if self.mu != int(self.mu) or not 1 <= self.mu <= self.n_bits:
                raise ValueError(f"mu must be an integer in [1, {self.n_bits}] in count mode, got {self.mu}")
        elif not 0.0 < self.mu <= 1.0:
            raise ValueError(f"mu must be a probability in (0, 1] in probability mode, got {self.mu}")
        return self


class Parameterization(Enum):
    LOW_MU_C0 = "low_mu_c0"
    LOW_MU_C1 = "low_mu_c1"
    HIGH_MU_C0 = "high_mu_c0"
    HIGH_MU_C1 = "high_mu_c1"

    @property
    def high_mu(self) -> bool:
        return self in (Parameterization.HIGH_MU_C0, Parameterization.HIGH_MU_C1)

    @property
    def c(self) -> float:
        return 1.0 if self in (Parameterization.LOW_MU_C1, Parameterization.HIGH_MU_C1) else 0.0


def fitness(bits: Sequence[int] | Bits) -> int:
    return int(np.count_nonzero(np.asarray(bits)))


def expected_mutation_gain(current_fitness: float, n_bits: int, mu: float) -> float:
    """Expected fitness change of a count-mode mutation flipping `mu` bits."""
    return (n_bits - 2.0 * current_fitness) * mu / n_bits


def model_select(
    fitnesses: Sequence[int] | npt.NDArray[np.int64],
    popularity: Sequence[int] | npt.NDArray[np.int64],
    c: float,
    rng: np.random.Generator,
    selection_probability: float = 0.5,
    c_mode: CumulativeAdvantageMode = CumulativeAdvantageMode.ARGMAX,
) -> int:
    """
    Picks the fittest entry with probability `selection_probability`; otherwise, with probability
    `c`, one of the most popular entries, and else a uniformly random one. Returns an index.
    """
    f = np.asarray(fitnesses)
    if f.size == 0:
        raise InvalidArgumentError("cannot select from an empty market")
    if rng.random() < selection_probability:
        return _uniform_argmax(f, rng)
    if rng.random() < c:
        pop = np.asarray(popularity, dtype=np.float64)
        if c_mode is CumulativeAdvantageMode.PROPORTIONAL:
            return categorical_index(pop + 1.0, rng)
        return _uniform_argmax(pop, rng)
    return int(rng.integers(f.size))


def _uniform_argmax(values: npt.NDArray[np.generic], rng: np.random.Generator) -> int:
    leaders = np.flatnonzero(values == values.max())
    return int(leaders[rng.integers(leaders.size)])


def mutate(
    bits: Sequence[int] | Bits, mu: float, rng: np.random.Generator, mode: MutationMode = MutationMode.COUNT
) -> Bits:
    child = np.array(bits, dtype=np.uint8)
    if mode is MutationMode.COUNT:
        child[rng.choice(child.size, size=int(mu), replace=False)] ^= 1
    else:
        child[rng.random(child.size) < mu] ^= 1
    return child


@dataclass(frozen=True)
class FitnessRun:
    label: str
    fitness: MetricSeries
    delta: MetricSeries


def _simulate_bitstring_chain(
    config: BitstringConfig, rng: np.random.Generator
) -> tuple[npt.NDArray[np.int64], npt.NDArray[np.int64]]:
    generations, window = config.generations, config.window
    bits = np.zeros((generations + 1, config.n_bits), dtype=np.uint8)
    if config.init is InitMode.RANDOM:
        bits[0] = rng.random(config.n_bits) < config.init_density
    scores = np.zeros(generations + 1, dtype=np.int64)
    popularity = np.zeros(generations + 1, dtype=np.int64)
    parents = np.zeros(generations, dtype=np.int64)
    scores[0] = fitness(bits[0])
    for g in range(1, generations + 1):
        # Newest first, as in the image markets.
        market = np.arange(g - 1, max(0, g - window) - 1, -1)
        parent = int(
            market[
                model_select(
                    scores[market], popularity[market], config.c, rng, config.selection_probability, config.c_mode
                )
            ]
        )
        bits[g] = mutate(bits[parent], config.mu, rng, config.mu_mode)
        scores[g] = fitness(bits[g])
        popularity[parent] += 1
        parents[g - 1] = parent
    return scores, scores[1:] - scores[parents]


def run_fitness_experiment(config: BitstringConfig, seed: int, label: str = "", threads: int = 1) -> FitnessRun:
    """
    Simulates `config.chains` independent chains. Chain i always draws from the same stream for a
    given seed, so parameterizations run with one seed share their initial strings.
    """
    ledger = RngLedger(seed)

    def simulate(index: int) -> tuple[npt.NDArray[np.int64], npt.NDArray[np.int64]]:
        return _simulate_bitstring_chain(config, ledger.stream(Purpose.FITNESS, index))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(simulate, range(config.chains)))
    scores = np.array([score for score, _ in results], dtype=np.float64)
    deltas = np.array([delta for _, delta in results], dtype=np.float64)
    return FitnessRun(
        label=label,
        fitness=MetricSeries.from_samples(label, "mean_fitness", {g: scores[:, g] for g in range(scores.shape[1])}),
        delta=MetricSeries.from_samples(label, "mean_delta", {g + 1: deltas[:, g] for g in range(deltas.shape[1])}),
    )


def crossing_holds(high_mu: FitnessRun, low_mu: FitnessRun, early: int, late: int) -> bool:
    """True when high mutation leads at `early` and trails at `late`."""
    return (
        high_mu.fitness.value_at(early) > low_mu.fitness.value_at(early)
        and high_mu.fitness.value_at(late) < low_mu.fitness.value_at(late)
    )
