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

from abc import ABC, abstractmethod
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np
import numpy.typing as npt
from pydantic import ConfigDict, Field, model_validator
from pydantic.dataclasses import dataclass as pydantic_dataclass
from scipy import ndimage

from .constants import MAX_EDIT_PIXELS, MIN_EDIT_PIXELS, PIXEL_COUNT
from .core import hamming_count
from .metrics import OddsRatioPosterior, mean_and_se, odds_ratio_posterior
from .model import Chain, Condition, Image, InvariantViolationError, PixelGrid
from .policies import categorical_index

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class EditStrategyLabel(Enum):
    DISRUPTION = "disruption"
    ADDITION = "addition"
    PATTERN_GROWTH = "pattern_growth"
    REMOVAL = "removal"
    REFINEMENT = "refinement"


STRATEGY_ORDER = tuple(EditStrategyLabel)


class EditStrategy(ABC):
    """
    A stochastic editing operator. `edit` returns the edited grid, or None when the operator has
    no legal move on the given parent, in which case `apply_strategy` moves on to `fallback`.
    """

    label: EditStrategyLabel

    @abstractmethod
    def edit(self, pixels: PixelGrid, rng: np.random.Generator) -> PixelGrid | None:
        pass

    @property
    def fallback(self) -> "EditStrategy | None":
        return None


def _flip(pixels: PixelGrid, count: int, rng: np.random.Generator) -> PixelGrid:
    edited = pixels.copy()
    positions = rng.choice(PIXEL_COUNT, size=count, replace=False)
    edited.flat[positions] ^= 1
    return edited


@dataclass(frozen=True)
class Refinement(EditStrategy):
    min_flips: int = 1
    max_flips: int = 4
    label = EditStrategyLabel.REFINEMENT

    def edit(self, pixels: PixelGrid, rng: np.random.Generator) -> PixelGrid | None:
        return _flip(pixels, int(rng.integers(self.min_flips, self.max_flips + 1)), rng)


@dataclass(frozen=True)
class Disruption(EditStrategy):
    min_flips: int = 16
    max_flips: int = 24
    label = EditStrategyLabel.DISRUPTION

    def edit(self, pixels: PixelGrid, rng: np.random.Generator) -> PixelGrid | None:
        return _flip(pixels, int(rng.integers(self.min_flips, self.max_flips + 1)), rng)


@dataclass(frozen=True)
class PatternGrowth(EditStrategy):
    """Sets up to k unset pixels, each 4-adjacent to the pattern as it grows."""

    min_pixels: int = 4
    max_pixels: int = 12
    label = EditStrategyLabel.PATTERN_GROWTH

    def edit(self, pixels: PixelGrid, rng: np.random.Generator) -> PixelGrid | None:
        grown = pixels.astype(bool)
        if not grown.any():
            return None
        added = 0
        for _ in range(int(rng.integers(self.min_pixels, self.max_pixels + 1))):
            frontier = np.flatnonzero(ndimage.binary_dilation(grown, structure=FOUR_CONNECTED) & ~grown)
            if frontier.size == 0:
                break
            grown.flat[frontier[rng.integers(frontier.size)]] = True
            added += 1
        return grown.astype(np.uint8) if added else None

    @property
    def fallback(self) -> EditStrategy:
        return Refinement()


@dataclass(frozen=True)
class Addition(EditStrategy):
    """Draws a new block at Chebyshev distance two or more from every set pixel."""

    min_side: int = 2
    max_side: int = 3
    label = EditStrategyLabel.ADDITION

    def edit(self, pixels: PixelGrid, rng: np.random.Generator) -> PixelGrid | None:
        blocked = ndimage.binary_dilation(pixels.astype(bool), structure=EIGHT_CONNECTED)
        sides = range(self.min_side, self.max_side + 1)
        placements: dict[tuple[int, int], npt.NDArray[np.intp]] = {}
        for height in sides:
            for width in sides:
                free = ~np.lib.stride_tricks.sliding_window_view(blocked, (height, width)).any(axis=(2, 3))
                if free.any():
                    placements[(height, width)] = np.argwhere(free)
        if not placements:
            return None
        shapes = sorted(placements)
        height, width = shapes[rng.integers(len(shapes))]
        candidates = placements[(height, width)]
        row, col = candidates[rng.integers(len(candidates))]
        edited = pixels.copy()
        edited[row : row + height, col : col + width] = 1
        return edited

    @property
    def fallback(self) -> EditStrategy:
        return PatternGrowth()


@dataclass(frozen=True)
class Removal(EditStrategy):
    """Clears boundary pixels of one 4-connected component."""

    min_pixels: int = 4
    max_pixels: int = 12
    min_set_pixels: int = 5
    label = EditStrategyLabel.REMOVAL

    def edit(self, pixels: PixelGrid, rng: np.random.Generator) -> PixelGrid | None:
        if int(pixels.sum()) < self.min_set_pixels:
            return None
        components, count = ndimage.label(pixels, structure=FOUR_CONNECTED)
        component = components == int(rng.integers(1, count + 1))
        # Pixels outside the grid count as unset, so edge pixels are boundary pixels.
        interior = ndimage.binary_erosion(component, structure=FOUR_CONNECTED, border_value=0)
        boundary = np.flatnonzero(component & ~interior)
        size = min(int(rng.integers(self.min_pixels, self.max_pixels + 1)), boundary.size)
        edited = pixels.copy()
        edited.flat[rng.choice(boundary, size=size, replace=False)] = 0
        return edited

    @property
    def fallback(self) -> EditStrategy:
        return Refinement()


DEFAULT_STRATEGIES: Mapping[EditStrategyLabel, EditStrategy] = {
    EditStrategyLabel.DISRUPTION: Disruption(),
    EditStrategyLabel.ADDITION: Addition(),
    EditStrategyLabel.PATTERN_GROWTH: PatternGrowth(),
    EditStrategyLabel.REMOVAL: Removal(),
    EditStrategyLabel.REFINEMENT: Refinement(),
}


def apply_strategy(
    parent: Image, strategy: EditStrategy, rng: np.random.Generator, child_id: int = 0
) -> tuple[Image, int]:
    current: EditStrategy | None = strategy
    edited: PixelGrid | None = None
    while current is not None:
        edited = current.edit(parent.pixels, rng)
        if edited is not None:
            break
        current = current.fallback
    if edited is None:
        raise InvariantViolationError(f"{strategy.label.value} and its fallbacks produced no edit")
    child = Image(child_id, edited)
    changed = hamming_count(parent, child)
    if not MIN_EDIT_PIXELS <= changed <= MAX_EDIT_PIXELS:
        raise InvariantViolationError(f"{strategy.label.value} changed {changed} pixels")
    return child, changed


@pydantic_dataclass(config=ConfigDict(extra="forbid"))
class StrategyProfile:
    """How often each editing strategy is used in one condition."""

    disruption: float = Field(default=0.2, ge=0.0)
    addition: float = Field(default=0.2, ge=0.0)
    pattern_growth: float = Field(default=0.2, ge=0.0)
    removal: float = Field(default=0.2, ge=0.0)
    refinement: float = Field(default=0.2, ge=0.0)

    @model_validator(mode="after")
    def _normalize(self) -> "StrategyProfile":
        total = self.disruption + self.addition + self.pattern_growth + self.removal + self.refinement
        if not np.isfinite(total) or total <= 0.0:
            raise ValueError("strategy probabilities must be finite and not all zero")
        self.disruption /= total
        self.addition /= total
        self.pattern_growth /= total
        self.removal /= total
        self.refinement /= total
        return self

    @classmethod
    def from_probabilities(cls, probabilities: Sequence[float]) -> "StrategyProfile":
        disruption, addition, pattern_growth, removal, refinement = (float(p) for p in probabilities)
        return cls(disruption, addition, pattern_growth, removal, refinement)

    @property
    def probabilities(self) -> npt.NDArray[np.float64]:
        return np.array([self.probability(label) for label in STRATEGY_ORDER], dtype=np.float64)

    def probability(self, label: EditStrategyLabel) -> float:
        return float(getattr(self, label.value))


def default_profile(condition: Condition) -> StrategyProfile:
    if condition is Condition.PI:
        return StrategyProfile(0.17, 0.25, 0.23, 0.085, 0.265)
    return StrategyProfile(0.20, 0.25, 0.20, 0.10, 0.25)


def sample_strategy(
    profile: StrategyProfile,
    rng: np.random.Generator,
    strategies: Mapping[EditStrategyLabel, EditStrategy] = DEFAULT_STRATEGIES,
) -> EditStrategy:
    return strategies[STRATEGY_ORDER[categorical_index(profile.probabilities, rng)]]


@dataclass(frozen=True)
class EditRecord:
    chain_id: int
    condition: Condition
    generation: int
    parent_id: int
    child_id: int
    policy: str
    strategy: EditStrategyLabel
    changed_pixels: int


@dataclass(frozen=True)
class EditSizeStats:
    mean: float
    se: float
    n: int


def edit_size_stats(chains: Iterable[Chain]) -> dict[Condition, EditSizeStats]:
    sizes: dict[Condition, list[float]] = {}
    for chain in chains:
        for node in chain.nodes[1:]:
            assert node.parent is not None
            changed = hamming_count(node.image, chain.node(node.parent).image)
            sizes.setdefault(chain.condition, []).append(float(changed))
    stats = {}
    for condition, values in sizes.items():
        mean, se = mean_and_se(values)
        stats[condition] = EditSizeStats(mean, se, len(values))
    return stats


def strategy_counts(records: Iterable[EditRecord]) -> dict[Condition, Counter[EditStrategyLabel]]:
    counts: dict[Condition, Counter[EditStrategyLabel]] = {condition: Counter() for condition in Condition}
    for record in records:
        counts[record.condition][record.strategy] += 1
    return counts


def strategy_odds_ratios(
    records: Iterable[EditRecord], n_samples: int = 100_000, seed: int = 0
) -> dict[EditStrategyLabel, OddsRatioPosterior]:
    """Odds of each strategy under PI relative to NPI."""
    counts = strategy_counts(records)
    n_pi, n_npi = sum(counts[Condition.PI].values()), sum(counts[Condition.NPI].values())
    return {
        label: odds_ratio_posterior(
            counts[Condition.PI][label], n_pi, counts[Condition.NPI][label], n_npi, n_samples, seed + i
        )
        for i, label in enumerate(STRATEGY_ORDER)
    }
