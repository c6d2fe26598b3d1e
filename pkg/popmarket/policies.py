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

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import numpy.typing as npt
from pydantic import ConfigDict, Field, model_validator
from pydantic.dataclasses import dataclass as pydantic_dataclass
from scipy.special import softmax

from .constants import CRITERIA
from .model import Condition, InvalidArgumentError, MarketView

FloatArray = npt.NDArray[np.float64]


class Policy(Enum):
    IMAGE_DRIVEN = "image_driven"
    CUM_ADV = "cum_adv"
    BALANCING = "balancing"
    RANDOM = "random"

    @property
    def needs_popularity(self) -> bool:
        return self in (Policy.CUM_ADV, Policy.BALANCING)


POLICY_ORDER = tuple(Policy)


class CumulativeAdvantageMode(Enum):
    ARGMAX = "argmax"
    PROPORTIONAL = "proportional"


@pydantic_dataclass(config=ConfigDict(extra="forbid"))
class PolicyMixture:
    """Prevalence of each selection policy. Weights are normalized to sum to one on construction."""

    image_driven: float = Field(default=0.25, ge=0.0)
    cum_adv: float = Field(default=0.25, ge=0.0)
    balancing: float = Field(default=0.25, ge=0.0)
    random: float = Field(default=0.25, ge=0.0)

    @model_validator(mode="after")
    def _normalize(self) -> "PolicyMixture":
        total = self.image_driven + self.cum_adv + self.balancing + self.random
        if not math.isfinite(total) or total <= 0.0:
            raise ValueError("policy weights must be finite and not all zero")
        self.image_driven /= total
        self.cum_adv /= total
        self.balancing /= total
        self.random /= total
        return self

    @classmethod
    def from_weights(cls, weights: Sequence[float]) -> "PolicyMixture":
        image_driven, cum_adv, balancing, random = (float(w) for w in weights)
        return cls(image_driven=image_driven, cum_adv=cum_adv, balancing=balancing, random=random)

    @property
    def weights(self) -> FloatArray:
        return np.array([self.image_driven, self.cum_adv, self.balancing, self.random], dtype=np.float64)

    def weight(self, policy: Policy) -> float:
        return float(getattr(self, policy.value))

    @property
    def popularity_weight(self) -> float:
        return self.cum_adv + self.balancing


def default_mixture(condition: Condition) -> PolicyMixture:
    if condition is Condition.PI:
        return PolicyMixture(image_driven=0.50, cum_adv=0.25, balancing=0.0, random=0.25)
    return PolicyMixture(image_driven=0.50, cum_adv=0.0, balancing=0.0, random=0.50)


@dataclass
class UtilityModel:
    """Latent utility u_i = sum_c beta_c * u_ic over the four rating criteria."""

    beta: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    criterion_scores: dict[int, FloatArray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.beta) != len(CRITERIA) or not all(math.isfinite(b) for b in self.beta):
            raise InvalidArgumentError(f"beta needs {len(CRITERIA)} finite coefficients, got {self.beta}")

    def set_scores(self, node_id: int, scores: Sequence[float] | FloatArray) -> None:
        values = np.asarray(scores, dtype=np.float64)
        if values.shape != (len(CRITERIA),) or not np.isfinite(values).all():
            raise InvalidArgumentError(f"image {node_id} needs {len(CRITERIA)} finite criterion scores")
        self.criterion_scores[node_id] = values

    def draw_scores(self, node_id: int, rng: np.random.Generator) -> FloatArray:
        scores = rng.standard_normal(len(CRITERIA))
        self.set_scores(node_id, scores)
        return scores

    def scores(self, node_id: int) -> FloatArray:
        try:
            return self.criterion_scores[node_id]
        except KeyError:
            raise InvalidArgumentError(f"image {node_id} has no criterion scores") from None

    def utilities(self, node_ids: Sequence[int]) -> FloatArray:
        return np.array([self.scores(node_id) for node_id in node_ids]) @ np.asarray(self.beta)


def softmax_probs(utilities: Sequence[float] | FloatArray) -> FloatArray:
    values = np.asarray(utilities, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise InvalidArgumentError("softmax needs a non-empty list of utilities")
    if not np.isfinite(values).all():
        raise InvalidArgumentError("softmax utilities must be finite")
    # scipy subtracts the maximum before exponentiating.
    probs: FloatArray = softmax(values)
    return probs


def categorical_index(probs: Sequence[float] | FloatArray, rng: np.random.Generator) -> int:
    cumulative = np.cumsum(probs)
    index = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
    return min(index, len(cumulative) - 1)


def uniform_member(node_ids: Sequence[int], rng: np.random.Generator) -> int:
    return node_ids[int(rng.integers(len(node_ids)))]


def image_driven_select(view: MarketView, model: UtilityModel, rng: np.random.Generator) -> int:
    probs = softmax_probs(model.utilities(view.node_ids))
    return view.node_ids[categorical_index(probs, rng)]


def cumulative_advantage_select(
    view: MarketView, rng: np.random.Generator, mode: CumulativeAdvantageMode = CumulativeAdvantageMode.ARGMAX
) -> int:
    popularity = _visible_popularity(view, Policy.CUM_ADV)
    if mode is CumulativeAdvantageMode.PROPORTIONAL:
        return view.node_ids[categorical_index(popularity + 1.0, rng)]
    leaders = [node_id for node_id, p in zip(view.node_ids, popularity) if p == popularity.max()]
    return uniform_member(leaders, rng)


def balancing_select(view: MarketView, rng: np.random.Generator) -> int:
    popularity = _visible_popularity(view, Policy.BALANCING)
    laggards = [node_id for node_id, p in zip(view.node_ids, popularity) if p == popularity.min()]
    return uniform_member(laggards, rng)


def random_select(view: MarketView, rng: np.random.Generator) -> int:
    return uniform_member(view.node_ids, rng)


def mixture_select(
    view: MarketView,
    mixture: PolicyMixture,
    model: UtilityModel,
    rng: np.random.Generator,
    cum_adv_mode: CumulativeAdvantageMode = CumulativeAdvantageMode.ARGMAX,
) -> tuple[int, Policy]:
    """
    Draws a policy from the mixture and lets it pick an entry. Without visible popularity the
    popularity policies are unavailable and the draw is repeated among the remaining ones.
    """
    weights = mixture.weights
    if not view.shows_popularity:
        weights = np.where([policy.needs_popularity for policy in POLICY_ORDER], 0.0, weights)
        if weights.sum() <= 0.0:
            raise PolicyUnavailableError("every policy with nonzero weight needs popularity, which is hidden")
    policy = POLICY_ORDER[categorical_index(weights, rng)]
    if policy is Policy.IMAGE_DRIVEN:
        return image_driven_select(view, model, rng), policy
    if policy is Policy.CUM_ADV:
        return cumulative_advantage_select(view, rng, cum_adv_mode), policy
    if policy is Policy.BALANCING:
        return balancing_select(view, rng), policy
    return random_select(view, rng), policy


def _visible_popularity(view: MarketView, policy: Policy) -> FloatArray:
    if not view.shows_popularity:
        raise PolicyUnavailableError(f"{policy.value} selection needs popularity, which this market hides")
    return np.asarray(view.popularities(), dtype=np.float64)


class PolicyUnavailableError(Exception):
    pass
