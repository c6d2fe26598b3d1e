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
from collections import Counter

import numpy as np
import pytest
from pydantic import ValidationError

from popmarket.model import Condition, InvalidArgumentError
from popmarket.policies import (
    CumulativeAdvantageMode,
    Policy,
    PolicyMixture,
    PolicyUnavailableError,
    UtilityModel,
    balancing_select,
    cumulative_advantage_select,
    default_mixture,
    image_driven_select,
    mixture_select,
    random_select,
    softmax_probs,
)
from tests.chains import make_view

DRAWS = 20_000


def _model(utilities: list[float]) -> UtilityModel:
    model = UtilityModel(beta=(1.0, 0.0, 0.0, 0.0))
    for node_id, utility in enumerate(utilities):
        model.set_scores(node_id, [utility, 0.0, 0.0, 0.0])
    return model


def test_softmax_probs() -> None:
    np.testing.assert_allclose(softmax_probs([0.0, math.log(2.0)]), [1 / 3, 2 / 3])
    np.testing.assert_allclose(softmax_probs([1000.0, 1000.0]), [0.5, 0.5])
    assert softmax_probs([-5.0, 3.0, 0.1]).sum() == pytest.approx(1.0)
    with pytest.raises(InvalidArgumentError):
        softmax_probs([])
    with pytest.raises(InvalidArgumentError):
        softmax_probs([0.0, math.inf])


def test_image_driven_select_follows_softmax(rng: np.random.Generator) -> None:
    view = make_view([0, 0])
    model = _model([0.0, math.log(3.0)])
    picks = Counter(image_driven_select(view, model, rng) for _ in range(DRAWS))
    assert picks[1] / DRAWS == pytest.approx(0.75, abs=0.015)


def test_cumulative_advantage_breaks_ties_uniformly(rng: np.random.Generator) -> None:
    view = make_view([3, 5, 5, 1])
    picks = Counter(cumulative_advantage_select(view, rng) for _ in range(DRAWS))
    assert set(picks) == {1, 2}
    assert picks[1] / DRAWS == pytest.approx(0.5, abs=0.015)


def test_proportional_cumulative_advantage(rng: np.random.Generator) -> None:
    view = make_view([9, 0])
    picks = Counter(
        cumulative_advantage_select(view, rng, CumulativeAdvantageMode.PROPORTIONAL) for _ in range(DRAWS)
    )
    assert picks[0] / DRAWS == pytest.approx(10 / 11, abs=0.01)


def test_balancing_picks_least_popular(rng: np.random.Generator) -> None:
    view = make_view([2, 0, 4, 0, 1])
    assert {balancing_select(view, rng) for _ in range(200)} == {1, 3}


def test_random_select_covers_the_market(rng: np.random.Generator) -> None:
    view = make_view([0] * 12)
    assert {random_select(view, rng) for _ in range(1000)} == set(range(12))


def test_popularity_policies_need_visible_popularity(rng: np.random.Generator) -> None:
    view = make_view([1, 2, 3], shown=False)
    with pytest.raises(PolicyUnavailableError):
        cumulative_advantage_select(view, rng)
    with pytest.raises(PolicyUnavailableError):
        balancing_select(view, rng)
    with pytest.raises(PolicyUnavailableError):
        mixture_select(view, PolicyMixture(0.0, 1.0, 1.0, 0.0), _model([0.0] * 3), rng)


def test_hidden_popularity_renormalizes_over_remaining_policies(rng: np.random.Generator) -> None:
    view = make_view([0, 0, 0], shown=False)
    mixture = PolicyMixture()
    policies = Counter(mixture_select(view, mixture, _model([0.0] * 3), rng)[1] for _ in range(DRAWS))
    assert set(policies) == {Policy.IMAGE_DRIVEN, Policy.RANDOM}
    assert policies[Policy.IMAGE_DRIVEN] / DRAWS == pytest.approx(0.5, abs=0.015)


def test_mixture_select_policy_frequencies(rng: np.random.Generator) -> None:
    view = make_view([4, 1, 0, 2])
    mixture = default_mixture(Condition.PI)
    policies = Counter(mixture_select(view, mixture, _model([0.0] * 4), rng)[1] for _ in range(DRAWS))
    assert policies[Policy.BALANCING] == 0
    assert policies[Policy.IMAGE_DRIVEN] / DRAWS == pytest.approx(0.50, abs=0.015)
    assert policies[Policy.CUM_ADV] / DRAWS == pytest.approx(0.25, abs=0.015)
    assert policies[Policy.RANDOM] / DRAWS == pytest.approx(0.25, abs=0.015)


def test_pi_mixture_favors_popular_entries(rng: np.random.Generator) -> None:
    popularities = [0, 1, 2, 8, 0, 3]
    view = make_view(popularities)
    model = _model([0.0] * len(popularities))
    chosen = {
        condition: np.mean(
            [popularities[mixture_select(view, default_mixture(condition), model, rng)[0]] for _ in range(DRAWS)]
        )
        for condition in Condition
    }
    # Uniform picks average 14/6; a quarter of PI picks go to the leader.
    assert chosen[Condition.NPI] == pytest.approx(14 / 6, abs=0.1)
    assert chosen[Condition.PI] == pytest.approx(0.75 * 14 / 6 + 0.25 * 8, abs=0.1)
    assert chosen[Condition.PI] > chosen[Condition.NPI]


def test_mixture_normalizes_weights() -> None:
    mixture = PolicyMixture(1.0, 1.0, 2.0, 0.0)
    np.testing.assert_allclose(mixture.weights, [0.25, 0.25, 0.5, 0.0])
    assert mixture.weight(Policy.BALANCING) == pytest.approx(0.5)
    assert mixture.popularity_weight == pytest.approx(0.75)
    assert PolicyMixture.from_weights([2, 0, 0, 2]).random == pytest.approx(0.5)


def test_mixture_rejects_invalid_weights() -> None:
    with pytest.raises(ValidationError):
        PolicyMixture(image_driven=-0.1)
    with pytest.raises(ValidationError):
        PolicyMixture(0.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValidationError):
        PolicyMixture(image_driven=0.5, greedy=0.5)  # type: ignore[call-arg]


def test_default_mixtures() -> None:
    np.testing.assert_allclose(default_mixture(Condition.PI).weights, [0.5, 0.25, 0.0, 0.25])
    np.testing.assert_allclose(default_mixture(Condition.NPI).weights, [0.5, 0.0, 0.0, 0.5])


def test_utility_model() -> None:
    model = UtilityModel(beta=(1.0, 2.0, 0.0, -1.0))
    model.set_scores(7, [1.0, 1.0, 5.0, 3.0])
    np.testing.assert_allclose(model.utilities([7]), [0.0])
    with pytest.raises(InvalidArgumentError):
        model.scores(8)
    with pytest.raises(InvalidArgumentError):
        model.set_scores(8, [1.0, 2.0])
    with pytest.raises(InvalidArgumentError):
        UtilityModel(beta=(1.0, math.nan, 0.0, 0.0))
