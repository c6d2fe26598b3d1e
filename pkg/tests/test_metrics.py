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

import itertools

import numpy as np
import pytest
from scipy import stats

from popmarket.core import market_window, new_chain
from popmarket.metrics import (
    DegenerateVarianceError,
    DegenerateVectorError,
    DistanceKind,
    EmbeddingTable,
    MetricPoint,
    MetricSeries,
    UndefinedDiversityError,
    UndefinedGiniError,
    bootstrap_gini_difference,
    chain_autocorrelation,
    cosine_distance,
    gini,
    hamming_fraction,
    market_diversity,
    mean_and_se,
    odds_ratio_posterior,
    paired_permutation_test,
    period_contrast,
)
from popmarket.model import Condition, Image, InvalidArgumentError
from popmarket.rng import generator_from_seed
from tests.chains import flip, grow, line_chain


def test_gini_oracles() -> None:
    assert gini([5, 5, 5, 5]) == 0.0
    assert gini([1, 0, 0, 0]) == pytest.approx(0.75)
    assert gini([7, 0]) == pytest.approx(0.5)
    assert gini([3]) == 0.0


def test_gini_matches_pairwise_definition(rng: np.random.Generator) -> None:
    counts = rng.integers(0, 20, size=37)
    pairwise = sum(abs(int(a) - int(b)) for a, b in itertools.product(counts, counts))
    expected = pairwise / (2 * counts.size**2 * counts.mean())
    assert gini(counts) == pytest.approx(expected, rel=1e-12)
    assert gini(counts * 3) == pytest.approx(gini(counts), rel=1e-12)
    assert gini(rng.permutation(counts)) == pytest.approx(gini(counts), rel=1e-12)


def test_gini_errors() -> None:
    with pytest.raises(UndefinedGiniError):
        gini([0, 0, 0])
    with pytest.raises(InvalidArgumentError):
        gini([])
    with pytest.raises(InvalidArgumentError):
        gini([1, -1])


def test_bootstrap_gini_difference_detects_inequality() -> None:
    unequal = [20] + [0] * 19 + [1] * 20
    equal = [1] * 40
    result = bootstrap_gini_difference(unequal, equal, n_resamples=500, seed=1)
    assert result.delta == pytest.approx(gini(unequal))
    assert result.p_value < 0.05
    assert result.ci95[0] > 0.0
    assert result.se > 0.0


def test_hamming_fraction() -> None:
    blank = Image.blank(0)
    assert hamming_fraction(blank, Image.blank(1)) == 0.0
    assert hamming_fraction(blank, Image(1, np.ones((16, 16), dtype=np.uint8))) == 1.0
    assert hamming_fraction(blank, flip(blank, (9,), 1)) == 1 / 256


def test_cosine_distance() -> None:
    assert cosine_distance(np.array([1.0, 0.0]), np.array([0.0, 2.0])) == pytest.approx(1.0)
    assert cosine_distance(np.array([1.0, 1.0]), np.array([-3.0, -3.0])) == pytest.approx(2.0)
    with pytest.raises(DegenerateVectorError):
        cosine_distance(np.zeros(2), np.ones(2))


def test_market_diversity_by_distance_kind() -> None:
    chain = line_chain(3)
    view = market_window(chain, 3, 12, show_popularity=False)
    assert market_diversity(view, DistanceKind.PHYLOGENETIC, chain=chain) == pytest.approx(4 / 3)
    assert market_diversity(view, DistanceKind.HAMMING) == pytest.approx((1 + 1 + 2) / 3 / 256)
    with pytest.raises(InvalidArgumentError):
        market_diversity(view, DistanceKind.PHYLOGENETIC)


def test_market_diversity_of_identical_images_is_zero() -> None:
    chain = new_chain(0, 0, Condition.NPI, Image.blank(0), seed=0)
    grow(chain, 0, positions=(3,))
    view = market_window(chain, 2, 12, show_popularity=False)
    entries = [view.entries[1], view.entries[1]]
    assert market_diversity(entries, DistanceKind.HAMMING) == 0.0
    with pytest.raises(UndefinedDiversityError):
        market_diversity(view.entries[:1], DistanceKind.HAMMING)


def test_market_diversity_with_embeddings() -> None:
    chain = line_chain(3)
    view = market_window(chain, 3, 12, show_popularity=False)
    table = EmbeddingTable({0: np.array([1.0, 0.0]), 1: np.array([0.0, 1.0]), 2: np.array([1.0, 0.0])})
    assert market_diversity(view, DistanceKind.COSINE, embeddings=table) == pytest.approx(2 / 3)
    zeros = EmbeddingTable({0: np.zeros(2), 1: np.ones(2), 2: np.ones(2)})
    with pytest.raises(DegenerateVectorError):
        market_diversity(view, DistanceKind.COSINE, embeddings=zeros)


def test_embedding_table_validation() -> None:
    with pytest.raises(InvalidArgumentError):
        EmbeddingTable({0: np.zeros(2), 1: np.zeros(3)})
    with pytest.raises(InvalidArgumentError):
        EmbeddingTable({0: np.array([np.nan, 1.0])})
    table = EmbeddingTable.from_images([Image.blank(4)])
    assert table.dimension == 256
    assert (table.vector(4) == -1.0).all()
    with pytest.raises(InvalidArgumentError):
        table.vector(5)


def test_autocorrelation_of_alternating_positions() -> None:
    v = np.array([1.0, -2.0, 0.5])
    chain = np.array([v, -v, v, -v])
    assert chain_autocorrelation([chain], 1) == pytest.approx(-0.75)
    assert chain_autocorrelation([chain], 0) == pytest.approx(1.0)


def test_autocorrelation_is_translation_invariant(rng: np.random.Generator) -> None:
    chains = [rng.standard_normal((20, 5)) for _ in range(3)]
    shifted = [chain + 7.0 for chain in chains]
    assert chain_autocorrelation(shifted, 2) == pytest.approx(chain_autocorrelation(chains, 2))


def test_autocorrelation_of_independent_images_is_near_zero() -> None:
    values = []
    for seed in range(50):
        rng = generator_from_seed(seed)
        values.append(chain_autocorrelation([rng.standard_normal((60, 8)) for _ in range(2)], 5))
    assert abs(float(np.mean(values))) < 0.03
    assert max(abs(value) for value in values) < 0.15


def test_autocorrelation_errors() -> None:
    same = np.ones((5, 3))
    with pytest.raises(DegenerateVarianceError):
        chain_autocorrelation([same], 1)
    with pytest.raises(InvalidArgumentError):
        chain_autocorrelation([np.eye(3)], 3)
    with pytest.raises(InvalidArgumentError):
        chain_autocorrelation([np.eye(3)], -1)


def test_permutation_test_with_no_differences() -> None:
    assert paired_permutation_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0


def test_permutation_test_enumerates_all_sign_flips() -> None:
    assert paired_permutation_test([1.0] * 10, [0.0] * 10) == pytest.approx(2 / 1024)


def test_permutation_test_is_symmetric_in_its_arguments(rng: np.random.Generator) -> None:
    a, b = rng.standard_normal(30), rng.standard_normal(30)
    assert paired_permutation_test(a, b, 2000, seed=4) == paired_permutation_test(b, a, 2000, seed=4)


def test_permutation_test_sampled_p_value_is_never_zero() -> None:
    p = paired_permutation_test([5.0] * 40, [0.0] * 40, n_resamples=999, seed=0)
    assert p == pytest.approx(1 / 1000)


def test_permutation_test_is_calibrated_under_the_null() -> None:
    p_values = []
    for seed in range(500):
        rng = generator_from_seed(seed)
        a, b = rng.standard_normal(12), rng.standard_normal(12)
        p_values.append(paired_permutation_test(a, b))
    assert stats.kstest(p_values, "uniform").statistic < 0.1


def test_permutation_test_errors() -> None:
    with pytest.raises(InvalidArgumentError):
        paired_permutation_test([], [])
    with pytest.raises(InvalidArgumentError):
        paired_permutation_test([1.0, 2.0], [1.0])


def test_odds_ratio_posterior_under_the_null() -> None:
    posterior = odds_ratio_posterior(50, 100, 50, 100, n_samples=20_000, seed=2)
    assert posterior.median == pytest.approx(1.0, abs=0.05)
    assert posterior.p_null > 0.9
    assert posterior.ci95[0] < posterior.ci68[0] < posterior.median < posterior.ci68[1] < posterior.ci95[1]


def test_odds_ratio_posterior_for_opposite_extremes() -> None:
    posterior = odds_ratio_posterior(0, 10, 10, 10, n_samples=20_000, seed=2)
    assert posterior.median < 0.01
    assert posterior.ci95[1] < 1.0


def test_odds_ratio_posterior_errors() -> None:
    with pytest.raises(InvalidArgumentError):
        odds_ratio_posterior(0, 0, 1, 2)
    with pytest.raises(InvalidArgumentError):
        odds_ratio_posterior(3, 2, 1, 2)


def test_odds_ratio_formatting() -> None:
    posterior = odds_ratio_posterior(50, 100, 50, 100, n_samples=1000)
    text = str(posterior)
    assert text.startswith("OR=")
    assert ", CI95=[" in text and text.endswith("]")


def test_mean_and_se() -> None:
    assert mean_and_se([2.0, 4.0]) == pytest.approx((3.0, 1.0))
    assert mean_and_se([5.0]) == (5.0, 0.0)
    with pytest.raises(InvalidArgumentError):
        mean_and_se([])


def test_metric_series_from_samples() -> None:
    series = MetricSeries.from_samples("PI", "gini", {3: [1.0, 3.0], 2: [4.0]})
    assert series.indices == [2, 3]
    assert series.values == [4.0, 2.0]
    assert series.value_at(3) == 2.0
    with pytest.raises(InvalidArgumentError):
        series.value_at(9)
    with pytest.raises(InvalidArgumentError):
        MetricPoint(0, 1.0, -0.1, 1)


def test_period_contrast_splits_generations() -> None:
    generations = [2, 3, 4, 5]
    a = np.array([[1.0, 1.0, 5.0, 5.0]] * 6)
    b = np.array([[1.0, 1.0, 2.0, 2.0]] * 6)
    contrast = period_contrast(generations, a, b, split=4)
    assert contrast.early_delta == 0.0
    assert contrast.early_p == 1.0
    assert contrast.late_delta == pytest.approx(3.0)
    assert contrast.late_p == pytest.approx(2 / 64)
    with pytest.raises(InvalidArgumentError):
        period_contrast(generations, a, b, split=9)
