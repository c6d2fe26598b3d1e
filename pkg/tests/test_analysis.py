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

import numpy as np
import pytest

from popmarket.analysis import (
    AUTOCORRELATION_METRIC,
    GINI_METRIC,
    REFERENCE_LINE,
    GiniReport,
    compute_run_metrics,
    distance_matrix,
    diversity_series,
    market_diversities,
    paired_pairs,
)
from popmarket.config import AnalysisSettings, ExperimentConfig
from popmarket.core import market_window, new_chain
from popmarket.creation import EditStrategyLabel
from popmarket.metrics import DistanceKind, EmbeddingTable, market_diversity
from popmarket.model import Chain, Condition, Image, InvalidArgumentError
from popmarket.simulation import run_experiment
from tests.chains import grow, line_chain

SETTINGS = AnalysisSettings(n_resamples=100, max_lag=2, n_bootstrap=20, late_from=3, or_samples=1000)


@pytest.fixture
def star_and_line() -> list[Chain]:
    """A PI chain where every agent copied the seed, paired with an NPI chain of successive copies."""
    star = new_chain(0, 0, Condition.PI, Image.blank(0), seed=0)
    for pixel in range(1, 5):
        grow(star, 0, positions=(pixel,))
    return [star, line_chain(5, Condition.NPI, chain_id=1, pair_id=0)]


def test_market_diversities_by_hand(star_and_line: list[Chain]) -> None:
    star, line = star_and_line
    assert market_diversities(star, 12, DistanceKind.PHYLOGENETIC) == pytest.approx({2: 1.0, 3: 4 / 3, 4: 1.5})
    assert market_diversities(line, 12, DistanceKind.PHYLOGENETIC) == pytest.approx({2: 1.0, 3: 4 / 3, 4: 5 / 3})
    assert market_diversities(star, 12, DistanceKind.HAMMING)[4] == pytest.approx(1.5 / 256)
    assert market_diversities(line, 12, DistanceKind.HAMMING)[4] == pytest.approx(10 / 6 / 256)


def test_market_diversities_respect_the_window(star_and_line: list[Chain]) -> None:
    star, _ = star_and_line
    assert market_diversities(star, 2, DistanceKind.PHYLOGENETIC) == pytest.approx({2: 1.0, 3: 2.0, 4: 2.0})


def test_distance_matrices_match_market_diversity(small_config: ExperimentConfig) -> None:
    chain = run_experiment(small_config).chains[0]
    for kind in DistanceKind:
        diversities = market_diversities(chain, small_config.window, kind)
        for g in (2, 7, 15):
            view = market_window(chain, g, small_config.window, show_popularity=False)
            assert diversities[g] == pytest.approx(market_diversity(view, kind, chain=chain), rel=1e-12)


def test_external_embeddings_replace_pixels(star_and_line: list[Chain]) -> None:
    star, _ = star_and_line
    table = EmbeddingTable({node_id: np.array([1.0, float(node_id)]) for node_id in star.node_ids})
    distances = distance_matrix(star, DistanceKind.COSINE, table)
    assert distances[0, 0] == pytest.approx(0.0)
    assert distances[0, 1] == pytest.approx(1.0 - 1.0 / np.sqrt(2.0))


def test_diversity_series_groups_by_condition(star_and_line: list[Chain]) -> None:
    series = diversity_series(star_and_line, 12, DistanceKind.PHYLOGENETIC)
    assert series[Condition.PI].indices == [2, 3, 4]
    assert series[Condition.NPI].value_at(4) == pytest.approx(5 / 3)
    assert series[Condition.NPI].points[0].n == 1


def test_paired_pairs_skip_incomplete_pairs(star_and_line: list[Chain]) -> None:
    lonely = line_chain(3, Condition.PI, chain_id=7, pair_id=3)
    assert paired_pairs(star_and_line + [lonely]) == [(star_and_line[0], star_and_line[1])]


def test_run_metrics_on_hand_written_chains(star_and_line: list[Chain]) -> None:
    metrics = compute_run_metrics(star_and_line, 12, SETTINGS, seed=0)
    assert metrics.gini.gini_pi == pytest.approx(0.8)
    assert metrics.gini.gini_npi == pytest.approx(0.2)
    assert metrics.gini.delta == pytest.approx(0.6)
    gini_test = metrics.test_for(GINI_METRIC)
    assert gini_test.delta == pytest.approx(0.6)
    assert gini_test.p_value == 1.0
    assert gini_test.n_pairs == 1
    assert metrics.test_for("diversity-phylogenetic").delta == pytest.approx(-1 / 18)
    autocorrelation = metrics.series_for(AUTOCORRELATION_METRIC, Condition.PI)
    assert autocorrelation.indices == [0, 1, 2]
    assert autocorrelation.value_at(0) == pytest.approx(1.0)
    assert metrics.edit_sizes[Condition.NPI].mean == 1.0
    assert metrics.odds_ratios == {}
    assert metrics.period is not None
    assert metrics.period.late_delta == pytest.approx(-1 / 12)


def test_run_metrics_need_both_conditions(star_and_line: list[Chain]) -> None:
    with pytest.raises(InvalidArgumentError):
        compute_run_metrics(star_and_line[:1], 12, SETTINGS, seed=0)


def test_run_metrics_are_a_pure_function(small_config: ExperimentConfig) -> None:
    result = run_experiment(small_config)
    first = compute_run_metrics(result.chains, 12, small_config.analysis, seed=1, edits=result.edits)
    second = compute_run_metrics(result.chains, 12, small_config.analysis, seed=1, edits=result.edits)
    assert first == second
    assert set(first.odds_ratios) == set(EditStrategyLabel)
    assert len(first.tests) == 4


def test_gini_report_formatting() -> None:
    report = GiniReport(gini_pi=0.69, gini_npi=0.61, p_value=0.004, n_pairs=128)
    assert str(report) == "G(PI)=0.69, G(NPI)=0.61, Δ=0.08, p=0.004"
    assert REFERENCE_LINE == "reference: G(PI)=0.69, G(NPI)=0.61, Δ=0.08"


@pytest.mark.slow
def test_default_run_reproduces_the_condition_ordering() -> None:
    config = ExperimentConfig()
    result = run_experiment(config)
    metrics = compute_run_metrics(result.chains, config.window, config.analysis, config.seed, edits=result.edits)
    assert metrics.gini.delta > 0.0
    assert metrics.test_for("diversity-phylogenetic").delta < 0.0
    assert metrics.test_for("diversity-hamming").delta < 0.0
    assert metrics.test_for("diversity-phylogenetic").p_value < 0.05
    assert metrics.edit_sizes[Condition.PI].mean < metrics.edit_sizes[Condition.NPI].mean

    cosine = metrics.test_for("diversity-embedding-cosine")
    assert cosine.delta < 0.0
    assert cosine.p_value < 0.05
    assert metrics.gini.p_value < 0.05

    rho_pi = metrics.series_for(AUTOCORRELATION_METRIC, Condition.PI).points
    rho_npi = metrics.series_for(AUTOCORRELATION_METRIC, Condition.NPI).points
    assert [point.index for point in rho_pi] == list(range(config.analysis.max_lag + 1))
    for pi_point, npi_point in zip(rho_pi[1:], rho_npi[1:], strict=True):
        assert pi_point.value >= npi_point.value, pi_point.index
