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
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from .config import AnalysisSettings
from .constants import PIXEL_COUNT, REFERENCE_GINI_NPI, REFERENCE_GINI_PI
from .core import phylo_distance_matrix
from .creation import EditRecord, EditSizeStats, EditStrategyLabel, edit_size_stats, strategy_odds_ratios
from .metrics import (
    DegenerateVarianceError,
    DegenerateVectorError,
    DistanceKind,
    EmbeddingTable,
    GiniBootstrap,
    MetricPoint,
    MetricSeries,
    OddsRatioPosterior,
    PeriodContrast,
    bootstrap_gini_difference,
    chain_autocorrelation,
    gini,
    mean_and_se,
    paired_permutation_test,
    period_contrast,
)
from .model import Chain, Condition, InvalidArgumentError
from .rng import Purpose, RngLedger

FloatArray = npt.NDArray[np.float64]

DIVERSITY_METRICS = {
    DistanceKind.HAMMING: "diversity-hamming",
    DistanceKind.PHYLOGENETIC: "diversity-phylogenetic",
    DistanceKind.COSINE: "diversity-embedding-cosine",
}
AUTOCORRELATION_METRIC = "autocorrelation"
GINI_METRIC = "gini"
REFERENCE_LINE = (
    f"reference: G(PI)={REFERENCE_GINI_PI:.2f}, G(NPI)={REFERENCE_GINI_NPI:.2f}, "
    f"Δ={REFERENCE_GINI_PI - REFERENCE_GINI_NPI:.2f}"
)


def embedding_matrix(chain: Chain, embeddings: EmbeddingTable | None = None) -> FloatArray:
    """Rows in generation order. Without a table, pixels map to +1 (set) and -1 (unset)."""
    if embeddings is None:
        pixels = np.array([node.image.pixels.ravel() for node in chain.nodes], dtype=np.float64)
        return pixels * 2.0 - 1.0
    return embeddings.matrix(chain.node_ids)


def distance_matrix(chain: Chain, kind: DistanceKind, embeddings: EmbeddingTable | None = None) -> FloatArray:
    if kind is DistanceKind.HAMMING:
        pixels = np.array([node.image.pixels.ravel() for node in chain.nodes], dtype=np.float64)
        # Counts of 0/1 products are exact in float64.
        differing: FloatArray = pixels @ (1.0 - pixels).T + (1.0 - pixels) @ pixels.T
        return differing / PIXEL_COUNT
    if kind is DistanceKind.PHYLOGENETIC:
        _, tree_distances = phylo_distance_matrix(chain)
        return tree_distances.astype(np.float64)
    vectors = embedding_matrix(chain, embeddings)
    norms = np.linalg.norm(vectors, axis=1)
    if (norms == 0.0).any():
        raise DegenerateVectorError(f"chain {chain.chain_id} has a zero-norm embedding")
    cosine: FloatArray = 1.0 - (vectors @ vectors.T) / np.outer(norms, norms)
    return cosine


def market_diversities(
    chain: Chain, window: int, kind: DistanceKind, embeddings: EmbeddingTable | None = None
) -> dict[int, float]:
    """
    Diversity of every market shown in the chain, keyed by the observing generation. Markets of
    generation 1 hold only the seed and are skipped.
    """
    distances = distance_matrix(chain, kind, embeddings)
    diversities: dict[int, float] = {}
    for g in range(2, len(chain)):
        low = max(0, g - window)
        rows, cols = np.triu_indices(g - low, 1)
        block = distances[low:g, low:g]
        diversities[g] = math.fsum(block[rows, cols]) / rows.size
    return diversities


def diversity_series(
    chains: Sequence[Chain], window: int, kind: DistanceKind, embeddings: EmbeddingTable | None = None
) -> dict[Condition, MetricSeries]:
    per_chain = {chain.chain_id: market_diversities(chain, window, kind, embeddings) for chain in chains}
    return _series_by_condition(chains, per_chain, DIVERSITY_METRICS[kind])


def autocorrelation_series(
    chains: Sequence[Chain], max_lag: int, embeddings: EmbeddingTable | None = None
) -> dict[Condition, MetricSeries]:
    """
    Pooled chain autocorrelation per condition for lags 0..max_lag. The standard error comes from
    the spread of the single-chain values at each lag.
    """
    series: dict[Condition, MetricSeries] = {}
    for condition in _conditions(chains):
        arrays = [embedding_matrix(chain, embeddings) for chain in chains if chain.condition is condition]
        points: list[MetricPoint] = []
        for tau in range(max_lag + 1):
            if not any(len(array) > tau for array in arrays):
                break
            pooled = chain_autocorrelation(arrays, tau)
            singles: list[float] = []
            for array in arrays:
                if len(array) > tau:
                    try:
                        singles.append(chain_autocorrelation([array], tau))
                    except DegenerateVarianceError:
                        continue
            se = mean_and_se(singles)[1] if singles else 0.0
            points.append(MetricPoint(tau, pooled, se, max(1, len(singles))))
        series[condition] = MetricSeries(condition.value, AUTOCORRELATION_METRIC, tuple(points))
    return series


@dataclass(frozen=True)
class PairedTest:
    metric: str
    delta: float
    p_value: float
    n_pairs: int


@dataclass(frozen=True)
class GiniReport:
    gini_pi: float
    gini_npi: float
    p_value: float
    n_pairs: int
    bootstrap: GiniBootstrap | None = None

    @property
    def delta(self) -> float:
        return self.gini_pi - self.gini_npi

    def __str__(self) -> str:
        return f"G(PI)={self.gini_pi:.2f}, G(NPI)={self.gini_npi:.2f}, Δ={self.delta:.2f}, p={self.p_value:.3g}"


@dataclass(frozen=True)
class RunMetrics:
    series: tuple[MetricSeries, ...]
    tests: tuple[PairedTest, ...]
    gini: GiniReport
    edit_sizes: dict[Condition, EditSizeStats]
    odds_ratios: dict[EditStrategyLabel, OddsRatioPosterior] = field(default_factory=dict)
    period: PeriodContrast | None = None

    def series_for(self, metric: str, condition: Condition) -> MetricSeries:
        for series in self.series:
            if series.metric == metric and series.condition == condition.value:
                return series
        raise InvalidArgumentError(f"no {metric} series for {condition.value}")

    def test_for(self, metric: str) -> PairedTest:
        for test in self.tests:
            if test.metric == metric:
                return test
        raise InvalidArgumentError(f"no paired test for {metric}")


def paired_pairs(chains: Sequence[Chain]) -> list[tuple[Chain, Chain]]:
    """(PI, NPI) chains sharing a pair id, ordered by pair id."""
    by_pair: dict[int, dict[Condition, Chain]] = {}
    for chain in chains:
        by_pair.setdefault(chain.pair_id, {})[chain.condition] = chain
    return [
        (by_pair[pair_id][Condition.PI], by_pair[pair_id][Condition.NPI])
        for pair_id in sorted(by_pair)
        if len(by_pair[pair_id]) == len(Condition)
    ]


def compute_run_metrics(
    chains: Sequence[Chain],
    window: int,
    settings: AnalysisSettings,
    seed: int,
    embeddings: EmbeddingTable | None = None,
    edits: Sequence[EditRecord] | None = None,
) -> RunMetrics:
    """
    Every per-run metric: market diversity by generation, chain autocorrelation by lag, selection
    inequality and edit statistics, with paired tests between PI and NPI chains of the same pair.
    A pure function of its inputs, so a stored run analyzes to exactly what the run reported.
    """
    if set(_conditions(chains)) != set(Condition):
        raise InvalidArgumentError("analysis needs chains from both PI and NPI")
    ledger = RngLedger(seed)
    pairs = paired_pairs(chains)
    series: list[MetricSeries] = []
    tests: list[PairedTest] = []
    period = None

    for test_index, (kind, metric) in enumerate(DIVERSITY_METRICS.items()):
        per_chain = {chain.chain_id: market_diversities(chain, window, kind, embeddings) for chain in chains}
        series.extend(_series_by_condition(chains, per_chain, metric).values())
        usable = [(a, b) for a, b in pairs if per_chain[a.chain_id] and per_chain[b.chain_id]]
        if usable:
            means_a = [math.fsum(per_chain[a.chain_id].values()) / len(per_chain[a.chain_id]) for a, _ in usable]
            means_b = [math.fsum(per_chain[b.chain_id].values()) / len(per_chain[b.chain_id]) for _, b in usable]
            tests.append(_paired_test(metric, means_a, means_b, settings, ledger, test_index))
        if kind is DistanceKind.PHYLOGENETIC and usable:
            period = _period_contrast(usable, per_chain, settings, ledger)

    series.extend(autocorrelation_series(chains, settings.max_lag, embeddings).values())

    chain_ginis = {chain.chain_id: gini(chain.selection_counts()) for chain in chains if len(chain) > 1}
    gini_pairs = [(a, b) for a, b in pairs if a.chain_id in chain_ginis and b.chain_id in chain_ginis]
    gini_test = PairedTest(GINI_METRIC, math.nan, math.nan, 0)
    if gini_pairs:
        gini_test = _paired_test(
            GINI_METRIC,
            [chain_ginis[a.chain_id] for a, _ in gini_pairs],
            [chain_ginis[b.chain_id] for _, b in gini_pairs],
            settings,
            ledger,
            len(DIVERSITY_METRICS),
        )
        tests.append(gini_test)
    counts = {condition: _pooled_counts(chains, condition) for condition in Condition}
    report = GiniReport(
        gini_pi=gini(counts[Condition.PI]),
        gini_npi=gini(counts[Condition.NPI]),
        p_value=gini_test.p_value,
        n_pairs=gini_test.n_pairs,
        bootstrap=bootstrap_gini_difference(
            counts[Condition.PI],
            counts[Condition.NPI],
            settings.n_bootstrap,
            ledger.derived_seed(Purpose.BOOTSTRAP),
        ),
    )

    odds_ratios: dict[EditStrategyLabel, OddsRatioPosterior] = {}
    if edits:
        odds_ratios = strategy_odds_ratios(edits, settings.or_samples, ledger.derived_seed(Purpose.POSTERIOR))

    return RunMetrics(
        series=tuple(series),
        tests=tuple(tests),
        gini=report,
        edit_sizes=edit_size_stats(chains),
        odds_ratios=odds_ratios,
        period=period,
    )


def _conditions(chains: Sequence[Chain]) -> list[Condition]:
    present = {chain.condition for chain in chains}
    return [condition for condition in Condition if condition in present]


def _series_by_condition(
    chains: Sequence[Chain], per_chain: Mapping[int, Mapping[int, float]], metric: str
) -> dict[Condition, MetricSeries]:
    samples: dict[Condition, dict[int, list[float]]] = {condition: {} for condition in _conditions(chains)}
    for chain in chains:
        for generation, value in per_chain[chain.chain_id].items():
            samples[chain.condition].setdefault(generation, []).append(value)
    return {
        condition: MetricSeries.from_samples(condition.value, metric, by_generation)
        for condition, by_generation in samples.items()
        if by_generation
    }


def _paired_test(
    metric: str,
    values_a: Sequence[float],
    values_b: Sequence[float],
    settings: AnalysisSettings,
    ledger: RngLedger,
    index: int,
) -> PairedTest:
    return PairedTest(
        metric=metric,
        delta=math.fsum(a - b for a, b in zip(values_a, values_b)) / len(values_a),
        p_value=paired_permutation_test(
            values_a, values_b, settings.n_resamples, ledger.derived_seed(Purpose.PERMUTATION, index)
        ),
        n_pairs=len(values_a),
    )


def _period_contrast(
    pairs: Sequence[tuple[Chain, Chain]],
    per_chain: Mapping[int, Mapping[int, float]],
    settings: AnalysisSettings,
    ledger: RngLedger,
) -> PeriodContrast | None:
    shared = set.intersection(*(set(per_chain[chain.chain_id]) for pair in pairs for chain in pair))
    generations = sorted(shared)
    if not generations or not generations[0] < settings.late_from <= generations[-1]:
        return None
    a = np.array([[per_chain[pi.chain_id][g] for g in generations] for pi, _ in pairs])
    b = np.array([[per_chain[npi.chain_id][g] for g in generations] for _, npi in pairs])
    return period_contrast(
        generations,
        a,
        b,
        settings.late_from,
        settings.n_resamples,
        ledger.derived_seed(Purpose.PERMUTATION, len(DIVERSITY_METRICS) + 1),
    )


def _pooled_counts(chains: Sequence[Chain], condition: Condition) -> list[int]:
    return [count for chain in chains if chain.condition is condition for count in chain.selection_counts()]
