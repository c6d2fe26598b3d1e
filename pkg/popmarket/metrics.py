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
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np
import numpy.typing as npt

from .core import phylo_distance
from .model import Chain, Image, InvalidArgumentError, MarketEntry, MarketView
from .rng import generator_from_seed

FloatArray = npt.NDArray[np.float64]

FULL_ENUMERATION_MAX_PAIRS = 20
_ENUMERATION_CHUNK = 1 << 15


class DistanceKind(Enum):
    HAMMING = "hamming"
    PHYLOGENETIC = "phylogenetic"
    COSINE = "embedding-cosine"


@dataclass(frozen=True)
class MetricPoint:
    index: int
    value: float
    se: float
    n: int

    def __post_init__(self) -> None:
        if not self.se >= 0.0:
            raise InvalidArgumentError(f"standard error must be non-negative, got {self.se}")
        if self.n < 1:
            raise InvalidArgumentError(f"a metric point needs at least one chain, got {self.n}")


@dataclass(frozen=True)
class MetricSeries:
    """One metric for one condition, indexed by generation or lag."""

    condition: str
    metric: str
    points: tuple[MetricPoint, ...]

    @classmethod
    def from_samples(
        cls, condition: str, metric: str, samples: Mapping[int, Sequence[float] | FloatArray]
    ) -> "MetricSeries":
        points = []
        for index in sorted(samples):
            mean, se = mean_and_se(samples[index])
            points.append(MetricPoint(index, mean, se, len(samples[index])))
        return cls(condition, metric, tuple(points))

    @property
    def indices(self) -> list[int]:
        return [point.index for point in self.points]

    @property
    def values(self) -> list[float]:
        return [point.value for point in self.points]

    def value_at(self, index: int) -> float:
        for point in self.points:
            if point.index == index:
                return point.value
        raise InvalidArgumentError(f"{self.metric} for {self.condition} has no point at index {index}")


def mean_and_se(values: Sequence[float] | FloatArray) -> tuple[float, float]:
    data = np.asarray(values, dtype=np.float64)
    if data.size == 0:
        raise InvalidArgumentError("cannot average an empty sample")
    if data.size == 1:
        return float(data[0]), 0.0
    return float(data.mean()), float(data.std(ddof=1) / math.sqrt(data.size))


@dataclass(frozen=True)
class EmbeddingTable:
    vectors: Mapping[int, FloatArray]
    source: str = "pixels"

    def __post_init__(self) -> None:
        dimensions = {np.shape(vector) for vector in self.vectors.values()}
        if len(dimensions) > 1:
            raise InvalidArgumentError(f"embedding vectors have mixed shapes {sorted(dimensions)}")
        for image_id, vector in self.vectors.items():
            if np.ndim(vector) != 1 or not np.isfinite(vector).all():
                raise InvalidArgumentError(f"embedding of image {image_id} must be a finite vector")

    @classmethod
    def from_images(cls, images: Iterable[Image]) -> "EmbeddingTable":
        """Pixels mapped to +1 (set) and -1 (unset), flattened row-major."""
        return cls({image.id: image.pixels.ravel().astype(np.float64) * 2.0 - 1.0 for image in images})

    @property
    def dimension(self) -> int:
        return len(next(iter(self.vectors.values()))) if self.vectors else 0

    def __contains__(self, image_id: object) -> bool:
        return image_id in self.vectors

    def vector(self, image_id: int) -> FloatArray:
        try:
            return self.vectors[image_id]
        except KeyError:
            raise InvalidArgumentError(f"no embedding for image {image_id} ({self.source})") from None

    def matrix(self, image_ids: Sequence[int]) -> FloatArray:
        return np.array([self.vector(image_id) for image_id in image_ids], dtype=np.float64)


def hamming_fraction(a: Image, b: Image) -> float:
    return float(np.count_nonzero(a.pixels != b.pixels)) / a.pixels.size


def cosine_distance(x: FloatArray, y: FloatArray) -> float:
    norm_x, norm_y = float(np.linalg.norm(x)), float(np.linalg.norm(y))
    if norm_x == 0.0 or norm_y == 0.0:
        raise DegenerateVectorError("cosine distance is undefined for a zero-norm embedding")
    return 1.0 - float(np.dot(x, y)) / (norm_x * norm_y)


def market_diversity(
    entries: MarketView | Sequence[MarketEntry],
    distance: DistanceKind,
    *,
    chain: Chain | None = None,
    embeddings: EmbeddingTable | None = None,
) -> float:
    """Mean distance over all unordered pairs of market entries."""
    items = list(entries.entries if isinstance(entries, MarketView) else entries)
    if len(items) < 2:
        raise UndefinedDiversityError(f"diversity needs at least two images, got {len(items)}")
    pairs = itertools.combinations(items, 2)
    if distance is DistanceKind.HAMMING:
        distances = [hamming_fraction(a.image, b.image) for a, b in pairs]
    elif distance is DistanceKind.PHYLOGENETIC:
        if chain is None:
            raise InvalidArgumentError("phylogenetic diversity needs the chain the market was drawn from")
        distances = [float(phylo_distance(chain, a.node_id, b.node_id)) for a, b in pairs]
    else:
        table = embeddings if embeddings is not None else EmbeddingTable.from_images(item.image for item in items)
        distances = [cosine_distance(table.vector(a.node_id), table.vector(b.node_id)) for a, b in pairs]
    # fsum is exactly rounded, so the result does not depend on entry order.
    return math.fsum(distances) / len(distances)


def chain_autocorrelation(chains: Sequence[FloatArray], tau: int) -> float:
    """
    Average chain autocorrelation at lag `tau`. Each element of `chains` holds one chain's
    embeddings ordered by generation. Positions are centered on the grand mean over every
    (chain, generation); the numerator sums over all pairs tau generations apart and the
    denominator over every position.
    """
    if tau < 0:
        raise InvalidArgumentError(f"lag must be non-negative, got {tau}")
    arrays = [np.atleast_2d(np.asarray(chain, dtype=np.float64)) for chain in chains if len(chain)]
    if not any(len(array) >= tau + 1 for array in arrays):
        raise InvalidArgumentError(f"no chain has the {tau + 1} images needed for lag {tau}")
    if len({array.shape[1] for array in arrays}) != 1:
        raise InvalidArgumentError("all embeddings must share one dimension")
    stacked = np.vstack(arrays)
    if np.ptp(stacked, axis=0).max() == 0.0:
        raise DegenerateVarianceError("all images are identical, autocorrelation is undefined")
    mean = stacked.mean(axis=0)
    centered = [array - mean for array in arrays]
    denominator = math.fsum(float(np.sum(c * c)) for c in centered)
    numerator = math.fsum(float(np.sum(c[: len(c) - tau] * c[tau:])) for c in centered if len(c) > tau)
    if denominator == 0.0:
        raise DegenerateVarianceError("centered embeddings have zero variance")
    return numerator / denominator


def gini(counts: Sequence[float] | FloatArray) -> float:
    """
    Gini coefficient as the mean absolute difference over all ordered pairs divided by twice the
    mean, with no small-sample correction. Evaluated from the sorted values in O(n log n).
    """
    values = np.sort(np.asarray(counts, dtype=np.float64))
    if values.size == 0:
        raise InvalidArgumentError("gini needs at least one value")
    if not np.isfinite(values).all() or values[0] < 0.0:
        raise InvalidArgumentError("gini needs finite non-negative values")
    total = math.fsum(values)
    if total == 0.0:
        raise UndefinedGiniError("gini is undefined when every count is zero")
    n = values.size
    weights = 2.0 * np.arange(n) - n + 1.0
    return math.fsum(weights * values) / (n * total)


@dataclass(frozen=True)
class GiniBootstrap:
    delta: float
    se: float
    p_value: float
    ci95: tuple[float, float]


def bootstrap_gini_difference(
    counts_a: Sequence[float], counts_b: Sequence[float], n_resamples: int = 1000, seed: int = 0
) -> GiniBootstrap:
    """Resamples items with replacement in each group and reports gini(a) - gini(b)."""
    a, b = np.asarray(counts_a, dtype=np.float64), np.asarray(counts_b, dtype=np.float64)
    delta = gini(a) - gini(b)
    rng = generator_from_seed(seed)
    resampled = _resampled_gini(a, n_resamples, rng) - _resampled_gini(b, n_resamples, rng)
    resampled = resampled[np.isfinite(resampled)]
    p_value = min(1.0, 2.0 * min(float(np.mean(resampled <= 0.0)), float(np.mean(resampled >= 0.0))))
    low, high = np.quantile(resampled, [0.025, 0.975])
    return GiniBootstrap(delta, float(resampled.std(ddof=1)), p_value, (float(low), float(high)))


def _resampled_gini(values: FloatArray, n_resamples: int, rng: np.random.Generator) -> FloatArray:
    n = values.size
    samples = np.sort(values[rng.integers(n, size=(n_resamples, n))], axis=1)
    totals = samples.sum(axis=1)
    weights = 2.0 * np.arange(n) - n + 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        result: FloatArray = (samples @ weights) / (n * totals)
    return result


def paired_permutation_test(
    values_a: Sequence[float], values_b: Sequence[float], n_resamples: int = 10_000, seed: int = 0
) -> float:
    """
    Two-sided sign-flip test of mean(a - b) over aligned pairs. Up to twenty pairs every sign
    assignment is enumerated; beyond that `n_resamples` random assignments are drawn and the
    observed assignment is counted once more.
    """
    a, b = np.asarray(values_a, dtype=np.float64), np.asarray(values_b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"paired samples differ in length: {a.size} vs {b.size}")
    if a.size == 0:
        raise InvalidArgumentError("the permutation test needs at least one pair")
    differences = a - b
    n = differences.size
    observed = abs(float(np.ones(n) @ differences) / n)
    threshold = observed - 1e-12 * max(1.0, observed)
    if n <= FULL_ENUMERATION_MAX_PAIRS:
        total, extreme = 1 << n, 0
        bits = np.arange(n)
        for start in range(0, total, _ENUMERATION_CHUNK):
            codes = np.arange(start, min(start + _ENUMERATION_CHUNK, total))
            signs = 1.0 - 2.0 * ((codes[:, None] >> bits) & 1)
            extreme += int(np.count_nonzero(np.abs(signs @ differences) / n >= threshold))
        return extreme / total
    rng = generator_from_seed(seed)
    extreme = 0
    for start in range(0, n_resamples, _ENUMERATION_CHUNK):
        size = min(_ENUMERATION_CHUNK, n_resamples - start)
        signs = 1.0 - 2.0 * rng.integers(0, 2, size=(size, n))
        extreme += int(np.count_nonzero(np.abs(signs @ differences) / n >= threshold))
    return (extreme + 1) / (n_resamples + 1)


@dataclass(frozen=True)
class OddsRatioPosterior:
    median: float
    ci68: tuple[float, float]
    ci95: tuple[float, float]
    p_null: float

    def __str__(self) -> str:
        return f"OR={self.median:.2f}, CI95=[{self.ci95[0]:.2f}, {self.ci95[1]:.2f}]"


def odds_ratio_posterior(
    successes_1: int, n_1: int, successes_2: int, n_2: int, n_samples: int = 100_000, seed: int = 0
) -> OddsRatioPosterior:
    """Posterior of odds(p1) / odds(p2) with uniform Beta(1, 1) priors on both proportions."""
    for successes, n in ((successes_1, n_1), (successes_2, n_2)):
        if n < 1 or not 0 <= successes <= n:
            raise InvalidArgumentError(f"need 0 <= successes <= n and n >= 1, got {successes}/{n}")
    rng = generator_from_seed(seed)
    eps = np.finfo(np.float64).eps
    p_1 = np.clip(rng.beta(successes_1 + 1, n_1 - successes_1 + 1, n_samples), eps, 1.0 - eps)
    p_2 = np.clip(rng.beta(successes_2 + 1, n_2 - successes_2 + 1, n_samples), eps, 1.0 - eps)
    ratios = (p_1 / (1.0 - p_1)) / (p_2 / (1.0 - p_2))
    q = np.quantile(ratios, [0.025, 0.16, 0.5, 0.84, 0.975])
    tail = min(float(np.mean(ratios <= 1.0)), float(np.mean(ratios >= 1.0)))
    return OddsRatioPosterior(
        median=float(q[2]),
        ci68=(float(q[1]), float(q[3])),
        ci95=(float(q[0]), float(q[4])),
        p_null=min(1.0, 2.0 * tail),
    )


@dataclass(frozen=True)
class PeriodContrast:
    split: int
    early_delta: float
    early_p: float
    late_delta: float
    late_p: float


def period_contrast(
    generations: Sequence[int],
    per_pair_a: FloatArray,
    per_pair_b: FloatArray,
    split: int,
    n_resamples: int = 10_000,
    seed: int = 0,
) -> PeriodContrast:
    """
    Compares a per-generation quantity between paired chains before and from `split`.
    `per_pair_a` and `per_pair_b` are (pairs x generations) arrays aligned with `generations`.
    """
    columns = np.asarray(generations)
    early, late = columns < split, columns >= split
    if not early.any() or not late.any():
        raise InvalidArgumentError(f"split {split} leaves one period empty")
    a, b = np.asarray(per_pair_a, dtype=np.float64), np.asarray(per_pair_b, dtype=np.float64)
    early_a, early_b = a[:, early].mean(axis=1), b[:, early].mean(axis=1)
    late_a, late_b = a[:, late].mean(axis=1), b[:, late].mean(axis=1)
    return PeriodContrast(
        split=split,
        early_delta=float(np.mean(early_a - early_b)),
        early_p=paired_permutation_test(early_a, early_b, n_resamples, seed),
        late_delta=float(np.mean(late_a - late_b)),
        late_p=paired_permutation_test(late_a, late_b, n_resamples, seed + 1),
    )


class UndefinedDiversityError(InvalidArgumentError):
    pass


class DegenerateVectorError(InvalidArgumentError):
    pass


class DegenerateVarianceError(InvalidArgumentError):
    pass


class UndefinedGiniError(InvalidArgumentError):
    pass
