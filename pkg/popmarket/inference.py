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

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cache

import numpy as np
import numpy.typing as npt
from pydantic import Field
from pydantic.dataclasses import dataclass as pydantic_dataclass
from scipy.special import logsumexp

from .constants import CRITERIA, DEFAULT_WINDOW
from .model import Condition, Image, InvalidArgumentError, InvariantViolationError, MarketEntry, MarketView
from .policies import POLICY_ORDER, Policy, PolicyMixture, UtilityModel, mixture_select, softmax_probs
from .rng import generator_from_seed

FloatArray = npt.NDArray[np.float64]
Beta = tuple[float, float, float, float]

MONOTONE_SLACK = 1e-9
GRADIENT_RTOL = 1e-5


@dataclass(frozen=True)
class ChoiceRecord:
    """One observed selection: the market as shown, each entry's ratings, and which entry was chosen."""

    record_id: int
    condition: Condition
    chosen_index: int
    popularity: npt.NDArray[np.int64]
    ratings: FloatArray

    def __post_init__(self) -> None:
        popularity = np.asarray(self.popularity, dtype=np.int64)
        ratings = np.asarray(self.ratings, dtype=np.float64)
        size = popularity.shape[0] if popularity.ndim == 1 else 0
        if size < 1 or ratings.shape != (size, len(CRITERIA)):
            raise InvalidArgumentError(
                f"record {self.record_id}: need {len(CRITERIA)} ratings for each of {size} market entries"
            )
        if not 0 <= self.chosen_index < size:
            raise InvalidArgumentError(f"record {self.record_id}: chosen index {self.chosen_index} outside market")
        if not np.isfinite(ratings).all() or (popularity < 0).any():
            raise InvalidArgumentError(f"record {self.record_id}: ratings must be finite, popularity non-negative")
        object.__setattr__(self, "popularity", popularity)
        object.__setattr__(self, "ratings", ratings)

    @property
    def market_size(self) -> int:
        return int(self.popularity.shape[0])


def policy_likelihoods(record: ChoiceRecord, beta: Sequence[float]) -> FloatArray:
    """Probability of the observed choice under each policy, in POLICY_ORDER."""
    utilities = record.ratings @ np.asarray(beta, dtype=np.float64)
    image_driven = float(softmax_probs(utilities)[record.chosen_index])
    random = 1.0 / record.market_size
    if not record.condition.shows_popularity:
        return np.array([image_driven, 0.0, 0.0, random])
    chosen = record.popularity[record.chosen_index]
    leaders = int(np.count_nonzero(record.popularity == record.popularity.max()))
    laggards = int(np.count_nonzero(record.popularity == record.popularity.min()))
    cum_adv = 1.0 / leaders if chosen == record.popularity.max() else 0.0
    balancing = 1.0 / laggards if chosen == record.popularity.min() else 0.0
    return np.array([image_driven, cum_adv, balancing, random])


@dataclass(frozen=True)
class RecordBatch:
    """Records padded to a common market size so the E-step runs on arrays."""

    ratings: FloatArray
    mask: npt.NDArray[np.bool_]
    chosen: npt.NDArray[np.int64]
    fixed: FloatArray

    @classmethod
    def from_records(cls, records: Sequence[ChoiceRecord]) -> "RecordBatch":
        if not records:
            raise InvalidArgumentError("cannot fit a condition without records")
        width = max(record.market_size for record in records)
        ratings = np.zeros((len(records), width, len(CRITERIA)))
        mask = np.zeros((len(records), width), dtype=bool)
        fixed = np.zeros((len(records), len(POLICY_ORDER) - 1))
        for i, record in enumerate(records):
            ratings[i, : record.market_size] = record.ratings
            mask[i, : record.market_size] = True
            fixed[i] = policy_likelihoods(record, np.zeros(len(CRITERIA)))[1:]
        chosen = np.array([record.chosen_index for record in records], dtype=np.int64)
        return cls(ratings, mask, chosen, fixed)

    def __len__(self) -> int:
        return int(self.chosen.shape[0])

    def image_driven_log_probs(self, beta: Sequence[float]) -> tuple[FloatArray, FloatArray]:
        """Log-probability of each observed choice and the full softmax matrix."""
        utilities = np.where(self.mask, self.ratings @ np.asarray(beta, dtype=np.float64), -np.inf)
        log_norm = logsumexp(utilities, axis=1)
        log_probs = utilities - log_norm[:, None]
        rows = np.arange(len(self))
        return log_probs[rows, self.chosen], np.where(self.mask, np.exp(log_probs), 0.0)

    def likelihoods(self, beta: Sequence[float]) -> FloatArray:
        chosen_log_probs, _ = self.image_driven_log_probs(beta)
        return np.column_stack([np.exp(chosen_log_probs), self.fixed])


def expected_image_driven_loglik(batch: RecordBatch, beta: Sequence[float], responsibility: FloatArray) -> float:
    chosen_log_probs, _ = batch.image_driven_log_probs(beta)
    return float(np.sum(responsibility * chosen_log_probs))


def expected_image_driven_gradient(batch: RecordBatch, beta: Sequence[float], responsibility: FloatArray) -> FloatArray:
    """Gradient in beta of sum_i resp_i * log softmax(u_i)[chosen_i]."""
    _, probs = batch.image_driven_log_probs(beta)
    rows = np.arange(len(batch))
    chosen_ratings = batch.ratings[rows, batch.chosen]
    expected_ratings = np.einsum("nm,nmc->nc", probs, batch.ratings)
    gradient: FloatArray = responsibility @ (chosen_ratings - expected_ratings)
    return gradient


def finite_difference_gradient(
    objective: Callable[[FloatArray], float], beta: Sequence[float], step: float = 1e-6
) -> FloatArray:
    point = np.asarray(beta, dtype=np.float64)
    gradient = np.zeros_like(point)
    for c in range(point.size):
        offset = np.zeros_like(point)
        offset[c] = step
        gradient[c] = (objective(point + offset) - objective(point - offset)) / (2.0 * step)
    return gradient


@pydantic_dataclass
class FitOptions:
    max_iter: int = Field(default=500, ge=1)
    tol: float = Field(default=1e-8, gt=0.0)
    fit_beta: bool = True
    shared_beta: bool = True
    n_starts: int = Field(default=5, ge=1)
    n_bootstrap: int = Field(default=0, ge=0)
    seed: int = Field(default=0, ge=0)
    beta: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    check_gradient: bool = True
    beta_steps: int = Field(default=5, ge=1)


@dataclass(frozen=True)
class FitResult:
    weights: dict[Condition, PolicyMixture]
    weight_se: dict[Condition, tuple[float, float, float, float]]
    betas: dict[Condition, Beta]
    log_likelihood: float
    iterations: int
    final_delta: float
    converged: bool
    history: tuple[float, ...] = field(default=(), repr=False)


@dataclass
class _FitState:
    weights: dict[Condition, FloatArray]
    betas: dict[Condition, FloatArray]


def _log_likelihood(batches: Mapping[Condition, RecordBatch], state: _FitState) -> float:
    return sum(
        float(np.sum(np.log(batch.likelihoods(state.betas[condition]) @ state.weights[condition])))
        for condition, batch in batches.items()
    )


def _responsibilities(batch: RecordBatch, beta: FloatArray, weights: FloatArray) -> FloatArray:
    weighted = batch.likelihoods(beta) * weights
    totals = weighted.sum(axis=1)
    # The random policy always assigns positive probability.
    assert (totals > 0.0).all(), "a record has zero likelihood under every policy"
    responsibilities: FloatArray = weighted / totals[:, None]
    return responsibilities


def _ascend_beta(
    batches: Mapping[Condition, RecordBatch],
    responsibilities: Mapping[Condition, FloatArray],
    beta: FloatArray,
    options: FitOptions,
    verify: bool,
) -> FloatArray:
    """Backtracking gradient ascent on the expected image-driven log-likelihood; never decreases it."""

    def objective(point: FloatArray) -> float:
        return sum(
            expected_image_driven_loglik(batches[c], point, responsibilities[c][:, 0]) for c in batches
        )

    def gradient(point: FloatArray) -> FloatArray:
        return np.asarray(
            sum(expected_image_driven_gradient(batches[c], point, responsibilities[c][:, 0]) for c in batches),
            dtype=np.float64,
        )

    if verify:
        analytic, numeric = gradient(beta), finite_difference_gradient(objective, beta)
        error = float(np.linalg.norm(analytic - numeric)) / max(float(np.linalg.norm(numeric)), 1.0)
        if error > GRADIENT_RTOL:
            raise InvariantViolationError(f"beta gradient disagrees with finite differences (rel. error {error:.2e})")
    scale = max(1.0, sum(float(r[:, 0].sum()) for r in responsibilities.values()))
    current, value = beta, objective(beta)
    for _ in range(options.beta_steps):
        direction = gradient(current) / scale
        step = 1.0
        while step > 1e-8:
            candidate = current + step * direction
            candidate_value = objective(candidate)
            if candidate_value >= value:
                current, value = candidate, candidate_value
                break
            step /= 2.0
        else:
            break
    return current


def _run_em(
    batches: Mapping[Condition, RecordBatch], state: _FitState, options: FitOptions
) -> tuple[_FitState, list[float], bool]:
    history = [_log_likelihood(batches, state)]
    converged = False
    for iteration in range(options.max_iter):
        responsibilities = {
            c: _responsibilities(batch, state.betas[c], state.weights[c]) for c, batch in batches.items()
        }
        weights = {c: r.mean(axis=0) for c, r in responsibilities.items()}
        betas = dict(state.betas)
        if options.fit_beta:
            verify = options.check_gradient and iteration == 0
            if options.shared_beta:
                shared = _ascend_beta(batches, responsibilities, next(iter(betas.values())), options, verify)
                betas = {c: shared for c in batches}
            else:
                betas = {
                    c: _ascend_beta({c: batches[c]}, {c: responsibilities[c]}, betas[c], options, verify)
                    for c in batches
                }
        state = _FitState(weights, betas)
        history.append(_log_likelihood(batches, state))
        improvement = history[-1] - history[-2]
        if improvement < -MONOTONE_SLACK * max(1.0, abs(history[-2])):
            raise InvariantViolationError(f"EM log-likelihood decreased by {-improvement:.3e}")
        if improvement < options.tol:
            converged = True
            break
    return state, history, converged


def _fit_from_starts(
    batches: Mapping[Condition, RecordBatch], options: FitOptions, starts: Sequence[dict[Condition, FloatArray]]
) -> tuple[_FitState, list[float], bool]:
    best: tuple[_FitState, list[float], bool] | None = None
    beta = np.asarray(options.beta, dtype=np.float64)
    for start in starts:
        outcome = _run_em(batches, _FitState(dict(start), {c: beta for c in batches}), options)
        if best is None or outcome[1][-1] > best[1][-1]:
            best = outcome
    assert best is not None
    return best


def fit_mixture(
    records: Sequence[ChoiceRecord] | Mapping[Condition, Sequence[ChoiceRecord]], options: FitOptions | None = None
) -> FitResult:
    """
    Maximum-likelihood policy prevalences per condition by EM. The E-step assigns each record a
    responsibility for every policy; the M-step sets weights to the mean responsibilities and,
    when `fit_beta`, ascends the expected image-driven log-likelihood in beta.
    """
    options = options or FitOptions()
    grouped = _group(records)
    batches = {condition: RecordBatch.from_records(group) for condition, group in grouped.items()}
    rng = generator_from_seed(options.seed)
    uniform = np.full(len(POLICY_ORDER), 1.0 / len(POLICY_ORDER))
    starts = [{c: uniform for c in batches}] + [
        {c: rng.dirichlet(np.ones(len(POLICY_ORDER))) for c in batches} for _ in range(options.n_starts - 1)
    ]
    state, history, converged = _fit_from_starts(batches, options, starts)

    weight_se = {c: (0.0, 0.0, 0.0, 0.0) for c in batches}
    if options.n_bootstrap >= 2:
        resampled_weights: dict[Condition, list[FloatArray]] = {c: [] for c in batches}
        for _ in range(options.n_bootstrap):
            resampled = {c: RecordBatch.from_records(_resample(grouped[c], rng)) for c in batches}
            boot_state, _, _ = _run_em(resampled, _FitState(dict(state.weights), dict(state.betas)), options)
            for c in batches:
                resampled_weights[c].append(boot_state.weights[c])
        weight_se = {c: _as_beta(np.std(resampled_weights[c], axis=0, ddof=1)) for c in batches}

    return FitResult(
        weights={c: PolicyMixture.from_weights(w) for c, w in state.weights.items()},
        weight_se=weight_se,
        betas={c: _as_beta(b) for c, b in state.betas.items()},
        log_likelihood=history[-1],
        iterations=len(history) - 1,
        final_delta=history[-1] - history[-2] if len(history) > 1 else 0.0,
        converged=converged,
        history=tuple(history),
    )


def _group(
    records: Sequence[ChoiceRecord] | Mapping[Condition, Sequence[ChoiceRecord]],
) -> dict[Condition, list[ChoiceRecord]]:
    grouped: dict[Condition, list[ChoiceRecord]] = {}
    if isinstance(records, Mapping):
        grouped = {condition: list(group) for condition, group in records.items() if group}
    else:
        for record in records:
            grouped.setdefault(record.condition, []).append(record)
    if not grouped:
        raise InvalidArgumentError("fit_mixture needs at least one record")
    return {condition: grouped[condition] for condition in Condition if condition in grouped}


def _as_beta(values: FloatArray) -> Beta:
    a, b, c, d = (float(v) for v in values)
    return a, b, c, d


def _resample(records: Sequence[ChoiceRecord], rng: np.random.Generator) -> list[ChoiceRecord]:
    return [records[i] for i in rng.integers(len(records), size=len(records))]


@cache
def _slot_images(size: int) -> tuple[Image, ...]:
    return tuple(Image.blank(i) for i in range(size))


def synthetic_choice_records(
    mixture: PolicyMixture,
    condition: Condition,
    n_records: int,
    rng: np.random.Generator,
    beta: Sequence[float] = (1.0, 1.0, 1.0, 1.0),
    market_size: int = DEFAULT_WINDOW,
    max_popularity: int = 10,
    start_id: int = 0,
) -> list[ChoiceRecord]:
    """
    Generates records with known ground truth: standard-normal ratings, uniform popularity in
    [0, max_popularity], and choices made by `mixture_select`.
    """
    images = _slot_images(market_size)
    records = []
    for i in range(n_records):
        popularity = rng.integers(0, max_popularity + 1, size=market_size)
        ratings = rng.standard_normal((market_size, len(CRITERIA)))
        model = UtilityModel(beta=_as_beta(np.asarray(beta, dtype=np.float64)))
        for slot in range(market_size):
            model.set_scores(slot, ratings[slot])
        shown = condition.shows_popularity
        view = MarketView(
            tuple(
                MarketEntry(slot, market_size - 1 - slot, images[slot], int(popularity[slot]) if shown else None)
                for slot in range(market_size)
            ),
            generation=market_size,
            window=market_size,
        )
        chosen, _ = mixture_select(view, mixture, model, rng)
        records.append(ChoiceRecord(start_id + i, condition, chosen, popularity, ratings))
    return records

