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

from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .analysis import diversity_series
from .config import ExperimentConfig
from .constants import GRID_SIZE
from .core import market_window, new_chain, record_choice
from .creation import EditRecord, apply_strategy, sample_strategy
from .inference import Beta, ChoiceRecord, FitResult
from .metrics import DistanceKind, MetricSeries
from .model import Chain, Condition, Image, MarketView
from .policies import PolicyMixture, UtilityModel, mixture_select
from .rng import Purpose, RngLedger


@dataclass(frozen=True)
class ChainTask:
    chain_id: int
    pair_id: int
    condition: Condition


@dataclass(frozen=True)
class ExperimentResult:
    chains: list[Chain]
    choices: list[ChoiceRecord]
    edits: list[EditRecord]


def chain_tasks(config: ExperimentConfig) -> list[ChainTask]:
    """
    Chain ids interleave conditions: pair p runs PI as chain 2p and NPI as chain 2p + 1. Paired
    chains start from the same seed image.
    """
    return [
        ChainTask(chain_id=2 * index + offset, pair_id=index, condition=condition)
        for index in range(config.chains)
        for offset, condition in enumerate(Condition)
    ]


def seed_image(config: ExperimentConfig, ledger: RngLedger, task: ChainTask, node_id: int) -> Image:
    key = task.pair_id if config.paired else task.chain_id
    rng = ledger.stream(Purpose.SEED_IMAGE, key)
    pixels = (rng.random((GRID_SIZE, GRID_SIZE)) < config.seed_density).astype(np.uint8)
    return Image(node_id, pixels)


def simulate_chain(
    task: ChainTask,
    config: ExperimentConfig,
    ledger: RngLedger,
    mixture: PolicyMixture,
    beta: Beta,
) -> tuple[Chain, list[ChoiceRecord], list[EditRecord]]:
    """
    Runs one chain for `config.generations` generations. Node ids are
    chain_id * (generations + 1) + generation, unique within the run.
    """
    first_id = task.chain_id * (config.generations + 1)
    rng = ledger.stream(Purpose.CHAIN, task.chain_id)
    chain = new_chain(
        task.chain_id,
        task.pair_id,
        task.condition,
        seed_image(config, ledger, task, first_id),
        ledger.derived_seed(Purpose.CHAIN, task.chain_id),
    )
    model = UtilityModel(beta=beta)
    model.draw_scores(first_id, rng)
    profile = config.profile(task.condition)
    choices: list[ChoiceRecord] = []
    edits: list[EditRecord] = []
    for g in range(1, config.generations + 1):
        view = market_window(chain, g, config.window, task.condition.shows_popularity)
        chosen, policy = mixture_select(view, mixture, model, rng, config.cum_adv_mode)
        choices.append(_choice_record(task, g, config.generations, view, chosen, chain, model))
        strategy = sample_strategy(profile, rng)
        child, changed = apply_strategy(chain.node(chosen).image, strategy, rng, first_id + g)
        record_choice(
            chain, g, chosen, child, window=config.window, policy=policy.value, strategy=strategy.label.value
        )
        model.draw_scores(child.id, rng)
        edits.append(
            EditRecord(
                chain_id=task.chain_id,
                condition=task.condition,
                generation=g,
                parent_id=chosen,
                child_id=child.id,
                policy=policy.value,
                strategy=strategy.label,
                changed_pixels=changed,
            )
        )
    return chain, choices, edits


def run_experiment(
    config: ExperimentConfig,
    ledger: RngLedger | None = None,
    threads: int | None = None,
    mixtures: Mapping[Condition, PolicyMixture] | None = None,
    betas: Mapping[Condition, Beta] | None = None,
) -> ExperimentResult:
    """
    Simulates every chain of the experiment on a worker pool. Each chain draws only from its own
    stream, and results are collected in chain order, so the outcome is the same for any thread count.
    """
    ledger = ledger or RngLedger(config.seed)
    mixtures = mixtures or {condition: config.mixture(condition) for condition in Condition}
    betas = betas or {condition: config.beta for condition in Condition}

    def simulate(task: ChainTask) -> tuple[Chain, list[ChoiceRecord], list[EditRecord]]:
        return simulate_chain(task, config, ledger, mixtures[task.condition], betas[task.condition])

    with ThreadPoolExecutor(max_workers=threads or config.threads) as pool:
        outcomes = list(pool.map(simulate, chain_tasks(config)))
    return ExperimentResult(
        chains=[chain for chain, _, _ in outcomes],
        choices=[record for _, records, _ in outcomes for record in records],
        edits=[edit for _, _, chain_edits in outcomes for edit in chain_edits],
    )


def simulate_from_fit(
    fit: FitResult, config: ExperimentConfig, seed: int, threads: int | None = None
) -> tuple[list[Chain], dict[Condition, MetricSeries]]:
    """
    Evolves chains under the fitted policy mixtures and utility weights, and returns the
    phylogenetic diversity of their markets by generation for each condition.
    """
    conditions: Sequence[Condition] = [condition for condition in Condition if condition in fit.weights]
    mixtures = {condition: fit.weights.get(condition, fit.weights[conditions[0]]) for condition in Condition}
    betas = {condition: fit.betas.get(condition, fit.betas[conditions[0]]) for condition in Condition}
    result = run_experiment(config, RngLedger(seed), threads, mixtures, betas)
    return result.chains, diversity_series(result.chains, config.window, DistanceKind.PHYLOGENETIC)


def _choice_record(
    task: ChainTask,
    g: int,
    generations: int,
    view: MarketView,
    chosen: int,
    chain: Chain,
    model: UtilityModel,
) -> ChoiceRecord:
    # Selection counts are recorded in both conditions; NPI agents simply never saw them.
    return ChoiceRecord(
        record_id=task.chain_id * generations + g - 1,
        condition=task.condition,
        chosen_index=view.node_ids.index(chosen),
        popularity=np.array([chain.node(node_id).selection_count for node_id in view.node_ids], dtype=np.int64),
        ratings=np.array([model.scores(node_id) for node_id in view.node_ids], dtype=np.float64),
    )
