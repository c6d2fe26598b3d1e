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

import dataclasses
from collections.abc import Callable
from pathlib import Path
from typing import Any

from . import __version__
from .analysis import (
    AUTOCORRELATION_METRIC,
    DIVERSITY_METRICS,
    REFERENCE_LINE,
    RunMetrics,
    compute_run_metrics,
)
from .color import ANSIColor
from .config import ExperimentConfig
from .constants import (
    CHAINS_CSV,
    CHOICES_CSV,
    EDITS_CSV,
    FIT_SUMMARY_YML,
    FIT_WEIGHTS_CSV,
    FITNESS_CSV,
    MANIFEST_YML,
    METRICS_CSV,
    NEWICK_DIR,
    PVALUES_CSV,
    SVG_DIR,
)
from .creation import EditRecord
from .fitness_model import FitnessRun, Parameterization, crossing_holds, run_fitness_experiment
from .formats import (
    fit_summary,
    read_chains_csv,
    read_choices_csv,
    read_edits_csv,
    read_embeddings_csv,
    write_chains_csv,
    write_choices_csv,
    write_edits_csv,
    write_fit_weights_csv,
    write_fitness_csv,
    write_metrics_csv,
    write_newick_files,
    write_pvalues_csv,
    write_text,
    write_yaml,
)
from .inference import FitResult, fit_mixture
from .metrics import EmbeddingTable, MetricSeries
from .model import Chain
from .plot import emit_plot_svg
from .policies import POLICY_ORDER
from .rng import Purpose, RngLedger
from .simulation import run_experiment, simulate_from_fit
from .utils import print_with_local_color

FIT_DIVERSITY_CSV = "fit_diversity.csv"
CROSSING_EARLY_GENERATION = 5
# Never written to the manifest; neither changes a result.
RUN_LOCAL_KEYS = ("threads", "output_dir")


class PopMarketApplication:
    def __init__(self, config: ExperimentConfig, output_dir: Path | None = None) -> None:
        self._config = config
        self._output_dir = output_dir or Path(config.output_dir)
        self._written: list[Path] = []

    def run(self, embeddings_path: Path | None = None) -> RunMetrics:
        config = self._config
        embeddings = read_embeddings_csv(embeddings_path) if embeddings_path else None
        print_with_local_color(
            f"Simulating {config.chains} PI/NPI chain pairs over {config.generations} generations "
            f"(window {config.window}, seed {config.seed})",
            ANSIColor.CYAN,
        )
        result = run_experiment(config)
        self._write(CHAINS_CSV, lambda path: write_chains_csv(result.chains, path))
        self._write(EDITS_CSV, lambda path: write_edits_csv(result.edits, path))
        self._write(CHOICES_CSV, lambda path: write_choices_csv(result.choices, path))
        self._written += write_newick_files(result.chains, self._output_dir / NEWICK_DIR)
        metrics = self._analyze(result.chains, config.window, embeddings, result.edits)
        self._write_manifest("run", {"chains": {chain.chain_id: chain.seed for chain in result.chains}})
        return metrics

    def analyze(
        self,
        chains_path: Path,
        edits_path: Path | None = None,
        embeddings_path: Path | None = None,
        window: int | None = None,
    ) -> RunMetrics:
        chains = read_chains_csv(chains_path)
        edits = read_edits_csv(edits_path) if edits_path else None
        embeddings = read_embeddings_csv(embeddings_path) if embeddings_path else None
        print(f"Analyzing {len(chains)} chains from {chains_path}")
        metrics = self._analyze(chains, window or self._config.window, embeddings, edits)
        self._write_manifest("analyze", {"input": str(chains_path)})
        return metrics

    def fitness(self) -> dict[Parameterization, FitnessRun]:
        config = self._config
        settings = config.fitness
        runs: dict[Parameterization, FitnessRun] = {}
        for parameterization in settings.parameterizations:
            print(f"Running {parameterization.value} ({settings.chains} chains, {settings.generations} generations)")
            runs[parameterization] = run_fitness_experiment(
                settings.bitstring_config(parameterization), config.seed, parameterization.value, config.threads
            )
        self._write(FITNESS_CSV, lambda path: write_fitness_csv(runs.values(), path))
        self._plot("fitness", [run.fitness for run in runs.values()], ylabel="mean fitness")
        self._plot("fitness-delta", [run.delta for run in runs.values()], ylabel="mean fitness change")
        self._report_crossing(runs)
        self._write_manifest("fitness", {})
        return runs

    def fit(
        self,
        records_path: Path,
        n_starts: int | None = None,
        n_bootstrap: int | None = None,
        simulate: bool = False,
    ) -> FitResult:
        config = self._config
        records = read_choices_csv(records_path)
        ledger_seed = _derived_seed(config, Purpose.FIT)
        options = config.inference.options(ledger_seed, config.beta)
        if n_starts is not None:
            options = dataclasses.replace(options, n_starts=n_starts)
        if n_bootstrap is not None:
            options = dataclasses.replace(options, n_bootstrap=n_bootstrap)
        print(f"Fitting policy mixtures to {len(records)} choice records ({options.n_starts} starts)")
        fit = fit_mixture(records, options)
        self._write(FIT_WEIGHTS_CSV, lambda path: write_fit_weights_csv(fit, path))
        self._write(FIT_SUMMARY_YML, lambda path: write_yaml(fit_summary(fit), path))
        self._report_fit(fit)
        if simulate:
            _, diversity = simulate_from_fit(fit, config, _derived_seed(config, Purpose.CHAIN))
            self._write(FIT_DIVERSITY_CSV, lambda path: write_metrics_csv(diversity.values(), path))
            self._plot("fit-diversity-phylogenetic", list(diversity.values()), ylabel="phylogenetic diversity")
        self._write_manifest("fit", {"input": str(records_path)})
        return fit

    def _analyze(
        self,
        chains: list[Chain],
        window: int,
        embeddings: EmbeddingTable | None,
        edits: list[EditRecord] | None,
    ) -> RunMetrics:
        metrics = compute_run_metrics(chains, window, self._config.analysis, self._config.seed, embeddings, edits)
        self._write(METRICS_CSV, lambda path: write_metrics_csv(metrics.series, path))
        self._write(PVALUES_CSV, lambda path: write_pvalues_csv(metrics.tests, path))
        for metric in list(DIVERSITY_METRICS.values()) + [AUTOCORRELATION_METRIC]:
            selected = [s for s in metrics.series if s.metric == metric]
            if selected:
                xlabel = "lag" if metric == AUTOCORRELATION_METRIC else "generation"
                self._plot(metric, selected, xlabel=xlabel, ylabel=metric)
        self._report_metrics(metrics)
        return metrics

    def _report_metrics(self, metrics: RunMetrics) -> None:
        print_with_local_color("\nPI vs NPI, paired by seed image:", ANSIColor.BOLD)
        for test in metrics.tests:
            color = ANSIColor.GREEN if test.p_value < 0.05 else ANSIColor.YELLOW
            print_with_local_color(
                f"  {test.metric}: Δ={test.delta:.4f}, p={test.p_value:.3g} ({test.n_pairs} pairs)", color
            )
        if metrics.period is not None:
            period = metrics.period
            print(
                f"  phylogenetic diversity before generation {period.split}: Δ={period.early_delta:.3f}, "
                f"p={period.early_p:.3g}; from it: Δ={period.late_delta:.3f}, p={period.late_p:.3g}"
            )
        print_with_local_color(str(metrics.gini), ANSIColor.GREEN if metrics.gini.delta > 0 else ANSIColor.YELLOW)
        print(REFERENCE_LINE)
        for condition, stats in metrics.edit_sizes.items():
            print(f"  mean edit size {condition.value}: {stats.mean:.2f} ± {stats.se:.2f} pixels ({stats.n} edits)")
        for label, posterior in metrics.odds_ratios.items():
            print(f"  {label.value} PI vs NPI: {posterior}")

    def _report_crossing(self, runs: dict[Parameterization, FitnessRun]) -> None:
        generations = self._config.fitness.generations
        high, low = runs.get(Parameterization.HIGH_MU_C0), runs.get(Parameterization.LOW_MU_C1)
        if high is None or low is None or generations <= CROSSING_EARLY_GENERATION:
            return
        if crossing_holds(high, low, CROSSING_EARLY_GENERATION, generations):
            print_with_local_color(
                f"Crossing check passed: high mutation leads at generation {CROSSING_EARLY_GENERATION} "
                f"and trails cumulative advantage at generation {generations}",
                ANSIColor.GREEN,
            )
        else:
            print_with_local_color("Crossing check failed for this seed", ANSIColor.YELLOW)

    def _report_fit(self, fit: FitResult) -> None:
        status = "converged" if fit.converged else "stopped at max_iter"
        print_with_local_color(
            f"EM {status} after {fit.iterations} iterations, log-likelihood {fit.log_likelihood:.4f}", ANSIColor.CYAN
        )
        for condition, mixture in fit.weights.items():
            weights = ", ".join(
                f"{policy.value}={mixture.weight(policy):.3f}±{fit.weight_se[condition][i]:.3f}"
                for i, policy in enumerate(POLICY_ORDER)
            )
            print(f"  {condition.value}: {weights}")

    def _plot(self, name: str, series: list[MetricSeries], xlabel: str = "generation", ylabel: str = "") -> None:
        svg = emit_plot_svg(series, title=name, xlabel=xlabel, ylabel=ylabel)
        self._write(f"{SVG_DIR}/{name}.svg", lambda path: write_text(path, svg))

    def _write(self, relative: str, writer: Callable[[Path], None]) -> None:
        path = self._output_dir / relative
        writer(path)
        self._written.append(path)

    def _write_manifest(self, command: str, extra: dict[str, Any]) -> None:
        config = {key: value for key, value in self._config.to_dict().items() if key not in RUN_LOCAL_KEYS}
        manifest = {
            "command": command,
            "version": __version__,
            "config": config,
            **extra,
            "files": sorted(str(path.relative_to(self._output_dir)) for path in self._written),
        }
        write_yaml(manifest, self._output_dir / MANIFEST_YML)


def _derived_seed(config: ExperimentConfig, purpose: Purpose) -> int:
    return RngLedger(config.seed).derived_seed(purpose)

