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

from collections.abc import Callable
from pathlib import Path
from typing import Annotated, Any

import typer

from .app import PopMarketApplication
from .color import ANSIColor
from .config import ConfigError, ExperimentConfig, load_config
from .formats import DataFormatError
from .model import InvalidArgumentError, InvariantViolationError
from .utils import print_with_local_color

EXIT_CONFIG_ERROR = 2
EXIT_DATA_FORMAT_ERROR = 3
EXIT_INVARIANT_VIOLATION = 4

app = typer.Typer(no_args_is_help=True)

ConfigOption = Annotated[Path | None, typer.Option("--config", help="TOML experiment config; defaults when omitted.")]
SeedOption = Annotated[int | None, typer.Option("--seed", help="Master seed (unsigned 64-bit).")]
OutOption = Annotated[Path | None, typer.Option("--out", help="Output directory.")]
ThreadsOption = Annotated[int | None, typer.Option("--threads", help="Worker threads for chain simulation.")]
EmbeddingsOption = Annotated[
    Path | None, typer.Option("--embeddings", help="CSV of image_id,v0..v<D-1> replacing pixel embeddings.")
]


def _load(config: Path | None, seed: int | None, out: Path | None, threads: int | None) -> ExperimentConfig:
    overrides: dict[str, Any] = {}
    if seed is not None:
        overrides["seed"] = seed
    if out is not None:
        overrides["output_dir"] = str(out)
    if threads is not None:
        overrides["threads"] = threads
    return load_config(config, overrides)


def _exit_on_error(action: Callable[[], object]) -> None:
    try:
        action()
    except ConfigError as e:
        print_with_local_color(f"Config error: {e}", ANSIColor.RED)
        raise typer.Exit(EXIT_CONFIG_ERROR) from e
    except (DataFormatError, InvalidArgumentError) as e:
        print_with_local_color(f"Data error: {e}", ANSIColor.RED)
        raise typer.Exit(EXIT_DATA_FORMAT_ERROR) from e
    except InvariantViolationError as e:
        print_with_local_color(f"Internal invariant violated: {e}", ANSIColor.RED_UNDERLINED)
        raise typer.Exit(EXIT_INVARIANT_VIOLATION) from e


@app.command()
def run(
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    threads: ThreadsOption = None,
    embeddings: EmbeddingsOption = None,
) -> None:
    """Simulate paired PI/NPI chains and write chains, trees, metrics and plots."""
    _exit_on_error(lambda: PopMarketApplication(_load(config, seed, out, threads)).run(embeddings))


@app.command()
def fitness(
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    threads: ThreadsOption = None,
) -> None:
    """Run the bit-string selection/mutation model for each configured parameterization."""
    _exit_on_error(lambda: PopMarketApplication(_load(config, seed, out, threads)).fitness())


@app.command()
def analyze(
    chains: Annotated[Path, typer.Option("--chains", help="chains.csv written by a previous run.")],
    edits: Annotated[Path | None, typer.Option("--edits", help="edits.csv for strategy odds ratios.")] = None,
    window: Annotated[int | None, typer.Option("--window", help="Market window the chains were run with.")] = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    threads: ThreadsOption = None,
    embeddings: EmbeddingsOption = None,
) -> None:
    """Recompute every run metric from a stored chains CSV."""
    _exit_on_error(
        lambda: PopMarketApplication(_load(config, seed, out, threads)).analyze(chains, edits, embeddings, window)
    )


@app.command()
def fit(
    records: Annotated[Path, typer.Option("--records", help="Choice-record CSV.")],
    starts: Annotated[int | None, typer.Option("--starts", min=1, help="EM starting points.")] = None,
    bootstrap: Annotated[int | None, typer.Option("--bootstrap", min=0, help="Bootstrap resamples for SEs.")] = None,
    simulate: Annotated[bool, typer.Option(help="Also simulate chains under the fitted mixtures.")] = False,
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    threads: ThreadsOption = None,
) -> None:
    """Fit policy mixtures to choice records by EM."""
    _exit_on_error(
        lambda: PopMarketApplication(_load(config, seed, out, threads)).fit(records, starts, bootstrap, simulate)
    )


if __name__ == "__main__":
    app()
