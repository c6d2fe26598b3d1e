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

import csv
import io
import math
from collections import Counter
from collections.abc import Iterable, Iterator, Mapping, Sequence
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
import yaml

from .analysis import PairedTest
from .constants import CRITERIA, DEFAULT_WINDOW, GRID_SIZE, PIXEL_COUNT
from .core import to_newick
from .creation import EditRecord, EditStrategyLabel
from .fitness_model import FitnessRun
from .inference import ChoiceRecord, FitResult
from .metrics import EmbeddingTable, MetricPoint, MetricSeries
from .model import Chain, ChainNode, Condition, Image, InvalidArgumentError, InvariantViolationError
from .policies import POLICY_ORDER, Policy
from .utils import format_float

CHAIN_COLUMNS = (
    "chain_id",
    "pair_id",
    "condition",
    "generation",
    "node_id",
    "parent_id",
    "selection_count",
    "pixels",
)
EDIT_COLUMNS = (
    "chain_id",
    "condition",
    "generation",
    "parent_id",
    "child_id",
    "policy",
    "strategy",
    "changed_pixels",
)
METRIC_COLUMNS = ("condition", "metric", "index", "value", "se", "n")
PVALUE_COLUMNS = ("metric", "delta", "p_value", "n_pairs")
FITNESS_COLUMNS = ("parameterization", "generation", "mean_fitness", "se_fitness", "mean_delta", "se_delta")
FIT_WEIGHT_COLUMNS = ("condition", "policy", "weight", "se")
RATING_PREFIXES = ("r_appeal", "r_edit", "r_orig", "r_recog")
PBM_MAGIC = "P1"


def render_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


class _Row:
    """One parsed CSV line; every accessor reports the file and line it failed on."""

    def __init__(self, path: Path, line: int, values: Mapping[str, str]) -> None:
        self.path = path
        self.line = line
        self.values = values

    def error(self, message: str) -> "DataFormatError":
        return DataFormatError(f"{self.path}:{self.line}: {message}")

    def text(self, key: str) -> str:
        return self.values[key]

    def integer(self, key: str) -> int:
        try:
            return int(self.values[key])
        except ValueError:
            raise self.error(f"{key} must be an integer, got {self.values[key]!r}") from None

    def optional_int(self, key: str) -> int | None:
        return None if self.values[key] == "" else self.integer(key)

    def number(self, key: str) -> float:
        try:
            return float(self.values[key])
        except ValueError:
            raise self.error(f"{key} must be a number, got {self.values[key]!r}") from None

    def optional_float(self, key: str) -> float | None:
        return None if self.values[key] == "" else self.number(key)

    def condition(self, key: str = "condition") -> Condition:
        try:
            return Condition(self.values[key])
        except ValueError:
            raise self.error(f"{key} must be PI or NPI, got {self.values[key]!r}") from None


def _read_rows(path: Path, expected: Sequence[str] | None = None) -> Iterator[_Row]:
    if not path.is_file():
        raise DataFormatError(f"{path}: file does not exist")
    reader = csv.reader(io.StringIO(path.read_text(encoding="utf-8")))
    header = next(reader, None)
    if not header:
        raise DataFormatError(f"{path}:1: missing header row")
    if expected is not None and tuple(header) != tuple(expected):
        raise DataFormatError(f"{path}:1: expected columns {','.join(expected)}")
    for values in reader:
        if not values:
            continue
        if len(values) != len(header):
            raise DataFormatError(f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(values)}")
        yield _Row(path, reader.line_num, dict(zip(header, values)))


def write_chains_csv(chains: Iterable[Chain], path: Path) -> None:
    rows = (
        (
            chain.chain_id,
            chain.pair_id,
            chain.condition.value,
            node.generation,
            node.node_id,
            "" if node.parent is None else node.parent,
            node.selection_count,
            node.image.to_bits(),
        )
        for chain in chains
        for node in chain.nodes
    )
    write_text(path, render_csv(CHAIN_COLUMNS, rows))


def read_chains_csv(path: Path) -> list[Chain]:
    """
    Rebuilds chains from their node rows. Selection counts are checked against the number of
    children each node has in the file.
    """
    grouped: dict[int, list[tuple[_Row, ChainNode]]] = {}
    for row in _read_rows(path, CHAIN_COLUMNS):
        node_id = row.integer("node_id")
        try:
            image = Image.from_bits(node_id, row.text("pixels"))
        except InvalidArgumentError as e:
            raise row.error(str(e)) from None
        node = ChainNode(
            image,
            generation=row.integer("generation"),
            parent=row.optional_int("parent_id"),
            selection_count=row.integer("selection_count"),
        )
        grouped.setdefault(row.integer("chain_id"), []).append((row, node))
    if not grouped:
        raise DataFormatError(f"{path}: no chain rows")

    chains: list[Chain] = []
    for chain_id, entries in grouped.items():
        first = entries[0][0]
        pair_id, condition = first.integer("pair_id"), first.condition()
        for row, _ in entries:
            if row.integer("pair_id") != pair_id or row.condition() is not condition:
                raise row.error(f"chain {chain_id} changes pair or condition")
        ordered = sorted(entries, key=lambda entry: entry[1].generation)
        try:
            chain = Chain(chain_id, pair_id, condition, 0, [node for _, node in ordered])
        except InvariantViolationError as e:
            raise first.error(str(e)) from None
        children = Counter(node.parent for node in chain.nodes if node.parent is not None)
        for row, node in ordered:
            if node.selection_count != children[node.node_id]:
                raise row.error(
                    f"node {node.node_id} has selection_count {node.selection_count} "
                    f"but {children[node.node_id]} children"
                )
        chains.append(chain)
    return chains


def write_edits_csv(edits: Iterable[EditRecord], path: Path) -> None:
    rows = (
        (
            edit.chain_id,
            edit.condition.value,
            edit.generation,
            edit.parent_id,
            edit.child_id,
            edit.policy,
            edit.strategy.value,
            edit.changed_pixels,
        )
        for edit in edits
    )
    write_text(path, render_csv(EDIT_COLUMNS, rows))


def read_edits_csv(path: Path) -> list[EditRecord]:
    edits: list[EditRecord] = []
    for row in _read_rows(path, EDIT_COLUMNS):
        try:
            policy = Policy(row.text("policy"))
            strategy = EditStrategyLabel(row.text("strategy"))
        except ValueError as e:
            raise row.error(str(e)) from None
        edits.append(
            EditRecord(
                chain_id=row.integer("chain_id"),
                condition=row.condition(),
                generation=row.integer("generation"),
                parent_id=row.integer("parent_id"),
                child_id=row.integer("child_id"),
                policy=policy.value,
                strategy=strategy,
                changed_pixels=row.integer("changed_pixels"),
            )
        )
    return edits


def choice_columns(slots: int = DEFAULT_WINDOW) -> tuple[str, ...]:
    prefixes = ("popularity",) + RATING_PREFIXES
    return ("record_id", "condition", "chosen_index") + tuple(
        f"{prefix}_{slot}" for prefix in prefixes for slot in range(slots)
    )


def write_choices_csv(records: Sequence[ChoiceRecord], path: Path) -> None:
    """Markets smaller than the widest one leave their trailing slots blank."""
    slots = max([DEFAULT_WINDOW] + [record.market_size for record in records])
    rows: list[list[Any]] = []
    for record in records:
        blanks = [""] * (slots - record.market_size)
        row: list[Any] = [record.record_id, record.condition.value, record.chosen_index]
        row += [int(p) for p in record.popularity] + blanks
        for c in range(len(CRITERIA)):
            row += [format_float(r) for r in record.ratings[:, c]] + blanks
        rows.append(row)
    write_text(path, render_csv(choice_columns(slots), rows))


def read_choices_csv(path: Path) -> list[ChoiceRecord]:
    records: list[ChoiceRecord] = []
    slots: int | None = None
    for row in _read_rows(path):
        if slots is None:
            slots = sum(1 for key in row.values if key.startswith("popularity_"))
            if tuple(row.values) != choice_columns(slots):
                raise DataFormatError(f"{path}:1: expected columns {','.join(choice_columns(slots))}")
        popularity = [row.optional_int(f"popularity_{slot}") for slot in range(slots)]
        size = sum(1 for p in popularity if p is not None)
        if size == 0 or None in popularity[:size]:
            raise row.error("market slots must be filled from slot 0 without gaps")
        ratings = [[row.optional_float(f"{prefix}_{slot}") for prefix in RATING_PREFIXES] for slot in range(slots)]
        if any(None in ratings[slot] for slot in range(size)) or any(
            value is not None for slot in range(size, slots) for value in ratings[slot]
        ):
            raise row.error("ratings must be given exactly for the filled market slots")
        try:
            records.append(
                ChoiceRecord(
                    record_id=row.integer("record_id"),
                    condition=row.condition(),
                    chosen_index=row.integer("chosen_index"),
                    popularity=np.array(popularity[:size], dtype=np.int64),
                    ratings=np.array(ratings[:size], dtype=np.float64),
                )
            )
        except InvalidArgumentError as e:
            raise row.error(str(e)) from None
    if not records:
        raise DataFormatError(f"{path}: no choice records")
    return records


def read_embeddings_csv(path: Path) -> EmbeddingTable:
    vectors: dict[int, npt.NDArray[np.float64]] = {}
    for row in _read_rows(path):
        columns = list(row.values)
        if len(columns) < 2 or columns != ["image_id"] + [f"v{d}" for d in range(len(columns) - 1)]:
            raise DataFormatError(f"{path}:1: expected columns image_id,v0,...,v<D-1>")
        image_id = row.integer("image_id")
        if image_id in vectors:
            raise row.error(f"duplicate embedding for image {image_id}")
        vectors[image_id] = np.array([row.number(column) for column in columns[1:]], dtype=np.float64)
    try:
        return EmbeddingTable(vectors, source=str(path))
    except InvalidArgumentError as e:
        raise DataFormatError(f"{path}: {e}") from None


def write_metrics_csv(series: Iterable[MetricSeries], path: Path) -> None:
    rows = (
        (s.condition, s.metric, point.index, format_float(point.value), format_float(point.se), point.n)
        for s in series
        for point in s.points
    )
    write_text(path, render_csv(METRIC_COLUMNS, rows))


def read_metrics_csv(path: Path) -> list[MetricSeries]:
    points: dict[tuple[str, str], list[MetricPoint]] = {}
    for row in _read_rows(path, METRIC_COLUMNS):
        try:
            point = MetricPoint(row.integer("index"), row.number("value"), row.number("se"), row.integer("n"))
        except InvalidArgumentError as e:
            raise row.error(str(e)) from None
        points.setdefault((row.text("condition"), row.text("metric")), []).append(point)
    return [MetricSeries(condition, metric, tuple(values)) for (condition, metric), values in points.items()]


def write_pvalues_csv(tests: Iterable[PairedTest], path: Path) -> None:
    rows = ((t.metric, format_float(t.delta), format_float(t.p_value), t.n_pairs) for t in tests)
    write_text(path, render_csv(PVALUE_COLUMNS, rows))


def read_pvalues_csv(path: Path) -> list[PairedTest]:
    return [
        PairedTest(row.text("metric"), row.number("delta"), row.number("p_value"), row.integer("n_pairs"))
        for row in _read_rows(path, PVALUE_COLUMNS)
    ]


def write_fitness_csv(runs: Iterable[FitnessRun], path: Path) -> None:
    rows: list[tuple[Any, ...]] = []
    for run in runs:
        for point in run.fitness.points:
            delta = [p for p in run.delta.points if p.index == point.index]
            rows.append(
                (
                    run.label,
                    point.index,
                    format_float(point.value),
                    format_float(point.se),
                    format_float(delta[0].value) if delta else "",
                    format_float(delta[0].se) if delta else "",
                )
            )
    write_text(path, render_csv(FITNESS_COLUMNS, rows))


def read_fitness_csv(path: Path) -> list[FitnessRun]:
    fitness: dict[str, list[MetricPoint]] = {}
    deltas: dict[str, list[MetricPoint]] = {}
    for row in _read_rows(path, FITNESS_COLUMNS):
        label, generation = row.text("parameterization"), row.integer("generation")
        fitness.setdefault(label, []).append(
            MetricPoint(generation, row.number("mean_fitness"), row.number("se_fitness"), 1)
        )
        mean_delta = row.optional_float("mean_delta")
        if mean_delta is not None:
            deltas.setdefault(label, []).append(MetricPoint(generation, mean_delta, row.number("se_delta"), 1))
    return [
        FitnessRun(
            label,
            MetricSeries(label, "mean_fitness", tuple(points)),
            MetricSeries(label, "mean_delta", tuple(deltas.get(label, []))),
        )
        for label, points in fitness.items()
    ]


def write_fit_weights_csv(fit: FitResult, path: Path) -> None:
    rows = (
        (
            condition.value,
            policy.value,
            format_float(mixture.weight(policy)),
            format_float(fit.weight_se[condition][i]),
        )
        for condition, mixture in fit.weights.items()
        for i, policy in enumerate(POLICY_ORDER)
    )
    write_text(path, render_csv(FIT_WEIGHT_COLUMNS, rows))


def read_fit_weights_csv(path: Path) -> dict[Condition, dict[Policy, tuple[float, float]]]:
    weights: dict[Condition, dict[Policy, tuple[float, float]]] = {}
    for row in _read_rows(path, FIT_WEIGHT_COLUMNS):
        try:
            policy = Policy(row.text("policy"))
        except ValueError as e:
            raise row.error(str(e)) from None
        weights.setdefault(row.condition(), {})[policy] = (row.number("weight"), row.number("se"))
    return weights


def fit_summary(fit: FitResult) -> dict[str, Any]:
    return {
        "log_likelihood": fit.log_likelihood,
        "iterations": fit.iterations,
        "final_delta": fit.final_delta,
        "converged": fit.converged,
        "weights": {
            condition.value: {policy.value: mixture.weight(policy) for policy in POLICY_ORDER}
            for condition, mixture in fit.weights.items()
        },
        "weight_se": {
            condition.value: dict(zip((policy.value for policy in POLICY_ORDER), se))
            for condition, se in fit.weight_se.items()
        },
        "beta": {condition.value: dict(zip(CRITERIA, beta)) for condition, beta in fit.betas.items()},
    }


def write_yaml(data: Mapping[str, Any], path: Path) -> None:
    write_text(path, yaml.safe_dump(dict(data), sort_keys=False, width=math.inf))


def write_image_pbm(image: Image) -> str:
    """Plain PBM: magic, dimensions, then one line of digits per pixel row (1 = black)."""
    rows = ("".join(str(int(p)) for p in row) for row in image.pixels)
    return "\n".join([PBM_MAGIC, f"{GRID_SIZE} {GRID_SIZE}", *rows]) + "\n"


def read_image_pbm(text: str, image_id: int = 0) -> Image:
    tokens = " ".join(line.split("#", 1)[0] for line in text.splitlines()).split()
    if len(tokens) < 3 or tokens[0] != PBM_MAGIC:
        raise DataFormatError(f"not a plain PBM image (expected {PBM_MAGIC} header)")
    if tokens[1:3] != [str(GRID_SIZE), str(GRID_SIZE)]:
        raise DataFormatError(f"image must be {GRID_SIZE}x{GRID_SIZE}, got {tokens[1]}x{tokens[2]}")
    digits = "".join(tokens[3:])
    if len(digits) != PIXEL_COUNT or set(digits) - {"0", "1"}:
        raise DataFormatError(f"expected {PIXEL_COUNT} binary digits, got {len(digits)} characters")
    return Image.from_bits(image_id, digits)


def write_newick_files(chains: Iterable[Chain], directory: Path) -> list[Path]:
    paths: list[Path] = []
    for chain in chains:
        path = directory / f"chain-{chain.chain_id}.nwk"
        write_text(path, to_newick(chain) + "\n")
        paths.append(path)
    return paths


class DataFormatError(Exception):
    pass
