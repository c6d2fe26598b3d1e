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

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import numpy.typing as npt

from .constants import GRID_SIZE, PIXEL_COUNT

PixelGrid = npt.NDArray[np.uint8]


class Condition(Enum):
    PI = "PI"
    NPI = "NPI"

    @property
    def shows_popularity(self) -> bool:
        return self is Condition.PI


@dataclass(frozen=True, eq=False)
class Image:
    """A 16x16 grid of black (1) or white (0) pixels, addressed as (row, col)."""

    id: int
    pixels: PixelGrid

    def __post_init__(self) -> None:
        if self.id < 0:
            raise InvalidArgumentError(f"image id must be non-negative, got {self.id}")
        pixels = np.asarray(self.pixels)
        if pixels.shape == (PIXEL_COUNT,):
            pixels = pixels.reshape(GRID_SIZE, GRID_SIZE)
        if pixels.shape != (GRID_SIZE, GRID_SIZE):
            raise InvalidArgumentError(f"image {self.id} must have {PIXEL_COUNT} pixels, got shape {pixels.shape}")
        if not np.isin(pixels, (0, 1)).all():
            raise InvalidArgumentError(f"image {self.id} has pixel values other than 0 and 1")
        frozen = pixels.astype(np.uint8, copy=True)
        frozen.flags.writeable = False
        object.__setattr__(self, "pixels", frozen)

    @classmethod
    def blank(cls, id: int) -> "Image":
        return cls(id, np.zeros((GRID_SIZE, GRID_SIZE), dtype=np.uint8))

    @classmethod
    def from_bits(cls, id: int, bits: str) -> "Image":
        if len(bits) != PIXEL_COUNT or set(bits) - {"0", "1"}:
            raise InvalidArgumentError(f"image {id} needs a {PIXEL_COUNT}-character string of 0/1")
        return cls(id, np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0"))

    def to_bits(self) -> str:
        return "".join("1" if p else "0" for p in self.pixels.ravel())

    def with_id(self, id: int) -> "Image":
        return Image(id, self.pixels)

    @property
    def set_pixel_count(self) -> int:
        return int(self.pixels.sum())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Image):
            return NotImplemented
        return self.id == other.id and bool(np.array_equal(self.pixels, other.pixels))

    def __hash__(self) -> int:
        return hash((self.id, self.pixels.tobytes()))


@dataclass
class ChainNode:
    image: Image
    generation: int
    parent: int | None = None
    selection_count: int = 0
    policy: str | None = None
    strategy: str | None = None

    @property
    def node_id(self) -> int:
        return self.image.id


@dataclass
class Chain:
    chain_id: int
    pair_id: int
    condition: Condition
    seed: int
    nodes: list[ChainNode] = field(default_factory=list)
    _by_id: dict[int, ChainNode] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for position, node in enumerate(self.nodes):
            if node.generation != position:
                raise InvariantViolationError(
                    f"chain {self.chain_id}: node at position {position} has generation {node.generation}"
                )
            self._index(node)

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._by_id

    @property
    def node_ids(self) -> list[int]:
        return [node.node_id for node in self.nodes]

    @property
    def last_generation(self) -> int:
        return len(self.nodes) - 1

    def node(self, node_id: int) -> ChainNode:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise InvalidArgumentError(f"node {node_id} is not in chain {self.chain_id}") from None

    def append(self, node: ChainNode) -> None:
        if node.generation != len(self.nodes):
            raise InvariantViolationError(
                f"chain {self.chain_id}: expected generation {len(self.nodes)}, got {node.generation}"
            )
        self._index(node)
        self.nodes.append(node)

    def selection_counts(self) -> list[int]:
        return [node.selection_count for node in self.nodes]

    def _index(self, node: ChainNode) -> None:
        if node.node_id in self._by_id:
            raise InvariantViolationError(f"chain {self.chain_id}: duplicate node id {node.node_id}")
        if node.generation == 0:
            if node.parent is not None:
                raise InvariantViolationError(f"chain {self.chain_id}: the seed node cannot have a parent")
        else:
            if node.parent is None or node.parent not in self._by_id:
                raise InvariantViolationError(
                    f"chain {self.chain_id}: node {node.node_id} names parent {node.parent} outside the chain"
                )
            if self._by_id[node.parent].generation >= node.generation:
                raise InvariantViolationError(
                    f"chain {self.chain_id}: parent of node {node.node_id} is not from an earlier generation"
                )
        self._by_id[node.node_id] = node


@dataclass(frozen=True)
class MarketEntry:
    node_id: int
    generation: int
    image: Image
    popularity: int | None


@dataclass(frozen=True)
class MarketView:
    """The images an agent at `generation` chooses from, newest first."""

    entries: tuple[MarketEntry, ...]
    generation: int
    window: int

    def __post_init__(self) -> None:
        if not 1 <= len(self.entries) <= self.window:
            raise InvariantViolationError(f"market must hold 1..{self.window} entries, got {len(self.entries)}")
        lowest = max(0, self.generation - self.window)
        for entry in self.entries:
            if not lowest <= entry.generation <= self.generation - 1:
                raise InvariantViolationError(
                    f"entry from generation {entry.generation} outside window [{lowest}, {self.generation - 1}]"
                )
        visible = [entry.popularity is not None for entry in self.entries]
        if any(visible) and not all(visible):
            raise InvariantViolationError("popularity must be shown for every entry or for none")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def node_ids(self) -> list[int]:
        return [entry.node_id for entry in self.entries]

    @property
    def shows_popularity(self) -> bool:
        return self.entries[0].popularity is not None

    def popularities(self) -> list[int]:
        return [entry.popularity for entry in self.entries if entry.popularity is not None]


class InvalidArgumentError(ValueError):
    pass


class ConstraintViolationError(ValueError):
    pass


class InvariantViolationError(RuntimeError):
    pass
