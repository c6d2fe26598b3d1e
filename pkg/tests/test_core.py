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

from popmarket.core import (
    hamming_count,
    lineage_share,
    market_window,
    new_chain,
    phylo_distance,
    phylo_distance_matrix,
    record_choice,
    to_newick,
)
from popmarket.model import (
    Chain,
    ChainNode,
    Condition,
    ConstraintViolationError,
    Image,
    InvalidArgumentError,
    InvariantViolationError,
    MarketEntry,
    MarketView,
)
from tests.chains import flip, grow, line_chain


@pytest.fixture
def small_tree() -> Chain:
    chain = new_chain(0, 0, Condition.PI, Image.blank(0), seed=0)
    grow(chain, 0, positions=(0,))
    grow(chain, 0, positions=(1,))
    grow(chain, 1, positions=(2,))
    return chain


def test_market_of_first_generation_holds_only_the_seed() -> None:
    chain = new_chain(0, 0, Condition.PI, Image.blank(0), seed=0)
    view = market_window(chain, 1, 12, show_popularity=True)
    assert view.node_ids == [0]
    assert view.popularities() == [0]


def test_market_window_is_newest_first_and_bounded() -> None:
    chain = line_chain(14)
    view = market_window(chain, 13, 12, show_popularity=True)
    assert view.node_ids == list(range(12, 0, -1))
    assert [entry.generation for entry in view.entries] == list(range(12, 0, -1))


def test_market_window_reports_current_selection_counts() -> None:
    chain = line_chain(5)
    grow(chain, 2, positions=(7,))
    view = market_window(chain, 6, 12, show_popularity=True)
    assert dict(zip(view.node_ids, view.popularities())) == {5: 0, 4: 0, 3: 1, 2: 2, 1: 1, 0: 1}


def test_hidden_popularity_is_absent_from_every_entry() -> None:
    chain = line_chain(4, condition=Condition.NPI)
    view = market_window(chain, 4, 12, show_popularity=False)
    assert not view.shows_popularity
    assert all(entry.popularity is None for entry in view.entries)
    assert view.popularities() == []


@pytest.mark.parametrize("g", [0, -1, 5])
def test_market_window_rejects_generations_without_a_market(g: int) -> None:
    with pytest.raises(InvalidArgumentError):
        market_window(line_chain(4), g, 12, show_popularity=True)


def test_market_view_rejects_partial_popularity() -> None:
    entries = (
        MarketEntry(1, 1, Image.blank(1), 3),
        MarketEntry(0, 0, Image.blank(0), None),
    )
    with pytest.raises(InvariantViolationError, match="every entry or for none"):
        MarketView(entries, generation=2, window=12)


def test_market_view_rejects_entries_outside_the_window() -> None:
    with pytest.raises(InvariantViolationError, match="outside window"):
        MarketView((MarketEntry(0, 0, Image.blank(0), None),), generation=13, window=12)


def test_record_choice_links_child_and_counts_selection() -> None:
    chain = line_chain(3)
    child = flip(chain.node(1).image, (10, 11, 12), new_id=3)
    record_choice(chain, 3, 1, child, policy="random", strategy="refinement")
    node = chain.node(3)
    assert node.parent == 1
    assert node.generation == 3
    assert node.policy == "random"
    assert node.strategy == "refinement"
    assert chain.node(1).selection_count == 2
    assert hamming_count(node.image, chain.node(1).image) == 3


def test_record_choice_rejects_parent_outside_the_market() -> None:
    chain = line_chain(14)
    child = flip(chain.node(0).image, (3,), new_id=14)
    with pytest.raises(InvalidArgumentError, match="not in the market"):
        record_choice(chain, 14, 0, child)
    assert len(chain) == 14
    assert chain.node(0).selection_count == 1


@pytest.mark.parametrize("flips", [0, 25])
def test_record_choice_enforces_edit_size(flips: int) -> None:
    chain = line_chain(2)
    child = flip(chain.node(1).image, range(flips), new_id=2)
    with pytest.raises(ConstraintViolationError):
        record_choice(chain, 2, 1, child)


@pytest.mark.parametrize("flips", [1, 24])
def test_record_choice_accepts_edit_size_bounds(flips: int) -> None:
    chain = line_chain(2)
    record_choice(chain, 2, 1, flip(chain.node(1).image, range(flips), new_id=2))
    assert len(chain) == 3


def test_record_choice_rejects_duplicate_ids_and_wrong_generation() -> None:
    chain = line_chain(3)
    with pytest.raises(InvalidArgumentError, match="already exists"):
        record_choice(chain, 3, 2, flip(chain.node(2).image, (40,), new_id=1))
    with pytest.raises(InvalidArgumentError, match="expects generation 3"):
        record_choice(chain, 4, 2, flip(chain.node(2).image, (40,), new_id=9))


def test_phylo_distance(small_tree: Chain) -> None:
    assert phylo_distance(small_tree, 1, 2) == 2
    assert phylo_distance(small_tree, 3, 2) == 3
    assert phylo_distance(small_tree, 3, 0) == 2
    assert phylo_distance(small_tree, 2, 2) == 0
    assert phylo_distance(small_tree, 3, 1) == phylo_distance(small_tree, 1, 3) == 1


def test_phylo_distance_matrix_matches_pairwise_walks() -> None:
    chain = line_chain(6)
    grow(chain, 2, positions=(50,))
    grow(chain, 6, positions=(51,))
    grow(chain, 4, positions=(52,))
    ids, distances = phylo_distance_matrix(chain)
    assert ids == chain.node_ids
    expected = np.array([[phylo_distance(chain, a, b) for b in ids] for a in ids])
    np.testing.assert_array_equal(distances, expected)


def test_to_newick(small_tree: Chain) -> None:
    assert to_newick(small_tree) == "((n3:1)n1:1,n2:1)n0;"


def test_lineage_share(small_tree: Chain) -> None:
    assert lineage_share(small_tree) == pytest.approx(2 / 3)
    assert lineage_share(line_chain(10)) == 1.0
    assert lineage_share(line_chain(1)) == 0.0


def test_image_validation() -> None:
    with pytest.raises(InvalidArgumentError):
        Image(-1, np.zeros((16, 16), dtype=np.uint8))
    with pytest.raises(InvalidArgumentError):
        Image(0, np.zeros((15, 16), dtype=np.uint8))
    with pytest.raises(InvalidArgumentError):
        Image(0, np.full((16, 16), 2, dtype=np.uint8))
    with pytest.raises(InvalidArgumentError):
        Image.from_bits(0, "01")


def test_image_pixels_are_read_only() -> None:
    image = Image.blank(0)
    with pytest.raises(ValueError):
        image.pixels[0, 0] = 1


def test_image_bits_round_trip() -> None:
    bits = "1" * 17 + "0" * 239
    image = Image.from_bits(4, bits)
    assert image.to_bits() == bits
    assert image.set_pixel_count == 17
    assert image.pixels[1, 0] == 1 and image.pixels[1, 1] == 0
    assert image.with_id(5) != image
    assert image.with_id(4) == image


def test_chain_rejects_broken_structure() -> None:
    with pytest.raises(InvariantViolationError):
        Chain(0, 0, Condition.PI, 0, [ChainNode(Image.blank(0), generation=1)])
    with pytest.raises(InvariantViolationError):
        Chain(
            0,
            0,
            Condition.PI,
            0,
            [ChainNode(Image.blank(0), generation=0), ChainNode(Image.blank(1), generation=1, parent=7)],
        )
    with pytest.raises(InvariantViolationError, match="duplicate"):
        Chain(
            0,
            0,
            Condition.PI,
            0,
            [ChainNode(Image.blank(0), generation=0), ChainNode(Image.blank(0), generation=1, parent=0)],
        )
