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

from collections import Counter

import numpy as np
import numpy.typing as npt

from .constants import DEFAULT_WINDOW, MAX_EDIT_PIXELS, MIN_EDIT_PIXELS
from .model import (
    Chain,
    ChainNode,
    Condition,
    ConstraintViolationError,
    Image,
    InvalidArgumentError,
    MarketEntry,
    MarketView,
)


def hamming_count(a: Image, b: Image) -> int:
    return int(np.count_nonzero(a.pixels != b.pixels))


def new_chain(chain_id: int, pair_id: int, condition: Condition, seed_image: Image, seed: int) -> Chain:
    return Chain(chain_id, pair_id, condition, seed, [ChainNode(seed_image, generation=0)])


def market_window(chain: Chain, g: int, window: int, show_popularity: bool) -> MarketView:
    """
    Returns the market seen by the agent acting at generation `g`: the nodes created in
    generations [max(0, g - window), g - 1], newest first. Popularity is the selection count
    at the moment of the call.
    """
    if g <= 0:
        raise InvalidArgumentError(f"no market exists before generation 1, got g={g}")
    if g > len(chain):
        raise InvalidArgumentError(f"chain {chain.chain_id} has {len(chain)} nodes, cannot build market for g={g}")
    if window < 1:
        raise InvalidArgumentError(f"window must be positive, got {window}")
    visible = chain.nodes[max(0, g - window) : g]
    entries = tuple(
        MarketEntry(
            node_id=node.node_id,
            generation=node.generation,
            image=node.image,
            popularity=node.selection_count if show_popularity else None,
        )
        for node in reversed(visible)
    )
    return MarketView(entries, generation=g, window=window)


def record_choice(
    chain: Chain,
    g: int,
    chosen_node_id: int,
    new_image: Image,
    *,
    window: int = DEFAULT_WINDOW,
    policy: str | None = None,
    strategy: str | None = None,
) -> Chain:
    """Commits generation `g`: `new_image` becomes a child of `chosen_node_id`."""
    if g != len(chain):
        raise InvalidArgumentError(f"chain {chain.chain_id} expects generation {len(chain)} next, got {g}")
    view = market_window(chain, g, window, show_popularity=False)
    if chosen_node_id not in view.node_ids:
        raise InvalidArgumentError(f"node {chosen_node_id} is not in the market of generation {g}")
    if new_image.id in chain:
        raise InvalidArgumentError(f"image id {new_image.id} already exists in chain {chain.chain_id}")
    parent = chain.node(chosen_node_id)
    changed = hamming_count(new_image, parent.image)
    if not MIN_EDIT_PIXELS <= changed <= MAX_EDIT_PIXELS:
        raise ConstraintViolationError(
            f"an edit must change {MIN_EDIT_PIXELS} to {MAX_EDIT_PIXELS} pixels, this one changes {changed}"
        )
    chain.append(ChainNode(new_image, generation=g, parent=chosen_node_id, policy=policy, strategy=strategy))
    parent.selection_count += 1
    return chain


def phylo_distance(chain: Chain, id_a: int, id_b: int) -> int:
    """Number of edges on the tree path between two nodes, found by walking to their lowest common ancestor."""
    node_a = chain.node(id_a)
    chain.node(id_b)
    if id_a == id_b:
        return 0
    depth_from_a = {id_a: 0}
    steps, current = 0, node_a
    while current.parent is not None:
        steps += 1
        depth_from_a[current.parent] = steps
        current = chain.node(current.parent)
    steps, cursor = 0, id_b
    while cursor not in depth_from_a:
        parent = chain.node(cursor).parent
        if parent is None:
            raise InvalidArgumentError(f"nodes {id_a} and {id_b} do not share a root")
        steps += 1
        cursor = parent
    return steps + depth_from_a[cursor]


def phylo_distance_matrix(chain: Chain) -> tuple[list[int], npt.NDArray[np.int64]]:
    """All-pairs tree distances, rows and columns in generation order."""
    ids = chain.node_ids
    position = {node_id: i for i, node_id in enumerate(ids)}
    size = len(ids)
    ancestors = np.zeros((size, size), dtype=np.int64)
    for i, node in enumerate(chain.nodes):
        if node.parent is not None:
            ancestors[i] = ancestors[position[node.parent]]
        ancestors[i, i] = 1
    depth = ancestors.sum(axis=1) - 1
    shared = ancestors @ ancestors.T
    distances = depth[:, None] + depth[None, :] - 2 * (shared - 1)
    return ids, distances


def to_newick(chain: Chain) -> str:
    children: dict[int, list[int]] = {node_id: [] for node_id in chain.node_ids}
    for node in chain.nodes:
        if node.parent is not None:
            children[node.parent].append(node.node_id)
    rendered: dict[int, str] = {}
    for node in reversed(chain.nodes):
        kids = children[node.node_id]
        subtree = "(" + ",".join(f"{rendered.pop(kid)}:1" for kid in kids) + ")" if kids else ""
        rendered[node.node_id] = f"{subtree}n{node.node_id}"
    return rendered[chain.nodes[0].node_id] + ";"


def lineage_share(chain: Chain) -> float:
    """Fraction of non-seed nodes descending from the most prolific child of the seed."""
    if len(chain) < 2:
        return 0.0
    root = chain.nodes[0].node_id
    founder: dict[int, int] = {}
    for node in chain.nodes[1:]:
        assert node.parent is not None
        founder[node.node_id] = node.node_id if node.parent == root else founder[node.parent]
    return max(Counter(founder.values()).values()) / (len(chain) - 1)
