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

import hashlib
from dataclasses import dataclass
from enum import Enum

import numpy as np


class Purpose(Enum):
    SEED_IMAGE = "seed-image"
    CHAIN = "chain"
    FITNESS = "fitness"
    PERMUTATION = "permutation"
    BOOTSTRAP = "bootstrap"
    POSTERIOR = "posterior"
    FIT = "fit"

    @property
    def code(self) -> int:
        digest = hashlib.sha256(self.value.encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "big")


@dataclass(frozen=True)
class RngLedger:
    """
    Derives every random stream of a run from one master seed. A stream is keyed by
    (master seed, purpose, index) and backed by the counter-based Philox generator, so the
    draws a chain sees never depend on which worker ran it or in which order.
    """

    master_seed: int

    def __post_init__(self) -> None:
        if self.master_seed < 0 or self.master_seed >= 2**64:
            raise ValueError(f"master seed must fit in an unsigned 64-bit integer, got {self.master_seed}")

    def seed_sequence(self, purpose: Purpose, index: int = 0) -> np.random.SeedSequence:
        return np.random.SeedSequence(entropy=self.master_seed, spawn_key=(purpose.code, index))

    def derived_seed(self, purpose: Purpose, index: int = 0) -> int:
        return int(self.seed_sequence(purpose, index).generate_state(1, dtype=np.uint64)[0])

    def stream(self, purpose: Purpose, index: int = 0) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.seed_sequence(purpose, index)))


def generator_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
