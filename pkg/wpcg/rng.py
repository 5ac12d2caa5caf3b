#  Copyright (c) 2021 KTH Royal Institute of Technology
#
#  Licensed under the Apache License, Version 2.0 (the "License");
#  you may not use this file except in compliance with the License.
#  You may obtain a copy of the License at
#
#         http://www.apache.org/licenses/LICENSE-2.0
#
#  Unless required by applicable law or agreed to in writing, software
#  distributed under the License is distributed on an "AS IS" BASIS,
#  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#  See the License for the specific language governing permissions and
#  limitations under the License.
"""
Reproducible random streams.

Every run is driven by a single 64-bit master seed. Independent streams
(scheme index sampling, per-block particle noise, data generation, ...) are
derived from it with the splitmix64 finalizer, so that each stream can be
reseeded in isolation and alternate implementations can reproduce them
bit-exactly (see README).
"""
from __future__ import annotations

import enum
from typing import List, Tuple

import numpy as np

__all__ = ['Stream', 'splitmix64', 'derive_seed', 'make_generator',
           'RunStreams']

_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


class Stream(enum.IntEnum):
    """Top-level stream identifiers, first element of a derivation path."""
    SCHEME = 1
    DATA = 2
    INIT = 3
    REFERENCE = 4
    OBJECTIVE = 5
    FIRST_VARIATION = 6
    FOC = 7
    SWEEP = 8
    BLOCK = 16


def splitmix64(state: int) -> Tuple[int, int]:
    """
    Advances a splitmix64 generator by one step.

    Parameters
    ----------
    state
        Current 64-bit state.

    Returns
    -------
    new_state, output
        The advanced state and the 64-bit output word.
    """
    state = (state + _GOLDEN_GAMMA) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive_seed(master: int, *path: int) -> int:
    """
    Derives a 64-bit seed from a master seed and a path of non-negative
    integers. The master seed is passed through splitmix64 once; each path
    element is then xor-ed into the previous output word, which is fed back
    through splitmix64.
    """
    _, out = splitmix64(int(master) & _MASK64)
    for element in path:
        _, out = splitmix64(out ^ (int(element) & _MASK64))
    return out


def make_generator(master: int, *path: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, *path)))


class RunStreams:
    """
    The set of generators used by one WPCG run.

    Block noise streams are long-lived (one per block for the whole run), so
    that block solves of a parallel iteration never share state. Diagnostics
    streams are re-derived per iteration, which keeps records identical
    regardless of how often diagnostics are evaluated.
    """

    def __init__(self, seed: int, m: int):
        self._seed = int(seed) & _MASK64
        self.scheme = make_generator(self._seed, Stream.SCHEME)
        self._blocks: List[np.random.Generator] = [
            make_generator(self._seed, Stream.BLOCK, j) for j in range(m)
        ]

    @property
    def seed(self) -> int:
        return self._seed

    def block(self, j: int) -> np.random.Generator:
        return self._blocks[j]

    def objective(self, k: int) -> np.random.Generator:
        return make_generator(self._seed, Stream.OBJECTIVE, k)

    def first_variation(self, k: int, j: int) -> np.random.Generator:
        return make_generator(self._seed, Stream.FIRST_VARIATION, k, j)

    def foc(self, k: int, j: int) -> np.random.Generator:
        return make_generator(self._seed, Stream.FOC, k, j)
