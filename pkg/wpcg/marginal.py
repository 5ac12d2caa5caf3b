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
Estimators of the blockwise marginal potential int V(., x_{-j}) drho_{-j}
and of the self-interaction drift, shared by the solvers and diagnostics.

Companion particles for block j come from the other blocks, each put into a
canonical (lexicographic) order and then randomly permuted. Draw r pairs
particle b of block j with row (b + r) mod B of every permuted companion
block, so B draws visit every companion row exactly once per particle.
"""
from __future__ import annotations

from typing import Callable, NamedTuple, Optional, Tuple

import numpy as np

from .model import BlockState, InteractionSpec, ProblemSpec

__all__ = ['Companions', 'draw_companions', 'marginal_gradient',
           'marginal_potential', 'interaction_drift', 'interaction_energy',
           'interaction_first_variation']

#: rows evaluated per potential call
_MAX_ROWS = 1 << 15


class Companions(NamedTuple):
    #: permuted companion rows per block, None at the solved block
    blocks: Tuple[Optional[np.ndarray], ...]
    n_draws: int


def draw_companions(problem: ProblemSpec,
                    state: BlockState,
                    j: int,
                    n_grad: Optional[int],
                    rng: np.random.Generator) -> Companions:
    count = state.count
    n_draws = count if n_grad is None else max(1, min(int(n_grad), count))
    blocks = []
    for i, ensemble in enumerate(state.blocks):
        if i == j:
            blocks.append(None)
            continue
        canonical = ensemble.points[ensemble.canonical_order()]
        blocks.append(canonical[rng.permutation(count)])
    if problem.m == 1:
        n_draws = 1
    return Companions(tuple(blocks), n_draws)


def _average_over_draws(problem: ProblemSpec,
                        j: int,
                        y: np.ndarray,
                        companions: Companions,
                        n_draws: int,
                        fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    count = y.shape[0]
    per_chunk = max(1, _MAX_ROWS // count)
    total = None
    for start in range(0, n_draws, per_chunk):
        shifts = range(start, min(n_draws, start + per_chunk))
        parts = []
        for i, block in enumerate(companions.blocks):
            if i == j:
                parts.append(np.tile(y, (len(shifts), 1)))
            else:
                parts.append(np.concatenate(
                    [np.roll(block, -r, axis=0) for r in shifts]))
        values = np.asarray(fn(np.concatenate(parts, axis=1)))
        values = values.reshape((len(shifts), count) + values.shape[1:])
        chunk_sum = values.sum(axis=0)
        total = chunk_sum if total is None else total + chunk_sum
    return total / n_draws


def marginal_gradient(problem: ProblemSpec,
                      j: int,
                      y: np.ndarray,
                      companions: Companions) -> np.ndarray:
    """
    Estimates int grad_j V(y_b, x_{-j}) drho_{-j} for every row y_b.
    Separable potentials need a single draw.
    """
    n_draws = 1 if problem.potential.separable else companions.n_draws
    return _average_over_draws(
        problem, j, y, companions, n_draws,
        lambda joint: problem.potential.block_gradient(j, joint))


def marginal_potential(problem: ProblemSpec,
                       j: int,
                       y: np.ndarray,
                       companions: Companions) -> np.ndarray:
    """Estimates int V(y_b, x_{-j}) drho_{-j} for every row y_b."""
    return _average_over_draws(problem, j, y, companions,
                               companions.n_draws, problem.potential.value)


def interaction_drift(interaction: InteractionSpec,
                      y: np.ndarray) -> np.ndarray:
    """(1/B) sum_b' [grad1 W(y_b, y_b') + grad2 W(y_b', y_b)] per row."""
    if not interaction.present:
        return np.zeros_like(y)
    first = interaction.grad1(y[:, None, :], y[None, :, :])
    second = interaction.grad2(y[None, :, :], y[:, None, :])
    return (first + second).mean(axis=1)


def interaction_energy(interaction: InteractionSpec, y: np.ndarray) -> float:
    if not interaction.present:
        return 0.0
    return float(np.mean(interaction.kernel(y[:, None, :], y[None, :, :])))


def interaction_first_variation(interaction: InteractionSpec,
                                y: np.ndarray) -> np.ndarray:
    """(1/B) sum_b' [W(y_b, y_b') + W(y_b', y_b)] per row."""
    if not interaction.present:
        return np.zeros(y.shape[0])
    pair = interaction.kernel(y[:, None, :], y[None, :, :])
    return pair.mean(axis=1) + pair.mean(axis=0)
