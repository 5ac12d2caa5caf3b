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
from __future__ import annotations

from typing import Optional

import numpy as np

from .kde import KdeConfig, kde_evaluate
from .marginal import interaction_energy
from .model import BlockState, EnsembleError, ProblemSpec

__all__ = ['evaluate_objective', 'potential_energy', 'internal_energy']


def potential_energy(problem: ProblemSpec,
                     state: BlockState,
                     rng: np.random.Generator,
                     n_mc: int = 1) -> float:
    """
    Monte-Carlo estimate of int V d(rho_1 x ... x rho_m): V averaged over
    `n_mc` random index matchings of the blocks. Blocks are put into
    canonical order first, so the estimate does not depend on the order in
    which particles are stored.
    """
    canonical = [b.points[b.canonical_order()] for b in state.blocks]
    total = 0.0
    for _ in range(max(1, n_mc)):
        parts = [canonical[0]] + [pts[rng.permutation(state.count)]
                                  for pts in canonical[1:]]
        total += float(np.mean(problem.potential.value(
            np.concatenate(parts, axis=1))))
    return total / max(1, n_mc)


def internal_energy(problem: ProblemSpec,
                    state: BlockState,
                    j: int,
                    kde: KdeConfig) -> float:
    """KDE plug-in estimate (1/B) sum_b h(rho(X_b)) / rho(X_b)."""
    entropy = problem.entropies[j]
    if not entropy.active:
        return 0.0
    points = state.blocks[j].points
    return float(np.mean(entropy.h_over_rho(kde_evaluate(points, kde,
                                                         points))))


def evaluate_objective(problem: ProblemSpec,
                       state: BlockState,
                       kde: KdeConfig,
                       rng: Optional[np.random.Generator] = None,
                       n_mc: int = 1) -> float:
    """
    Estimates F(rho_1, ..., rho_m) from the particle ensembles.

    Parameters
    ----------
    problem
        The functional.
    state
        Block ensembles consistent with `problem`.
    kde
        Bandwidth rule for the internal-energy plug-in estimates.
    rng
        Stream for the potential-term matchings (seed 0 when omitted).
    n_mc
        Number of random matchings.

    Returns
    -------
    objective
        Potential term + sum_j internal energy + sum_j interaction energy.
    """
    if state.dims != problem.dims:
        raise EnsembleError(f'State dimensions {state.dims} do not match '
                            f'problem dimensions {problem.dims}.')
    rng = np.random.default_rng(0) if rng is None else rng
    value = potential_energy(problem, state, rng, n_mc)
    for j in range(problem.m):
        value += internal_energy(problem, state, j, kde)
        value += interaction_energy(problem.interactions[j],
                                    state.blocks[j].points)
    return value
