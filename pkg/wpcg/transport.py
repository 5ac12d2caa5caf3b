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
Exact Wasserstein-2 distances between equal-size, equal-weight empirical
measures.
"""
from __future__ import annotations

from typing import NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from twisted.logger import Logger

from .model import ParticleEnsemble, WPCGError

__all__ = ['TransportError', 'AssignmentCapExceeded', 'Coupling',
           'W2Estimate', 'DEFAULT_ASSIGNMENT_CAP', 'w2_1d', 'w2_assignment',
           'w2_distance', 'w2sq_to_point', 'product_w2_squared']

log = Logger()

#: largest B solved exactly by the assignment solver
DEFAULT_ASSIGNMENT_CAP = 4096

#: sub-seed of the subsampling fallback above the cap
_SUBSAMPLE_SEED = 0x5EED

Points = Union[ParticleEnsemble, np.ndarray]


class TransportError(WPCGError):
    pass


class AssignmentCapExceeded(TransportError):
    pass


class Coupling(NamedTuple):
    #: row i of the first ensemble is matched to row assignment[i] of the
    #: second
    assignment: np.ndarray

    def is_bijective(self) -> bool:
        n = len(self.assignment)
        return np.array_equal(np.sort(self.assignment), np.arange(n))


class W2Estimate(NamedTuple):
    value: float
    coupling: Optional[Coupling]
    #: computed on subsamples, no coupling available
    approximate: bool = False


def _as_matrix(points: Points) -> np.ndarray:
    if isinstance(points, ParticleEnsemble):
        return points.points
    pts = np.asarray(points, dtype=float)
    return pts.reshape(-1, 1) if pts.ndim == 1 else pts


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[0] != b.shape[0]:
        raise TransportError(f'Ensembles must have equal particle counts, '
                             f'got {a.shape[0]} and {b.shape[0]}.')
    if a.shape[1] != b.shape[1]:
        raise TransportError(f'Ensembles must have equal dimension, got '
                             f'{a.shape[1]} and {b.shape[1]}.')


def _sorted_coupling(a: np.ndarray, b: np.ndarray) -> Coupling:
    assignment = np.empty(a.shape[0], dtype=np.intp)
    assignment[np.argsort(a[:, 0], kind='stable')] = \
        np.argsort(b[:, 0], kind='stable')
    return Coupling(assignment)


def w2_1d(a: Points, b: Points) -> float:
    """
    W2 between two scalar ensembles of equal size via monotone
    rearrangement: sqrt(mean((sort(a) - sort(b))^2)).
    """
    a, b = _as_matrix(a), _as_matrix(b)
    _check_pair(a, b)
    if a.shape[1] != 1:
        raise TransportError(f'w2_1d needs scalar particles, got d = '
                             f'{a.shape[1]}.')
    diff = np.sort(a[:, 0]) - np.sort(b[:, 0])
    return float(np.sqrt(np.mean(diff * diff)))


def w2_assignment(a: Points,
                  b: Points,
                  cap: int = DEFAULT_ASSIGNMENT_CAP) -> Tuple[float, Coupling]:
    """
    Solves the square assignment problem on squared Euclidean costs.

    Parameters
    ----------
    a, b
        Ensembles with equal counts and dimensions.
    cap
        Largest particle count accepted.

    Returns
    -------
    w2, coupling
        sqrt(min cost / B) and the optimal permutation.
    """
    a, b = _as_matrix(a), _as_matrix(b)
    _check_pair(a, b)
    n = a.shape[0]
    if n > cap:
        raise AssignmentCapExceeded(f'{n} particles exceed the assignment '
                                    f'cap of {cap}.')
    cost = cdist(a, b, 'sqeuclidean')
    rows, cols = linear_sum_assignment(cost)
    assignment = np.empty(n, dtype=np.intp)
    assignment[rows] = cols
    total = float(cost[rows, cols].sum())
    return float(np.sqrt(max(total, 0.0) / n)), Coupling(assignment)


def w2_distance(a: Points,
                b: Points,
                cap: int = DEFAULT_ASSIGNMENT_CAP,
                sub_seed: int = _SUBSAMPLE_SEED) -> W2Estimate:
    """
    W2 by the cheapest exact method; falls back to i.i.d. subsampling down
    to `cap` particles (flagged approximate) above the assignment cap.
    """
    a, b = _as_matrix(a), _as_matrix(b)
    _check_pair(a, b)
    if a.shape[1] == 1:
        return W2Estimate(w2_1d(a, b), _sorted_coupling(a, b))
    if a.shape[0] <= cap:
        value, coupling = w2_assignment(a, b, cap)
        return W2Estimate(value, coupling)

    rng = np.random.default_rng(sub_seed)
    ia = rng.integers(0, a.shape[0], size=cap)
    ib = rng.integers(0, b.shape[0], size=cap)
    value, _ = w2_assignment(a[ia], b[ib], cap)
    log.warn('W2 on {n} particles approximated from {cap} subsamples',
             n=a.shape[0], cap=cap)
    return W2Estimate(value, None, approximate=True)


def w2sq_to_point(a: Points, point: Sequence[float]) -> float:
    """W2^2 to a point mass: the mean squared distance to it."""
    a = _as_matrix(a)
    diff = a - np.asarray(point, dtype=float).reshape(1, -1)
    return float(np.mean(np.sum(diff * diff, axis=1)))


def product_w2_squared(per_block: Sequence[float]) -> float:
    """
    W2^2 between product measures from the blockwise squared distances; the
    squared distance tensorizes into their sum.
    """
    values = np.asarray(per_block, dtype=float)
    if np.any(values < 0):
        raise TransportError(f'Squared distances must be non-negative, got '
                             f'{values.tolist()}.')
    return float(values.sum())
