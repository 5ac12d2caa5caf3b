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
Convergence diagnostics: variance of the first variation, residual of the
subproblem's first-order optimality condition, and rate fits over run
records.
"""
from __future__ import annotations

from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.stats import linregress

from .kde import KdeConfig, bandwidth, kde_evaluate, kde_score
from .marginal import draw_companions, interaction_drift, \
    interaction_first_variation, marginal_gradient, marginal_potential
from .model import BlockState, EnsembleError, EntropyKind, EntropySpec, \
    ProblemSpec, WPCGError

__all__ = ['RateFitError', 'FocResidual', 'RateFit',
           'first_variation_values', 'first_variation_variance',
           'entropy_gradient', 'foc_residual', 'rate_slope',
           'polynomial_rate']

FieldSelector = Union[str, Callable[[object], float]]

_MIN_RECORDS = 5


class RateFitError(WPCGError):
    pass


class FocResidual(NamedTuple):
    #: eta evaluated at every new particle, B x d
    field: np.ndarray
    #: L2(rho_new) norm, sqrt(mean |eta_b|^2)
    norm: float


class RateFit(NamedTuple):
    slope: float
    r_squared: float
    intercept: float


def first_variation_values(problem: ProblemSpec,
                           state: BlockState,
                           j: int,
                           kde: KdeConfig,
                           rng: Optional[np.random.Generator] = None,
                           n_grad: Optional[int] = None) -> np.ndarray:
    """
    dF/drho_j at every particle of block j:
    V_j(X_b) + h_j'(rho_kde(X_b)) + (1/B) sum_b' [W_j(X_b, X_b') +
    W_j(X_b', X_b)].
    """
    rng = np.random.default_rng(0) if rng is None else rng
    x = state.blocks[j].points
    companions = draw_companions(problem, state, j, n_grad, rng)
    values = marginal_potential(problem, j, x, companions)
    entropy = problem.entropies[j]
    if entropy.active:
        values = values + entropy.h_prime(kde_evaluate(x, kde, x))
    return values + interaction_first_variation(problem.interactions[j], x)


def first_variation_variance(problem: ProblemSpec,
                             state: BlockState,
                             j: int,
                             kde: KdeConfig,
                             rng: Optional[np.random.Generator] = None,
                             n_grad: Optional[int] = None) -> float:
    """
    Sample variance over the particles of block j of the first variation of
    F; it vanishes exactly when the first variation is constant on the
    support, the stationarity signature of a minimizer.
    """
    values = first_variation_values(problem, state, j, kde, rng, n_grad)
    return float(np.var(values))


def entropy_gradient(entropy: EntropySpec,
                     points: np.ndarray,
                     kde: KdeConfig) -> np.ndarray:
    """
    grad h'(rho) at the particles, with rho the KDE of the particles:
    c grad log rho for negative self-entropy, c n (n-1) rho^(n-2) grad rho
    for the power entropy.
    """
    if not entropy.active or entropy.coefficient == 0:
        return np.zeros_like(points)
    h = bandwidth(points, kde)
    score = kde_score(points, kde, points, h)
    if entropy.kind is EntropyKind.NEG_SELF_ENTROPY:
        return entropy.coefficient * score
    n = entropy.exponent
    rho = kde_evaluate(points, kde, points, h)[:, None]
    return entropy.coefficient * n * (n - 1) * rho ** (n - 1) * score


def foc_residual(problem: ProblemSpec,
                 state_prev: BlockState,
                 state_new: BlockState,
                 j: int,
                 tau: float,
                 kde: KdeConfig,
                 rng: Optional[np.random.Generator] = None,
                 n_grad: Optional[int] = None) -> FocResidual:
    """
    Residual of the optimality condition T - Id = -tau grad(dF_j/drho) of
    the block-j subproblem, using the particle correspondence between the
    old and new ensembles as the transport map:

        eta_b = (X_b^old - X_b^new)
                - tau [grad V_j(X_b^new) + grad h'(rho_new)(X_b^new)
                       + interaction drift at X_b^new]

    The marginal gradient is taken against the other blocks of
    `state_prev`, the state the subproblem was solved against.
    """
    old = state_prev.blocks[j]
    new = state_new.blocks[j]
    if old.count != new.count or old.dim != new.dim:
        raise EnsembleError(f'No particle correspondence between ensembles '
                            f'{old} and {new}.')
    rng = np.random.default_rng(0) if rng is None else rng
    y = new.points
    companions = draw_companions(problem, state_prev, j, n_grad, rng)
    gradient = marginal_gradient(problem, j, y, companions) \
        + entropy_gradient(problem.entropies[j], y, kde) \
        + interaction_drift(problem.interactions[j], y)
    field = (old.points - y) - tau * gradient
    norm = float(np.sqrt(np.mean(np.sum(field * field, axis=1))))
    return FocResidual(field, norm)


def _field_values(records: Sequence, field: FieldSelector) -> np.ndarray:
    if len(records) < _MIN_RECORDS:
        raise RateFitError(f'Rate fits need at least {_MIN_RECORDS} records, '
                           f'got {len(records)}.')
    getter = field if callable(field) else (lambda r: getattr(r, field))
    return np.array([float(getter(r)) for r in records])


def _fit(x: np.ndarray, y: np.ndarray) -> RateFit:
    fit = linregress(x, y)
    residual = y - (fit.intercept + fit.slope * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(residual ** 2))
    r_squared = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return RateFit(float(fit.slope), r_squared, float(fit.intercept))


def rate_slope(records: Sequence, field: FieldSelector) -> RateFit:
    """
    Least-squares fit of log(field) against the iteration index k.

    Parameters
    ----------
    records
        At least five run records.
    field
        Record attribute name or a callable extracting the value.

    Returns
    -------
    fit
        Slope per iteration (log ratio of a geometric decay), R^2 and
        intercept.

    Raises
    ------
    RateFitError
        Too few records, or a non-positive value (for sublinear regimes use
        `polynomial_rate`, for values that reached zero trim the tail).
    """
    values = _field_values(records, field)
    if np.any(~(values > 0)):
        raise RateFitError('Log-linear rate fit needs positive values; use '
                           'polynomial_rate for polynomial decay.')
    k = np.array([float(r.k) for r in records])
    return _fit(k, np.log(values))


def polynomial_rate(records: Sequence, field: FieldSelector) -> RateFit:
    """Fit of log(field) against log(k); the slope is the decay exponent."""
    values = _field_values(records, field)
    k = np.array([float(r.k) for r in records])
    if np.any(~(values > 0)) or np.any(k <= 0):
        raise RateFitError('Polynomial rate fit needs positive values and '
                           'iteration indices.')
    return _fit(np.log(k), np.log(values))
