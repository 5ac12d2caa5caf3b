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
Built-in problem factories: Bayesian logistic regression under a mean-field
factorization, the three-species cross-interaction system, the coupled
quadratic family with its Euclidean closed form, and separable Gaussian
targets with known minimizers.
"""
from __future__ import annotations

import enum
import functools
import hashlib
import math
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import special, stats
from twisted.logger import Logger

from .model import BlockState, EntropySpec, InteractionSpec, \
    ParticleEnsemble, PotentialSpec, ProblemSpec, ProblemSpecError, \
    QuadraticRegistration

__all__ = ['LogisticDataset', 'simulate_logistic', 'load_logistic_csv',
           'logistic_lipschitz', 'mfvi_problem', 'KernelSign',
           'SpeciesSystem', 'species_problem', 'species_convexity_margin',
           'arctan_field', 'arctan_field_jacobian',
           'quadratic_product_problem', 'quadratic_iteration_matrix',
           'quadratic_eigenvalues', 'quadratic_spectral_radius',
           'quadratic_sum_factor', 'quadratic_divergence_threshold',
           'gaussian_mfvi_problem']

log = Logger()


# --- Bayesian logistic regression ------------------------------------------

class LogisticDataset(NamedTuple):
    features: np.ndarray
    labels: np.ndarray
    prior_variance: float = 4.0
    #: generating parameter, known for simulated data only
    theta_star: Optional[Tuple[float, ...]] = None

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features, dtype=float).tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype=float).tobytes())
        return h.hexdigest()[:16]


def _check_dataset(data: LogisticDataset) -> LogisticDataset:
    features = np.asarray(data.features, dtype=float)
    labels = np.asarray(data.labels, dtype=float).reshape(-1)
    if features.ndim != 2 or features.shape[0] < 1 or features.shape[1] < 1:
        raise ProblemSpecError(f'Features must be an n x p matrix with '
                               f'n, p >= 1, got shape {features.shape}.')
    if labels.shape[0] != features.shape[0]:
        raise ProblemSpecError(f'{labels.shape[0]} labels for '
                               f'{features.shape[0]} feature rows.')
    if not np.all((labels == 0) | (labels == 1)):
        raise ProblemSpecError('Labels must be 0 or 1.')
    if data.prior_variance <= 0:
        raise ProblemSpecError(f'Prior variance must be positive, got '
                               f'{data.prior_variance}.')
    if not np.all(np.isfinite(features)):
        raise ProblemSpecError('Features contain non-finite values.')
    return data._replace(features=features, labels=labels)


def simulate_logistic(n: int,
                      theta_star: Sequence[float],
                      rng: np.random.Generator,
                      prior_variance: float = 4.0) -> LogisticDataset:
    """
    Draws x_i ~ N(0, I_p) and y_i ~ Bernoulli(sigmoid(x_i . theta*)).
    """
    theta = np.asarray(theta_star, dtype=float)
    features = rng.standard_normal((int(n), theta.shape[0]))
    labels = (rng.random(int(n)) < special.expit(features @ theta))
    return _check_dataset(LogisticDataset(
        features, labels.astype(float), float(prior_variance),
        tuple(float(t) for t in theta)))


def load_logistic_csv(path: Union[str, Path],
                      intercept: bool = False,
                      prior_variance: float = 4.0) -> LogisticDataset:
    """
    Reads a headered CSV whose last column is the binary label and whose
    other columns are features.

    Parameters
    ----------
    path
        CSV file.
    intercept
        Prepend a constant feature column of ones.
    prior_variance
        Variance of the isotropic Gaussian prior.

    Raises
    ------
    ProblemSpecError
        If the file has fewer than two columns or invalid labels.
    """
    frame = pd.read_csv(path)
    if frame.shape[1] < 2:
        raise ProblemSpecError(f'{path}: expected feature columns followed '
                               f'by a label column.')
    features = frame.iloc[:, :-1].to_numpy(dtype=float)
    labels = frame.iloc[:, -1].to_numpy(dtype=float)
    if intercept:
        features = np.hstack([np.ones((features.shape[0], 1)), features])
    log.info('loaded {n} observations with {p} features from {path}',
             n=features.shape[0], p=features.shape[1], path=str(path))
    return _check_dataset(LogisticDataset(features, labels,
                                          float(prior_variance)))


def logistic_lipschitz(features: np.ndarray) -> float:
    """
    Upper bound 1/4 max_j sum_i |x_ij| |x_{i,-j}| on the Lipschitz constant
    of grad_j V in the other coordinates, from sigmoid' <= 1/4.
    """
    features = np.asarray(features, dtype=float)
    sq = features ** 2
    rest = np.sqrt(np.maximum(sq.sum(axis=1, keepdims=True) - sq, 0.0))
    return float(0.25 * np.max(np.sum(np.abs(features) * rest, axis=0)))


def _logistic_value(features, labels, prior_variance, theta):
    logits = theta @ features.T
    return (np.logaddexp(0.0, logits).sum(axis=1)
            - logits @ labels
            + np.sum(theta ** 2, axis=1) / (2.0 * prior_variance))


def _logistic_gradient(features, labels, prior_variance, j, theta):
    residual = special.expit(theta @ features.T) - labels
    grad = residual @ features[:, j] + theta[:, j] / prior_variance
    return grad[:, None]


def mfvi_problem(data: LogisticDataset) -> ProblemSpec:
    """
    Mean-field posterior of Bayesian logistic regression: one scalar block
    per coefficient, negative self-entropy on every block and the negative
    log-posterior as the joint potential.
    """
    data = _check_dataset(data)
    features, labels = data.features, data.labels
    zero = np.flatnonzero(np.all(features == 0, axis=0))
    if zero.size:
        log.warn('features {columns} are identically zero; their posterior '
                 'factors equal the prior', columns=zero.tolist())

    potential = PotentialSpec(
        value=functools.partial(_logistic_value, features, labels,
                                data.prior_variance),
        block_gradient=functools.partial(_logistic_gradient, features,
                                         labels, data.prior_variance),
        lipschitz_L=logistic_lipschitz(features),
    )
    params = {'n': data.n, 'p': data.p,
              'prior_variance': data.prior_variance,
              'data': data.digest()}
    if data.theta_star is not None:
        params['theta_star'] = tuple(data.theta_star)
    return ProblemSpec(
        dims=[1] * data.p,
        potential=potential,
        entropies=[EntropySpec.neg_self_entropy()] * data.p,
        name='mfvi',
        params=params,
    )


# --- three-species cross-interaction system --------------------------------

class KernelSign(enum.Enum):
    #: W_j = -(Q_j^2 / 4) arctan |x - x'|^2
    NEGATIVE_QUARTER = 'negative-quarter'
    #: W_j = +(Q_j^2 / 2) arctan |x - x'|^2
    POSITIVE_HALF = 'positive-half'


class SpeciesSystem(NamedTuple):
    alpha: float = 1.0
    beta: float = 1.0
    super_quartic: bool = False
    kernel_sign: KernelSign = KernelSign.NEGATIVE_QUARTER
    charges: Tuple[float, ...] = (1.0, -1.0, 0.5)
    stiffness: Tuple[float, ...] = (6.0, 7.0, 3.0)
    centers: Tuple[Tuple[float, float], ...] = ((3.0, 0.0), (-3.0, -3.0),
                                                (3.0, 3.0))


def arctan_field(z: np.ndarray) -> np.ndarray:
    """grad (1/2) arctan |z|^2 = z / (1 + |z|^4), over the last axis."""
    sq = np.sum(z * z, axis=-1, keepdims=True)
    return z / (1.0 + sq * sq)


def arctan_field_jacobian(z: np.ndarray) -> np.ndarray:
    """Jacobian of `arctan_field` at the rows of z, shape (N, d, d)."""
    z = np.atleast_2d(z)
    sq = np.sum(z * z, axis=-1)[:, None, None]
    eye = np.eye(z.shape[-1])[None]
    outer = z[:, :, None] * z[:, None, :]
    return eye / (1.0 + sq ** 2) - 4.0 * sq * outer / (1.0 + sq ** 2) ** 2


def species_convexity_margin(sys: SpeciesSystem) -> float:
    """min_i (alpha r_i - 4 Q_i^2 - |Q_i| sum_{j != i} |Q_j|)."""
    q = np.abs(np.asarray(sys.charges, dtype=float))
    r = sys.alpha * np.asarray(sys.stiffness, dtype=float)
    return float(np.min(r - 4.0 * q ** 2 - q * (q.sum() - q)))


def _species_split(x: np.ndarray):
    return x[:, 0:2], x[:, 2:4], x[:, 4:6]


def _species_value(sys: SpeciesSystem, x: np.ndarray) -> np.ndarray:
    blocks = _species_split(x)
    value = np.zeros(x.shape[0])
    for xj, rj, cj in zip(blocks, sys.stiffness, sys.centers):
        value += 0.5 * sys.alpha * rj * np.sum((xj - np.asarray(cj)) ** 2,
                                               axis=1)
    for i in range(3):
        for j in range(i + 1, 3):
            z = blocks[i] - blocks[j]
            value -= 0.5 * sys.charges[i] * sys.charges[j] \
                * np.arctan(np.sum(z * z, axis=1))
    if sys.super_quartic:
        for xj in blocks:
            value += 0.25 * np.sum(xj * xj, axis=1) ** 2
    return value


def _species_gradient(sys: SpeciesSystem, j: int, x: np.ndarray) \
        -> np.ndarray:
    blocks = _species_split(x)
    xj = blocks[j]
    grad = sys.alpha * sys.stiffness[j] * (xj - np.asarray(sys.centers[j]))
    for i in range(3):
        if i != j:
            grad -= sys.charges[i] * sys.charges[j] \
                * arctan_field(xj - blocks[i])
    if sys.super_quartic:
        grad += np.sum(xj * xj, axis=1, keepdims=True) * xj
    return grad


def _arctan_kernel(scale: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    z = x - y
    return scale * np.arctan(np.sum(z * z, axis=-1))


def _arctan_kernel_grad1(scale: float, x: np.ndarray, y: np.ndarray) \
        -> np.ndarray:
    return 2.0 * scale * arctan_field(x - y)


def _arctan_kernel_grad2(scale: float, x: np.ndarray, y: np.ndarray) \
        -> np.ndarray:
    return -2.0 * scale * arctan_field(x - y)


def species_problem(sys: SpeciesSystem = SpeciesSystem()) -> ProblemSpec:
    """
    Equilibrium of three interacting species in the plane, each confined
    around its own center and coupled through arctan cross-interactions.

    The internal energy is beta rho^2 on every species, or negative
    self-entropy when the super-quartic confinement |x|^4/4 is added.
    """
    if sys.alpha < 1:
        log.warn('species system with alpha={alpha} < 1 may lose '
                 'convexity', alpha=sys.alpha)
    if sys.beta < 0:
        raise ProblemSpecError(f'beta must be non-negative, got {sys.beta}.')
    q = np.asarray(sys.charges, dtype=float)
    lipschitz = float(max(abs(q[j]) * np.linalg.norm(np.delete(q, j))
                          for j in range(3)))

    factor = {KernelSign.NEGATIVE_QUARTER: -0.25,
              KernelSign.POSITIVE_HALF: 0.5}[sys.kernel_sign]
    interactions = []
    for qj in sys.charges:
        scale = factor * qj ** 2
        interactions.append(InteractionSpec(
            kernel=functools.partial(_arctan_kernel, scale),
            grad1=functools.partial(_arctan_kernel_grad1, scale),
            grad2=functools.partial(_arctan_kernel_grad2, scale),
        ))

    if sys.super_quartic:
        entropy = EntropySpec.neg_self_entropy()
    else:
        entropy = EntropySpec.power(2, sys.beta)

    return ProblemSpec(
        dims=[2, 2, 2],
        potential=PotentialSpec(
            value=functools.partial(_species_value, sys),
            block_gradient=functools.partial(_species_gradient, sys),
            lipschitz_L=lipschitz,
        ),
        entropies=[entropy] * 3,
        interactions=interactions,
        name='species',
        params={'alpha': sys.alpha, 'beta': sys.beta,
                'super_quartic': sys.super_quartic,
                'kernel_sign': sys.kernel_sign.value},
    )


# --- coupled quadratic family ----------------------------------------------

def _quadratic_value(alpha: float, x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 - alpha) * np.sum(x * x, axis=1) \
        + 0.5 * alpha * np.sum(x, axis=1) ** 2


def _quadratic_gradient(alpha: float, j: int, x: np.ndarray) -> np.ndarray:
    return ((1.0 - alpha) * x[:, j] + alpha * np.sum(x, axis=1))[:, None]


def _origin(m: int, count: int, rng: np.random.Generator) -> BlockState:
    return BlockState.from_arrays([np.zeros((count, 1))] * m)


def quadratic_product_problem(m: int, alpha: float) -> ProblemSpec:
    """
    V(x) = (1 - alpha)/2 |x|^2 + alpha/2 (x_1 + ... + x_m)^2 over m scalar
    blocks, without internal energy. The minimizer is the origin.
    """
    if m < 1:
        raise ProblemSpecError(f'm must be positive, got {m}.')
    if not 0 <= alpha < 1:
        raise ProblemSpecError(f'alpha must lie in [0, 1), got {alpha}.')
    return ProblemSpec(
        dims=[1] * m,
        potential=PotentialSpec(
            value=functools.partial(_quadratic_value, alpha),
            block_gradient=functools.partial(_quadratic_gradient, alpha),
            lipschitz_L=alpha * math.sqrt(m - 1),
            separable=alpha == 0,
        ),
        entropies=[EntropySpec.none()] * m,
        name='quadratic',
        params={'m': m, 'alpha': alpha},
        closed_form=QuadraticRegistration(alpha),
        analytic_reference=functools.partial(_origin, m),
    )


def quadratic_iteration_matrix(m: int, alpha: float, tau: float) \
        -> np.ndarray:
    """
    Matrix A of the parallel scheme on the quadratic family, x^{k+1} =
    A x^k, A = ((1 + alpha tau) I - alpha tau 1 1^T) / (1 + tau).
    """
    return ((1.0 + alpha * tau) * np.eye(m)
            - alpha * tau * np.ones((m, m))) / (1.0 + tau)


def quadratic_eigenvalues(m: int, alpha: float, tau: float) \
        -> Tuple[float, float]:
    """(eigenvalue of multiplicity m - 1, eigenvalue along 1)."""
    return ((1.0 + alpha * tau) / (1.0 + tau),
            (1.0 + alpha * tau - alpha * tau * m) / (1.0 + tau))


def quadratic_spectral_radius(m: int, alpha: float, tau: float) -> float:
    if m == 1:
        return abs(quadratic_eigenvalues(m, alpha, tau)[1])
    return max(abs(e) for e in quadratic_eigenvalues(m, alpha, tau))


def quadratic_sum_factor(m: int, alpha: float, tau: float) -> float:
    """Per-step factor of s = x_1 + ... + x_m under the parallel scheme."""
    return (1.0 / tau - (m - 1) * alpha) / (1.0 + 1.0 / tau)


def quadratic_divergence_threshold(m: int, alpha: float) -> float:
    """Step size above which the parallel scheme diverges; +inf if never."""
    slope = (m - 1) * alpha - 1.0
    return math.inf if slope <= 0 else 2.0 / slope


# --- separable Gaussian targets --------------------------------------------

def _gaussian_value(dims, precisions, x: np.ndarray) -> np.ndarray:
    value = np.zeros(x.shape[0])
    offset = 0
    for d, p in zip(dims, precisions):
        value += 0.5 * p * np.sum(x[:, offset:offset + d] ** 2, axis=1)
        offset += d
    return value


def _gaussian_gradient(offsets, precisions, j: int, x: np.ndarray) \
        -> np.ndarray:
    return precisions[j] * x[:, offsets[j]:offsets[j + 1]]


def _gaussian_reference(dims, precisions, count: int,
                        rng: np.random.Generator) -> BlockState:
    blocks = []
    for d, p in zip(dims, precisions):
        if d == 1:
            quantiles = (np.arange(count) + 0.5) / count
            points = stats.norm.ppf(quantiles)[:, None]
        else:
            points = rng.standard_normal((count, d))
        blocks.append(ParticleEnsemble(points / math.sqrt(p)))
    return BlockState(blocks)


def gaussian_mfvi_problem(dim_blocks: Sequence[int],
                          precisions: Sequence[float]) -> ProblemSpec:
    """
    V(x) = sum_j (p_j / 2) |x_j|^2 with negative self-entropy; the minimizer
    is the product of N(0, I / p_j).

    The analytic reference uses normal quantiles for scalar blocks and
    i.i.d. draws otherwise.
    """
    dims = tuple(int(d) for d in dim_blocks)
    precisions = tuple(float(p) for p in precisions)
    if len(dims) != len(precisions):
        raise ProblemSpecError(f'{len(dims)} block dimensions for '
                               f'{len(precisions)} precisions.')
    if any(p <= 0 for p in precisions):
        raise ProblemSpecError(f'Precisions must be positive, got '
                               f'{precisions}.')
    offsets = tuple(int(o) for o in np.cumsum((0,) + dims))
    return ProblemSpec(
        dims=dims,
        potential=PotentialSpec(
            value=functools.partial(_gaussian_value, dims, precisions),
            block_gradient=functools.partial(_gaussian_gradient, offsets,
                                             precisions),
            lipschitz_L=0.0,
            separable=True,
        ),
        entropies=[EntropySpec.neg_self_entropy()] * len(dims),
        name='gaussian',
        params={'dims': dims, 'precisions': precisions},
        analytic_reference=functools.partial(_gaussian_reference, dims,
                                             precisions),
    )
