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
Isotropic Gaussian kernel density estimates over particle ensembles.
"""
from __future__ import annotations

import enum
from typing import NamedTuple, Optional, Union

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp, softmax

from .model import ParticleEnsemble, WPCGError

__all__ = ['BandwidthError', 'BandwidthRule', 'KdeConfig',
           'silverman_bandwidth', 'bandwidth', 'kde_density', 'kde_evaluate',
           'kde_log_density', 'kde_score']

Points = Union[ParticleEnsemble, np.ndarray]


class BandwidthError(WPCGError):
    pass


class BandwidthRule(enum.Enum):
    SILVERMAN = 'silverman'
    FIXED = 'fixed'


class KdeConfig(NamedTuple):
    bandwidth_rule: BandwidthRule = BandwidthRule.SILVERMAN
    h: Optional[float] = None

    @classmethod
    def fixed(cls, h: float) -> KdeConfig:
        if h <= 0:
            raise BandwidthError(f'Fixed bandwidth must be positive, got {h}.')
        return cls(BandwidthRule.FIXED, float(h))

    @classmethod
    def silverman(cls) -> KdeConfig:
        return cls(BandwidthRule.SILVERMAN, None)


def _as_matrix(points: Points) -> np.ndarray:
    if isinstance(points, ParticleEnsemble):
        return points.points
    pts = np.asarray(points, dtype=float)
    return pts.reshape(-1, 1) if pts.ndim == 1 else pts


def silverman_bandwidth(points: Points) -> float:
    """
    h = s * (4 / ((d + 2) B))^(1 / (d + 4)), where s is the mean of the
    per-coordinate sample standard deviations.
    """
    pts = _as_matrix(points)
    n, d = pts.shape
    if n < 2:
        raise BandwidthError('Silverman bandwidth needs at least two '
                             'particles; use a Fixed bandwidth instead.')
    sigma = float(np.mean(pts.std(axis=0, ddof=1)))
    h = sigma * (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))
    if not h > 0:
        raise BandwidthError('Degenerate ensemble gives a zero Silverman '
                             'bandwidth; use a Fixed bandwidth instead.')
    return h


def bandwidth(points: Points, cfg: KdeConfig) -> float:
    if cfg.bandwidth_rule is BandwidthRule.FIXED:
        if cfg.h is None or cfg.h <= 0:
            raise BandwidthError(f'Fixed bandwidth must be positive, got '
                                 f'{cfg.h}.')
        return float(cfg.h)
    return silverman_bandwidth(points)


def _scaled_sq_dists(pts: np.ndarray, queries: np.ndarray,
                     h: float) -> np.ndarray:
    if queries.shape[1] != pts.shape[1]:
        raise BandwidthError(f'Query dimension {queries.shape[1]} does not '
                             f'match ensemble dimension {pts.shape[1]}.')
    return -cdist(queries, pts, 'sqeuclidean') / (2.0 * h * h)


def kde_log_density(points: Points,
                    cfg: KdeConfig,
                    queries: np.ndarray,
                    h: Optional[float] = None) -> np.ndarray:
    """Log of the estimate at each query row; `h` overrides the rule."""
    pts = _as_matrix(points)
    q = _as_matrix(queries)
    h = bandwidth(pts, cfg) if h is None else h
    n, d = pts.shape
    return logsumexp(_scaled_sq_dists(pts, q, h), axis=1) - np.log(n) \
        - 0.5 * d * np.log(2.0 * np.pi * h * h)


def kde_evaluate(points: Points,
                 cfg: KdeConfig,
                 queries: np.ndarray,
                 h: Optional[float] = None) -> np.ndarray:
    return np.exp(kde_log_density(points, cfg, queries, h))


def kde_score(points: Points,
              cfg: KdeConfig,
              queries: np.ndarray,
              h: Optional[float] = None) -> np.ndarray:
    """Gradient of the log density estimate at each query row."""
    pts = _as_matrix(points)
    q = _as_matrix(queries)
    h = bandwidth(pts, cfg) if h is None else h
    weights = softmax(_scaled_sq_dists(pts, q, h), axis=1)
    return (weights @ pts - q) / (h * h)


def kde_density(points: Points, cfg: KdeConfig, query: np.ndarray) -> float:
    """
    Evaluates the Gaussian kernel density estimate at a single point.

    Parameters
    ----------
    points
        The ensemble the estimate is built from (B >= 1).
    cfg
        Bandwidth rule.
    query
        A point of the ensemble's dimension.

    Returns
    -------
    density
        (1/B) sum_b (2 pi h^2)^(-d/2) exp(-|query - X_b|^2 / (2 h^2)).
    """
    q = np.atleast_1d(np.asarray(query, dtype=float)).reshape(1, -1)
    return float(kde_evaluate(points, cfg, q)[0])
