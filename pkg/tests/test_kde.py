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

import math

import numpy as np
from scipy.integrate import trapezoid
from twisted.trial import unittest

from wpcg.kde import BandwidthError, KdeConfig, kde_density, \
    kde_log_density, kde_score, silverman_bandwidth


class TestKde(unittest.TestCase):
    def test_integrates_to_one(self):
        points = np.random.default_rng(4).standard_normal((60, 1))
        h = silverman_bandwidth(points)
        grid = np.linspace(points.min() - 6 * h, points.max() + 6 * h, 4001)
        values = [kde_density(points, KdeConfig.silverman(), [g])
                  for g in grid]
        self.assertLess(abs(trapezoid(values, grid) - 1.0), 0.01)

    def test_single_kernel_peak(self):
        value = kde_density(np.zeros((1, 2)), KdeConfig.fixed(1.0),
                            np.zeros(2))
        self.assertAlmostEqual(value, 1.0 / (2.0 * math.pi))

    def test_far_query(self):
        points = np.random.default_rng(0).standard_normal((100, 1))
        self.assertLess(kde_density(points, KdeConfig.fixed(0.5), [100.0]),
                        1e-12)

    def test_standard_normal_at_origin(self):
        points = np.random.default_rng(1).standard_normal((5000, 1))
        value = kde_density(points, KdeConfig.silverman(), [0.0])
        self.assertLess(abs(value * math.sqrt(2.0 * math.pi) - 1.0), 0.1)

    def test_silverman_rule(self):
        points = np.array([[0.0], [1.0], [2.0], [3.0]])
        sigma = np.std(points, ddof=1)
        expected = sigma * (4.0 / (3.0 * 4)) ** (1.0 / 5.0)
        self.assertAlmostEqual(silverman_bandwidth(points), expected)

    def test_degenerate_ensembles(self):
        with self.assertRaises(BandwidthError) as ctx:
            silverman_bandwidth(np.ones((10, 2)))
        self.assertIn('Fixed', str(ctx.exception))
        self.assertRaises(BandwidthError, silverman_bandwidth,
                          np.zeros((1, 1)))
        self.assertRaises(BandwidthError, KdeConfig.fixed, 0.0)

    def test_score_matches_log_density_gradient(self):
        rng = np.random.default_rng(2)
        points = rng.standard_normal((30, 2))
        cfg = KdeConfig.fixed(0.7)
        queries = rng.standard_normal((5, 2))
        eps = 1e-6
        fd = np.empty_like(queries)
        for c in range(2):
            step = np.zeros(2)
            step[c] = eps
            fd[:, c] = (kde_log_density(points, cfg, queries + step)
                        - kde_log_density(points, cfg, queries - step)) \
                / (2.0 * eps)
        np.testing.assert_allclose(kde_score(points, cfg, queries), fd,
                                   atol=1e-6)
