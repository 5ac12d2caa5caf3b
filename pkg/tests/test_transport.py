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

import itertools

import numpy as np
from twisted.trial import unittest

from wpcg.model import ParticleEnsemble
from wpcg.transport import AssignmentCapExceeded, TransportError, \
    product_w2_squared, w2_1d, w2_assignment, w2_distance, w2sq_to_point


def _brute_force(a: np.ndarray, b: np.ndarray) -> float:
    cost = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
    n = a.shape[0]
    return min(cost[np.arange(n), list(p)].sum()
               for p in itertools.permutations(range(n))) / n


class TestW2OneDimensional(unittest.TestCase):
    def test_values(self):
        self.assertEqual(w2_1d([0.0, 1.0], [0.0, 1.0]), 0.0)
        self.assertAlmostEqual(w2_1d([0.0, 2.0], [1.0, 3.0]), 1.0)
        self.assertAlmostEqual(w2_1d([0.0], [5.0]), 5.0)
        self.assertAlmostEqual(w2_1d([2.0, 0.0], [3.0, 1.0]), 1.0)

    def test_rejects_mismatch(self):
        self.assertRaises(TransportError, w2_1d, [0.0, 1.0], [0.0])
        self.assertRaises(TransportError, w2_1d, np.zeros((2, 2)),
                          np.zeros((2, 2)))


class TestW2Assignment(unittest.TestCase):
    def test_metric_on_random_triples(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            count = int(rng.integers(1, 17))
            dim = int(rng.integers(1, 4))
            a, b, c = (rng.standard_normal((count, dim)) for _ in range(3))
            ab, ba = w2_assignment(a, b)[0], w2_assignment(b, a)[0]
            self.assertLess(abs(ab - ba), 1e-12)
            self.assertLessEqual(ab, w2_assignment(a, c)[0]
                                 + w2_assignment(c, b)[0] + 1e-12)
            self.assertEqual(w2_assignment(a, a[::-1])[0], 0.0)

    def test_identical_ensembles(self):
        a = np.random.default_rng(0).standard_normal((5, 2))
        value, coupling = w2_assignment(a, a)
        self.assertEqual(value, 0.0)
        np.testing.assert_array_equal(coupling.assignment, np.arange(5))
        self.assertTrue(coupling.is_bijective())

    def test_translation(self):
        a = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        value, coupling = w2_assignment(a, a + [2.0, 0.0])
        self.assertAlmostEqual(value, 2.0)
        np.testing.assert_array_equal(coupling.assignment, [0, 1, 2])

    def test_matches_exhaustive_search(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            count = int(rng.integers(1, 7))
            dim = int(rng.integers(1, 4))
            a = rng.standard_normal((count, dim))
            b = rng.standard_normal((count, dim))
            value, _ = w2_assignment(ParticleEnsemble(a), ParticleEnsemble(b))
            self.assertLess(abs(value ** 2 - _brute_force(a, b)), 1e-12)
            if dim == 1:
                self.assertLess(abs(w2_1d(a, b) - value), 1e-12)

    def test_cap(self):
        a = np.zeros((5, 2))
        self.assertRaises(AssignmentCapExceeded, w2_assignment, a, a, cap=4)

    def test_distance_dispatch(self):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal((40, 1)), rng.standard_normal((40, 1))
        est = w2_distance(a, b)
        self.assertAlmostEqual(est.value, w2_1d(a, b))
        self.assertFalse(est.approximate)
        self.assertTrue(est.coupling.is_bijective())

        a, b = rng.standard_normal((40, 2)), rng.standard_normal((40, 2))
        self.assertAlmostEqual(w2_distance(a, b).value,
                               w2_assignment(a, b)[0])
        approx = w2_distance(a, b, cap=10)
        self.assertTrue(approx.approximate)
        self.assertIsNone(approx.coupling)


class TestProductW2(unittest.TestCase):
    def test_sums(self):
        self.assertEqual(product_w2_squared([0.0, 0.0, 0.0]), 0.0)
        self.assertEqual(product_w2_squared([1.0, 4.0]), 5.0)
        self.assertRaises(TransportError, product_w2_squared, [1.0, -1.0])

    def test_tensorization_on_products(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            a = [rng.standard_normal((3, 1)), rng.standard_normal((3, 1))]
            b = [rng.standard_normal((3, 1)), rng.standard_normal((3, 1))]
            grid = list(itertools.product(range(3), repeat=2))
            joint_a = np.array([[a[0][i, 0], a[1][k, 0]] for i, k in grid])
            joint_b = np.array([[b[0][i, 0], b[1][k, 0]] for i, k in grid])
            joint, _ = w2_assignment(joint_a, joint_b)
            blocks = product_w2_squared([w2_1d(x, y) ** 2
                                         for x, y in zip(a, b)])
            self.assertLess(abs(joint ** 2 - blocks), 1e-9)

    def test_point_mass(self):
        a = np.array([[1.0, 0.0], [0.0, 1.0]])
        self.assertAlmostEqual(w2sq_to_point(a, [0.0, 0.0]), 1.0)
        self.assertAlmostEqual(w2sq_to_point(a, [1.0, 0.0]), 1.0)
        self.assertAlmostEqual(w2sq_to_point([2.0, 4.0], [3.0]), 1.0)
