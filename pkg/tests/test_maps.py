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
from twisted.trial import unittest

from wpcg.maps import MapShapeError, SingularJacobianError, \
    TransportMapModel, map_forward, map_jacobian, map_jacobian_logdet
from wpcg.verify import logdet_error


class TestTransportMapModel(unittest.TestCase):
    def test_fresh_model_is_identity(self):
        model = TransportMapModel(3, (16, 16), np.random.default_rng(0))
        x = np.random.default_rng(1).standard_normal((10, 3))
        np.testing.assert_array_equal(map_forward(model, x), x)
        self.assertEqual(map_jacobian_logdet(model, x[0]), (0.0, 1.0))

    def test_linear_map(self):
        model = TransportMapModel.from_arrays([0.5 * np.eye(2)],
                                              [np.zeros(2)])
        self.assertEqual(model.layer_sizes, [2, 2])
        np.testing.assert_allclose(map_forward(model, np.array([1.0, -2.0])),
                                   [1.5, -3.0])
        logdet, sign = map_jacobian_logdet(model, np.zeros(2))
        self.assertAlmostEqual(logdet, 2.0 * math.log(1.5))
        self.assertEqual(sign, 1.0)

    def test_singular_map(self):
        model = TransportMapModel.from_arrays([-np.eye(2)], [np.zeros(2)])
        self.assertRaises(SingularJacobianError, map_jacobian_logdet, model,
                          np.zeros(2))

    def test_jacobian_against_finite_differences(self):
        rng = np.random.default_rng(3)
        sizes = [3, 5, 4, 3]
        weights = [0.5 * rng.standard_normal((o, i))
                   for i, o in zip(sizes[:-1], sizes[1:])]
        biases = [0.5 * rng.standard_normal(o) for o in sizes[1:]]
        model = TransportMapModel.from_arrays(weights, biases)
        x = rng.standard_normal(3)
        eps = 1e-6
        fd = np.column_stack([
            (map_forward(model, x + eps * e) - map_forward(model, x - eps * e))
            / (2 * eps) for e in np.eye(3)])
        np.testing.assert_allclose(map_jacobian(model, x), fd, atol=1e-7)
        self.assertLess(logdet_error(model, x), 1e-3)

    def test_shapes(self):
        model = TransportMapModel(2, (4,))
        self.assertRaises(MapShapeError, map_forward, model, np.zeros(3))
        self.assertRaises(MapShapeError, TransportMapModel, 0)
        self.assertRaises(MapShapeError, TransportMapModel.from_arrays,
                          [np.eye(2)], [np.zeros(3)])
        self.assertRaises(MapShapeError, map_jacobian_logdet,
                          TransportMapModel(17, ()), np.zeros(17))

    def test_round_trip_parameters(self):
        model = TransportMapModel(2, (3,), np.random.default_rng(5))
        weights, biases = model.arrays()
        copy = TransportMapModel.from_arrays(weights, biases)
        x = np.random.default_rng(6).standard_normal((4, 2))
        np.testing.assert_array_equal(map_forward(copy, x),
                                      map_forward(model, x))
