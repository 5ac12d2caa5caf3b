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
from typing import NamedTuple

import numpy as np
from twisted.trial import unittest

from wpcg.diagnostics import RateFitError, entropy_gradient, \
    first_variation_variance, foc_residual, polynomial_rate, rate_slope
from wpcg.kde import KdeConfig, kde_score
from wpcg.model import BlockState, EnsembleError, EntropySpec, \
    PotentialSpec, ProblemSpec
from wpcg.problems import gaussian_mfvi_problem, quadratic_product_problem, \
    species_problem
from wpcg.steps import FaConfig, euclidean_prox_step, fa_block_step


class _Record(NamedTuple):
    k: int
    value: float


def _records(values) -> list:
    return [_Record(k, v) for k, v in enumerate(values, start=1)]


def _flat_entropic() -> ProblemSpec:
    return ProblemSpec(
        dims=[1],
        potential=PotentialSpec(value=lambda x: np.zeros(x.shape[0]),
                                block_gradient=lambda j, x: np.zeros_like(x),
                                lipschitz_L=0.0),
        entropies=[EntropySpec.neg_self_entropy()])


class TestFirstVariation(unittest.TestCase):
    def test_point_mass_has_no_spread(self):
        problem = quadratic_product_problem(1, 0.0)
        state = BlockState.from_arrays([[[3.0]]])
        self.assertEqual(first_variation_variance(problem, state, 0,
                                                  KdeConfig()), 0.0)

    def test_flat_density_is_stationary(self):
        state = BlockState.from_arrays([np.linspace(-1.0, 1.0, 101)])
        value = first_variation_variance(_flat_entropic(), state, 0,
                                         KdeConfig.fixed(10.0))
        self.assertLess(value, 1e-4)

    def test_gaussian_target_closer_than_spread_start(self):
        problem = gaussian_mfvi_problem([1], [1.0])
        rng = np.random.default_rng(0)
        near = BlockState.from_arrays([rng.standard_normal((1000, 1))])
        far = BlockState.from_arrays([3.0 * rng.standard_normal((1000, 1))])
        self.assertLess(
            first_variation_variance(problem, near, 0, KdeConfig()),
            0.1 * first_variation_variance(problem, far, 0, KdeConfig()))

    def test_invariant_to_particle_order(self):
        problem = species_problem()
        rng = np.random.default_rng(1)
        state = BlockState.from_arrays([rng.standard_normal((30, 2))
                                        for _ in range(3)])
        base = first_variation_variance(problem, state, 0, KdeConfig(),
                                        np.random.default_rng(5))
        other = state.with_block(1, state[1].permuted(rng.permutation(30)))
        self.assertEqual(base, first_variation_variance(
            problem, other, 0, KdeConfig(), np.random.default_rng(5)))
        own = state.with_block(0, state[0].permuted(rng.permutation(30)))
        self.assertAlmostEqual(base, first_variation_variance(
            problem, own, 0, KdeConfig(), np.random.default_rng(5)),
            places=10)

    def test_constant_offset_ignored(self):
        base = gaussian_mfvi_problem([1], [1.0])
        shifted = ProblemSpec(
            dims=[1],
            potential=base.potential._replace(
                value=lambda x: base.potential.value(x) + 5.0),
            entropies=base.entropies)
        state = BlockState.from_arrays(
            [np.random.default_rng(2).standard_normal((200, 1))])
        self.assertAlmostEqual(
            first_variation_variance(base, state, 0, KdeConfig()),
            first_variation_variance(shifted, state, 0, KdeConfig()),
            places=10)


class TestFocResidual(unittest.TestCase):
    def test_exact_proximal_step(self):
        problem = quadratic_product_problem(3, 0.5)
        prev = BlockState.from_arrays([[[1.0]], [[-2.0]], [[0.5]]])
        for j in range(3):
            new = prev.with_block(j, euclidean_prox_step(problem, prev, j,
                                                         0.7))
            residual = foc_residual(problem, prev, new, j, 0.7, KdeConfig())
            self.assertLess(residual.norm, 1e-12)
            self.assertEqual(residual.field.shape, (1, 1))

    def test_unmoved_ensemble(self):
        problem = quadratic_product_problem(1, 0.0)
        state = BlockState.from_arrays([[[2.0]]])
        residual = foc_residual(problem, state, state, 0, 0.5, KdeConfig())
        # -tau * grad V(2) = -1
        self.assertAlmostEqual(residual.norm, 1.0)

    def test_needs_correspondence(self):
        problem = gaussian_mfvi_problem([1], [1.0])
        a = BlockState.from_arrays([np.zeros((3, 1))])
        b = BlockState.from_arrays([np.zeros((4, 1))])
        self.assertRaises(EnsembleError, foc_residual, problem, a, b, 0,
                          0.1, KdeConfig())

    def test_more_inner_iterations_tighten_fa_step(self):
        problem = gaussian_mfvi_problem([1], [1.0])
        for seed in range(10):
            rng = np.random.default_rng(seed)
            prev = BlockState.from_arrays([3.0 * rng.standard_normal(
                (100, 1))])
            norms = []
            for budget in (1, 1000):
                fa = FaConfig(hidden_widths=(8,), inner_iterations=budget,
                              inner_step=1e-2)
                step = fa_block_step(problem, prev, 0, 0.2, fa,
                                     np.random.default_rng(seed + 100))
                new = prev.with_block(0, step.ensemble)
                norms.append(foc_residual(problem, prev, new, 0, 0.2,
                                          KdeConfig()).norm)
            self.assertGreater(norms[0], norms[1])

    test_more_inner_iterations_tighten_fa_step.timeout = 600

    def test_entropy_gradient(self):
        points = np.random.default_rng(3).standard_normal((40, 2))
        np.testing.assert_array_equal(
            entropy_gradient(EntropySpec.none(), points, KdeConfig()),
            np.zeros((40, 2)))
        np.testing.assert_allclose(
            entropy_gradient(EntropySpec.neg_self_entropy(2.0), points,
                             KdeConfig()),
            2.0 * kde_score(points, KdeConfig(), points))


class TestRates(unittest.TestCase):
    def test_geometric(self):
        fit = rate_slope(_records(0.5 ** np.arange(1, 21)), 'value')
        self.assertAlmostEqual(fit.slope, math.log(0.5))
        self.assertAlmostEqual(fit.r_squared, 1.0)

    def test_scale_invariant(self):
        values = 0.8 ** np.arange(1, 11)
        plain = rate_slope(_records(values), 'value')
        scaled = rate_slope(_records(7.0 * values), 'value')
        self.assertAlmostEqual(plain.slope, scaled.slope)
        self.assertAlmostEqual(scaled.intercept - plain.intercept,
                               math.log(7.0))

    def test_constant(self):
        fit = rate_slope(_records([2.0] * 6), lambda r: r.value)
        self.assertAlmostEqual(fit.slope, 0.0)
        self.assertEqual(fit.r_squared, 1.0)

    def test_errors(self):
        self.assertRaises(RateFitError, rate_slope, _records([1.0] * 4),
                          'value')
        self.assertRaises(RateFitError, rate_slope,
                          _records([1.0, 0.5, 0.0, 0.0, 0.0]), 'value')
        self.assertRaises(RateFitError, rate_slope,
                          _records([1.0, 0.5, math.nan, 0.1, 0.1]), 'value')

    def test_polynomial(self):
        k = np.arange(1, 31, dtype=float)
        fit = polynomial_rate(_records(3.0 / k ** 2), 'value')
        self.assertAlmostEqual(fit.slope, -2.0)
