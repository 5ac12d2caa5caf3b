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

from wpcg.kde import KdeConfig
from wpcg.model import BlockState, EnsembleError, EntropySpec, \
    InteractionSpec, NonFiniteEnsembleError, ParticleEnsemble, \
    PotentialSpec, ProblemSpec, ProblemSpecError, SchemeConfig, SchemeKind, \
    SolverCompatibilityError, SolverKind, validate_problem
from wpcg.objective import evaluate_objective
from wpcg.problems import gaussian_mfvi_problem, mfvi_problem, \
    quadratic_product_problem, simulate_logistic, species_problem


def _linear_problem(dims) -> ProblemSpec:
    return ProblemSpec(
        dims=dims,
        potential=PotentialSpec(
            value=lambda x: x.sum(axis=1),
            block_gradient=lambda j, x: np.ones((x.shape[0], dims[j]))),
        entropies=[EntropySpec.none()] * len(dims))


class TestParticleEnsemble(unittest.TestCase):
    def test_scalar_input_becomes_column(self):
        ens = ParticleEnsemble([1.0, 2.0, 3.0])
        self.assertEqual(ens.points.shape, (3, 1))
        self.assertEqual((ens.count, ens.dim, len(ens)), (3, 1, 3))

    def test_copy_and_read_only(self):
        source = np.zeros((4, 2))
        ens = ParticleEnsemble(source)
        source[0, 0] = 5.0
        self.assertEqual(ens.points[0, 0], 0.0)
        self.assertRaises(ValueError, ens.points.__setitem__, (0, 0), 1.0)

    def test_rejects_non_finite_and_empty(self):
        self.assertRaises(NonFiniteEnsembleError, ParticleEnsemble,
                          [0.0, math.nan])
        self.assertRaises(NonFiniteEnsembleError, ParticleEnsemble,
                          [[math.inf, 0.0]])
        self.assertRaises(EnsembleError, ParticleEnsemble, np.zeros((0, 2)))

    def test_statistics(self):
        ens = ParticleEnsemble([[0.0, 1.0], [2.0, 3.0]])
        np.testing.assert_allclose(ens.mean(), [1.0, 2.0])
        np.testing.assert_allclose(ens.variance(), [2.0, 2.0])
        np.testing.assert_array_equal(ParticleEnsemble([3.0]).variance(),
                                      [0.0])

    def test_canonical_order_is_lexicographic(self):
        ens = ParticleEnsemble([[1.0, 0.0], [0.0, 5.0], [0.0, 1.0]])
        np.testing.assert_array_equal(ens.canonical_order(), [2, 1, 0])


class TestBlockState(unittest.TestCase):
    def test_counts_must_agree(self):
        self.assertRaises(EnsembleError, BlockState.from_arrays,
                          [np.zeros((3, 1)), np.zeros((4, 1))])

    def test_with_block_returns_new_state(self):
        state = BlockState.from_arrays([np.zeros((2, 1)), np.ones((2, 2))])
        new = state.with_block(0, ParticleEnsemble([5.0, 6.0]))
        np.testing.assert_array_equal(state[0].points, np.zeros((2, 1)))
        np.testing.assert_array_equal(new[0].points, [[5.0], [6.0]])
        self.assertIs(new[1], state[1])
        self.assertRaises(EnsembleError, state.with_block, 1,
                          ParticleEnsemble([5.0, 6.0]))

    def test_joint_and_advance(self):
        state = BlockState.from_arrays([[[1.0]], [[2.0, 3.0]]])
        np.testing.assert_array_equal(state.joint(), [[1.0, 2.0, 3.0]])
        self.assertEqual(state.advanced().k, 1)
        self.assertEqual(state.k, 0)
        self.assertEqual(state.dims, (1, 2))
        self.assertEqual(state.max_abs(), 3.0)


class TestEntropySpec(unittest.TestCase):
    def test_power_exponent(self):
        self.assertRaises(ProblemSpecError, EntropySpec.power, 1)
        self.assertRaises(ProblemSpecError, EntropySpec.power, 2.5)

    def test_derivatives(self):
        rho = np.array([0.5, 2.0])
        neg = EntropySpec.neg_self_entropy(2.0)
        np.testing.assert_allclose(neg.h_prime(rho), 2.0 * (np.log(rho) + 1))
        np.testing.assert_allclose(neg.h_over_rho(rho), 2.0 * np.log(rho))
        power = EntropySpec.power(3, 0.5)
        np.testing.assert_allclose(power.h(rho), 0.5 * rho ** 3)
        np.testing.assert_allclose(power.h_prime(rho), 1.5 * rho ** 2)
        self.assertFalse(EntropySpec.none().active)


class TestValidateProblem(unittest.TestCase):
    def test_valid_mfvi_with_sde(self):
        data = simulate_logistic(20, (1.0, -1.0), np.random.default_rng(0))
        validate_problem(mfvi_problem(data),
                         SchemeConfig(SchemeKind.PARALLEL, 0.1, 10))

    def test_sde_rejects_power_entropy(self):
        config = SchemeConfig(SchemeKind.PARALLEL, 0.1, 10)
        with self.assertRaises(SolverCompatibilityError) as ctx:
            validate_problem(species_problem(), config)
        self.assertIn('SDE requires negative self-entropy',
                      str(ctx.exception))

    def test_gradient_shape_checked(self):
        problem = ProblemSpec(
            dims=[2],
            potential=PotentialSpec(
                value=lambda x: x.sum(axis=1),
                block_gradient=lambda j, x: np.ones((x.shape[0], 3))),
            entropies=[EntropySpec.none()])
        self.assertRaises(ProblemSpecError, validate_problem, problem,
                          SchemeConfig(SchemeKind.SEQUENTIAL, 0.1, 1))

    def test_interaction_needs_gradients(self):
        problem = ProblemSpec(
            dims=[1],
            potential=_linear_problem([1]).potential,
            entropies=[EntropySpec.none()],
            interactions=[InteractionSpec(kernel=lambda x, y: 0.0)])
        self.assertRaises(ProblemSpecError, validate_problem, problem,
                          SchemeConfig(SchemeKind.SEQUENTIAL, 0.1, 1))

    def test_scheme_settings(self):
        problem = _linear_problem([1])
        for config in (SchemeConfig(SchemeKind.PARALLEL, 0.0, 1),
                       SchemeConfig(SchemeKind.PARALLEL, 0.1, 0),
                       SchemeConfig(SchemeKind.RANDOM, 0.1, 1)):
            self.assertRaises(ProblemSpecError, validate_problem, problem,
                              config)

    def test_random_batch_needs_coupling(self):
        # separable: L = 0 gives no default batch size
        problem = gaussian_mfvi_problem([1, 1], [1.0, 4.0])
        config = SchemeConfig(SchemeKind.RANDOM, 0.1, 1)
        self.assertRaises(ProblemSpecError, validate_problem, problem,
                          config)
        validate_problem(problem, config._replace(batch_M=2))

    def test_euclidean_needs_point_masses(self):
        problem = quadratic_product_problem(2, 0.5)
        config = SchemeConfig(SchemeKind.PARALLEL, 1.0, 1,
                              solver=SolverKind.EUCLIDEAN)
        validate_problem(problem, config,
                         BlockState.from_arrays([[[1.0]], [[2.0]]]))
        self.assertRaises(SolverCompatibilityError, validate_problem,
                          problem, config,
                          BlockState.from_arrays([np.zeros((2, 1))] * 2))
        self.assertRaises(SolverCompatibilityError, validate_problem,
                          _linear_problem([1, 1]), config)


class TestObjective(unittest.TestCase):
    def test_point_mass_at_minimizer(self):
        problem = ProblemSpec(
            dims=[1],
            potential=PotentialSpec(value=lambda x: x[:, 0] ** 2,
                                    block_gradient=lambda j, x: 2 * x),
            entropies=[EntropySpec.none()])
        state = BlockState.from_arrays([[[0.0]]])
        self.assertEqual(evaluate_objective(problem, state, KdeConfig()), 0.0)

    def test_linear_functional(self):
        state = BlockState.from_arrays([[[1.0]], [[2.0]]])
        self.assertAlmostEqual(
            evaluate_objective(_linear_problem([1, 1]), state, KdeConfig()),
            3.0)

    def test_gaussian_entropy(self):
        problem = ProblemSpec(
            dims=[1],
            potential=PotentialSpec(value=lambda x: np.zeros(x.shape[0]),
                                    block_gradient=lambda j, x: 0 * x),
            entropies=[EntropySpec.neg_self_entropy()])
        state = BlockState.from_arrays(
            [np.random.default_rng(1).standard_normal((2000, 1))])
        value = evaluate_objective(problem, state, KdeConfig())
        self.assertLess(abs(value + 0.5 * math.log(2 * math.pi * math.e)), 0.1)

    def test_invariant_to_particle_order(self):
        rng = np.random.default_rng(3)
        problem = quadratic_product_problem(2, 0.5)
        a, b = rng.standard_normal((50, 1)), rng.standard_normal((50, 1))
        state = BlockState.from_arrays([a, b])
        shuffled = BlockState.from_arrays([a[rng.permutation(50)],
                                           b[rng.permutation(50)]])
        self.assertEqual(
            evaluate_objective(problem, state, KdeConfig(),
                               np.random.default_rng(9)),
            evaluate_objective(problem, shuffled, KdeConfig(),
                               np.random.default_rng(9)))

    def test_dimension_mismatch(self):
        self.assertRaises(EnsembleError, evaluate_objective,
                          _linear_problem([2]),
                          BlockState.from_arrays([[[1.0]]]), KdeConfig())
