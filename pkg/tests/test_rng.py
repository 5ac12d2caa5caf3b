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

import numpy as np
from twisted.trial import unittest

from wpcg.rng import RunStreams, Stream, derive_seed, make_generator, \
    splitmix64


class TestSplitMix(unittest.TestCase):
    def test_reference_outputs(self):
        # published splitmix64 sequence for state 0
        state, first = splitmix64(0)
        _, second = splitmix64(state)
        self.assertEqual(first, 0xE220A8397B1DCDAF)
        self.assertEqual(second, 0x6E789E6AA1B965F4)

    def test_outputs_are_64_bit(self):
        state = (1 << 64) - 1
        for _ in range(100):
            state, out = splitmix64(state)
            self.assertTrue(0 <= out < 1 << 64)
            self.assertTrue(0 <= state < 1 << 64)


class TestDerivation(unittest.TestCase):
    def test_derivation_is_a_chain(self):
        _, master_out = splitmix64(42)
        _, expected = splitmix64(master_out ^ Stream.SCHEME)
        self.assertEqual(derive_seed(42, Stream.SCHEME), expected)
        _, expected2 = splitmix64(expected ^ 3)
        self.assertEqual(derive_seed(42, Stream.SCHEME, 3), expected2)

    def test_paths_give_distinct_seeds(self):
        seeds = {derive_seed(7, *path) for path in
                 [(), (Stream.SCHEME,), (Stream.DATA,), (Stream.BLOCK, 0),
                  (Stream.BLOCK, 1), (Stream.OBJECTIVE, 1, 0)]}
        self.assertEqual(len(seeds), 6)

    def test_master_seed_is_masked(self):
        self.assertEqual(derive_seed(1 << 64, Stream.INIT),
                         derive_seed(0, Stream.INIT))

    def test_generators_reproduce(self):
        a = make_generator(3, Stream.INIT).standard_normal(10)
        b = make_generator(3, Stream.INIT).standard_normal(10)
        c = make_generator(4, Stream.INIT).standard_normal(10)
        np.testing.assert_array_equal(a, b)
        self.assertFalse(np.array_equal(a, c))


class TestRunStreams(unittest.TestCase):
    def test_block_streams_are_independent_and_persistent(self):
        streams = RunStreams(11, 3)
        first = streams.block(0).random()
        self.assertNotEqual(first, streams.block(1).random())
        # a block stream keeps its position across calls
        self.assertNotEqual(first, streams.block(0).random())
        self.assertEqual(RunStreams(11, 3).block(0).random(), first)

    def test_diagnostic_streams_depend_only_on_k_and_j(self):
        a, b = RunStreams(5, 2), RunStreams(5, 2)
        a.block(0).random()
        self.assertEqual(a.objective(3).random(), b.objective(3).random())
        self.assertEqual(a.foc(3, 1).random(), b.foc(3, 1).random())
        self.assertNotEqual(a.first_variation(3, 0).random(),
                            a.first_variation(3, 1).random())
