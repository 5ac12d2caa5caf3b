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

from pathlib import Path

from twisted.trial import unittest

from wpcg.config import ConfigError, load_config, parse_config
from wpcg.kde import KdeConfig
from wpcg.model import SchemeKind, SolverKind

_FULL = """
[run]
problem = quadratic
scheme = sequential   # Gauss-Seidel order
solver = euclidean
tau = 0.5
iterations = 20
particles = 1
seed = 42
kde.bandwidth = 0.3
fa.hidden_widths = 16, 8
quadratic.alpha = 0.25
quadratic.x0 = 1.0, -1.0, 2.0
diagnostics.every = 0
output.wall_time = false
"""


class TestParse(unittest.TestCase):
    def test_defaults(self):
        cfg = parse_config('problem = quadratic\n')
        self.assertEqual(cfg.problem, 'quadratic')
        s = cfg.settings
        self.assertEqual(s['scheme'], 'parallel')
        self.assertEqual(s['solver'], 'sde')
        self.assertEqual(s['tau'], 0.1)
        self.assertEqual(s['iterations'], 100)
        self.assertEqual(s['particles'], 1000)
        self.assertEqual(s['reference'], 'none')
        self.assertEqual(cfg.kde_config(), KdeConfig.silverman())
        self.assertIsNone(cfg.scheme_config().batch_M)
        self.assertEqual(cfg.scheme_config().divergence_bound, 1e10)

    def test_full(self):
        cfg = parse_config(_FULL)
        scheme = cfg.scheme_config()
        self.assertEqual(scheme.scheme, SchemeKind.SEQUENTIAL)
        self.assertEqual(scheme.solver, SolverKind.EUCLIDEAN)
        self.assertEqual((scheme.tau, scheme.iterations, scheme.seed),
                         (0.5, 20, 42))
        self.assertEqual(cfg.kde_config(), KdeConfig.fixed(0.3))
        self.assertEqual(cfg.fa_config().hidden_widths, (16, 8))
        self.assertEqual(cfg.settings['quadratic.x0'], (1.0, -1.0, 2.0))
        self.assertEqual(cfg.diagnostics_config().every, 0)
        self.assertFalse(cfg.settings['output.wall_time'])
        self.assertEqual(cfg.scheme_config(seed=7).seed, 7)

    def test_header_optional(self):
        self.assertEqual(parse_config('[run]\nproblem = species\n').settings,
                         parse_config('problem = species\n').settings)

    def test_rejected(self):
        for text in ('scheme = parallel\n',
                     'problem = quadratic\nstep = 0.1\n',
                     'problem = quadratic\ntau = -1\n',
                     'problem = quadratic\ntau = many\n',
                     'problem = quadratic\nscheme = diagonal\n',
                     'problem = quadratic\nquadratic.alpha = 1.0\n',
                     'problem = quadratic\nkde.bandwidth = 0\n',
                     'problem = quadratic\nproject = maybe\n',
                     'problem = mfvi-csv\n',
                     '[run]\nproblem = quadratic\n[other]\nx = 1\n',
                     'problem quadratic\n'):
            self.assertRaises(ConfigError, parse_config, text)

    def test_overridden(self):
        cfg = parse_config(_FULL)
        changed = cfg.overridden('quadratic.alpha', 0.75)
        self.assertEqual(changed.settings['quadratic.alpha'], 0.75)
        self.assertEqual(cfg.settings['quadratic.alpha'], 0.25)
        self.assertEqual(changed.settings['seed'], 42)
        self.assertRaises(ConfigError, cfg.overridden, 'tau', 0)


class TestLoad(unittest.TestCase):
    def test_load(self):
        path = Path(self.mktemp())
        path.write_text(_FULL)
        self.assertEqual(load_config(path).settings['seed'], 42)

    def test_missing_file_named(self):
        path = Path(self.mktemp())
        with self.assertRaises(ConfigError) as ctx:
            load_config(path)
        self.assertIn(str(path), str(ctx.exception))

    def test_invalid_file_named(self):
        path = Path(self.mktemp())
        path.write_text('problem = nonsense\n')
        with self.assertRaises(ConfigError) as ctx:
            load_config(path)
        self.assertIn(str(path), str(ctx.exception))
