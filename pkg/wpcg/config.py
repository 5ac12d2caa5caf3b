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
Run descriptions: flat INI-style key-value files with dotted keys for
grouped settings, e.g.

    problem = quadratic
    scheme = parallel
    tau = 1.0
    quadratic.alpha = 0.5

A leading [run] section header is optional. Every key has a default except
`problem`; unknown keys are errors.
"""
from __future__ import annotations

import configparser
import math
from os import PathLike
from pathlib import Path
from typing import Any, Mapping, NamedTuple, Optional as Opt, Tuple

from schema import And, Optional, Or, Schema, SchemaError, Use

from .kde import KdeConfig
from .model import SchemeConfig, SchemeKind, SolverKind, WPCGError
from .schedulers import DiagnosticsConfig
from .steps import FaConfig

__all__ = ['ConfigError', 'RunConfig', 'PROBLEMS', 'parse_config',
           'load_config']

PROBLEMS = ('mfvi-synthetic', 'mfvi-csv', 'species', 'quadratic',
            'gaussian')

_SECTION = 'run'


class ConfigError(WPCGError):
    pass


def _boolean(text: Any) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    elif value in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f'not a boolean: {text!r}')


def _floats(text: Any) -> Tuple[float, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).split(',') if v.strip())


def _ints(text: Any) -> Tuple[int, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).split(',') if v.strip())


def _bandwidth(text: Any) -> KdeConfig:
    if isinstance(text, KdeConfig):
        return text
    value = str(text).strip().lower()
    if value == 'silverman':
        return KdeConfig.silverman()
    h = float(value)
    if not h > 0:
        raise ValueError(f'bandwidth must be positive, got {h}')
    return KdeConfig.fixed(h)


def _choice(*options: str) -> And:
    return And(Use(lambda s: str(s).strip().lower()), Or(*options),
               error=f'expected one of {", ".join(options)}')


_positive_int = And(Use(int), lambda v: v > 0,
                    error='expected a positive integer')
_non_negative_int = And(Use(int), lambda v: v >= 0,
                        error='expected a non-negative integer')
_positive_float = And(Use(float), lambda v: v > 0 and math.isfinite(v),
                      error='expected a positive number')
_float = And(Use(float), math.isfinite, error='expected a finite number')
_bool = Use(_boolean, error='expected true or false')
_positive_ints = And(Use(_ints), lambda v: len(v) > 0 and min(v) > 0,
                     error='expected comma-separated positive integers')
_floats_list = And(Use(_floats), lambda v: len(v) > 0,
                   error='expected comma-separated numbers')

_run_schema = Schema({
    'problem'                                     : _choice(*PROBLEMS),
    Optional('scheme', default='parallel')        : _choice(
        'parallel', 'sequential', 'random'),
    Optional('batch_m', default=None)             : _positive_int,
    Optional('tau', default=0.1)                  : _positive_float,
    Optional('iterations', default=100)           : _positive_int,
    Optional('particles', default=1000)           : _positive_int,
    Optional('seed', default=0)                   : _non_negative_int,
    Optional('solver', default='sde')             : _choice(
        'sde', 'fa', 'euclidean'),
    Optional('n_grad', default=None)              : _positive_int,
    Optional('n_mc', default=1)                   : _positive_int,
    Optional('workers', default=None)             : _positive_int,
    Optional('project', default=False)            : _bool,
    Optional('divergence_bound', default=1e10)    : _positive_float,
    Optional('reference', default='none')         : _choice(
        'analytic', 'long-run', 'truth', 'none'),
    Optional('reference.cache', default='.wpcg-cache'): And(str, len),
    Optional('output', default='wpcg-out')        : And(str, len),
    Optional('output.hdf5', default=False)        : _bool,
    Optional('output.wall_time', default=True)    : _bool,
    Optional('init.mean', default=0.0)            : _float,
    Optional('init.scale', default=3.0)           : _positive_float,
    Optional('kde.bandwidth',
             default=KdeConfig.silverman())       : Use(
        _bandwidth, error='expected silverman or a positive bandwidth'),
    Optional('fa.hidden_widths', default=(64, 64)): _positive_ints,
    Optional('fa.inner_iterations', default=300)  : _positive_int,
    Optional('fa.inner_step', default=1e-3)       : _positive_float,
    Optional('fa.reinit_each_step', default=False): _bool,
    Optional('diagnostics.every', default=1)      : _non_negative_int,
    Optional('diagnostics.objective', default=True): _bool,
    Optional('diagnostics.first_variation',
             default=True)                        : _bool,
    Optional('diagnostics.foc', default=True)     : _bool,
    Optional('mfvi.n', default=100)               : _positive_int,
    Optional('mfvi.data_seed', default=None)      : _non_negative_int,
    Optional('mfvi.theta_star',
             default=(-1.0, 1.0, 0.3, -0.3))      : _floats_list,
    Optional('mfvi.prior_variance', default=4.0)  : _positive_float,
    Optional('mfvi.path', default=None)           : And(str, len),
    Optional('mfvi.intercept', default=False)     : _bool,
    Optional('species.alpha', default=1.0)        : _positive_float,
    Optional('species.beta', default=1.0)         : And(
        Use(float), lambda v: v >= 0, error='expected a non-negative number'),
    Optional('species.super_quartic', default=False): _bool,
    Optional('species.kernel_sign',
             default='negative-quarter')          : _choice(
        'negative-quarter', 'positive-half'),
    Optional('quadratic.m', default=3)            : _positive_int,
    Optional('quadratic.alpha', default=0.5)      : And(
        Use(float), lambda v: 0 <= v < 1, error='expected 0 <= alpha < 1'),
    Optional('quadratic.x0', default=None)        : _floats_list,
    Optional('gaussian.dims', default=(1, 1))     : _positive_ints,
    Optional('gaussian.precisions', default=(1.0, 4.0)): And(
        Use(_floats), lambda v: len(v) > 0 and min(v) > 0,
        error='expected comma-separated positive precisions'),
})


class RunConfig(NamedTuple):
    """A validated run description."""
    #: the validated flat settings, defaults filled in
    settings: Mapping[str, Any]
    #: the key-value pairs as written, before validation
    raw: Mapping[str, str]

    @property
    def problem(self) -> str:
        return self.settings['problem']

    @property
    def output(self) -> Path:
        return Path(self.settings['output'])

    def overridden(self, key: str, value: Any) -> RunConfig:
        """A copy with one key replaced, validated again."""
        raw = dict(self.raw)
        raw[key] = str(value)
        return RunConfig.from_mapping(raw)

    def fa_config(self) -> FaConfig:
        s = self.settings
        return FaConfig(hidden_widths=tuple(s['fa.hidden_widths']),
                        inner_iterations=s['fa.inner_iterations'],
                        inner_step=s['fa.inner_step'],
                        kde=self.kde_config(),
                        reinit_each_step=s['fa.reinit_each_step'])

    def kde_config(self) -> KdeConfig:
        return self.settings['kde.bandwidth']

    def diagnostics_config(self) -> DiagnosticsConfig:
        s = self.settings
        return DiagnosticsConfig(every=s['diagnostics.every'],
                                 objective=s['diagnostics.objective'],
                                 first_variation=s[
                                     'diagnostics.first_variation'],
                                 foc=s['diagnostics.foc'],
                                 kde=self.kde_config())

    def scheme_config(self, seed: Opt[int] = None) -> SchemeConfig:
        s = self.settings
        return SchemeConfig(
            scheme=SchemeKind(s['scheme']),
            tau=s['tau'],
            iterations=s['iterations'],
            seed=s['seed'] if seed is None else seed,
            solver=SolverKind(s['solver']),
            fa=self.fa_config(),
            batch_M=s['batch_m'],
            n_grad=s['n_grad'],
            n_mc=s['n_mc'],
            workers=s['workers'],
            project=s['project'],
            divergence_bound=s['divergence_bound'],
        )

    @staticmethod
    def from_mapping(raw: Mapping[str, str]) -> RunConfig:
        """
        Validates flat key-value settings.

        Raises
        ------
        ConfigError
            On unknown keys, missing required keys or invalid values.
        """
        raw = {str(k).strip().lower(): v for k, v in raw.items()}
        try:
            settings = _run_schema.validate(dict(raw))
        except SchemaError as e:
            raise ConfigError(f'Invalid run configuration: {e.code}') from e
        if settings['problem'] == 'mfvi-csv' and settings['mfvi.path'] is None:
            raise ConfigError('Problem mfvi-csv requires mfvi.path.')
        return RunConfig(settings, raw)


def parse_config(text: str) -> RunConfig:
    """
    Parses the text of a run description.

    Raises
    ------
    ConfigError
        On syntax errors and anything RunConfig.from_mapping rejects.
    """
    parser = configparser.ConfigParser(interpolation=None,
                                       inline_comment_prefixes=('#', ';'))
    stripped = text.lstrip()
    if not stripped.startswith('['):
        text = f'[{_SECTION}]\n{text}'
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f'Malformed run configuration: {e}') from e
    sections = parser.sections()
    if sections != [_SECTION]:
        raise ConfigError(f'Expected a single [{_SECTION}] section, got '
                          f'{sections}.')
    return RunConfig.from_mapping(dict(parser.items(_SECTION)))


def load_config(path: PathLike) -> RunConfig:
    """
    Reads a run description from a file.

    Raises
    ------
    ConfigError
        If the file cannot be read or is invalid; the message names the
        path.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f'Cannot read configuration file {path}: '
                          f'{e.strerror}') from e
    try:
        return parse_config(text)
    except ConfigError as e:
        raise ConfigError(f'{path}: {e}') from e
