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
Reference states for W2 tracking: analytic minimizers, truth point masses,
and long-run ensembles cached in HDF5 files.
"""
from __future__ import annotations

import enum
import hashlib
from os import PathLike
from pathlib import Path
from typing import Optional

import numpy as np
import tables
from twisted.logger import Logger

from .model import BlockState, ProblemSpec, ProblemSpecError, SchemeConfig
from .rng import Stream, derive_seed, make_generator
from .schedulers import DiagnosticsConfig, iterate_wpcg

__all__ = ['ReferencePolicy', 'build_reference', 'long_run_config',
           'long_run_key', 'long_run_reference', 'truth_reference']

log = Logger()

#: the long run uses this many times the iterations at this fraction of tau
LONG_RUN_FACTOR = 10


class ReferencePolicy(enum.Enum):
    ANALYTIC = 'analytic'
    LONG_RUN = 'long-run'
    TRUTH = 'truth'
    NONE = 'none'


def truth_reference(problem: ProblemSpec, count: int) -> BlockState:
    """Point masses at the generating parameter of a simulated dataset."""
    try:
        theta = problem.params['theta_star']
    except KeyError:
        raise ProblemSpecError(f'{problem} has no known true parameter.')
    return BlockState.from_arrays(
        [np.full((count, d), theta[j]) for j, d in enumerate(problem.dims)])


def long_run_config(config: SchemeConfig) -> SchemeConfig:
    return config._replace(
        tau=config.tau / LONG_RUN_FACTOR,
        iterations=config.iterations * LONG_RUN_FACTOR,
        seed=derive_seed(config.seed, Stream.REFERENCE),
    )


def long_run_key(problem: ProblemSpec,
                 config: SchemeConfig,
                 initial: BlockState) -> str:
    """SHA-256 over the problem signature, run settings and initial blocks."""
    h = hashlib.sha256()
    settings = (problem.signature, config.scheme.value, repr(config.tau),
                config.iterations, config.seed, config.solver.value,
                repr(config.fa), config.batch_M, config.n_grad,
                config.project)
    h.update(repr(settings).encode('utf8'))
    for block in initial.blocks:
        h.update(np.ascontiguousarray(block.points).tobytes())
    return h.hexdigest()


def _read_cache(path: Path, m: int) -> BlockState:
    with tables.open_file(str(path), mode='r') as h5:
        return BlockState.from_arrays(
            [h5.get_node(h5.root, f'block_{j + 1}').read()
             for j in range(m)])


def _write_cache(path: Path, key: str, state: BlockState) -> None:
    path.parent.mkdir(exist_ok=True, parents=True)
    partial = path.with_suffix('.partial')
    with tables.open_file(str(partial), mode='w',
                          title='WPCG Reference Ensemble') as h5:
        h5.root._v_attrs.key = key
        for j, block in enumerate(state.blocks):
            h5.create_array(h5.root, f'block_{j + 1}', block.points)
    partial.replace(path)


def long_run_reference(problem: ProblemSpec,
                       config: SchemeConfig,
                       initial: BlockState,
                       cache_dir: Optional[PathLike] = None) -> BlockState:
    """
    Runs the scheme for ten times the iterations at a tenth of the step size
    with diagnostics off and returns the final blocks.

    Parameters
    ----------
    problem
        The functional.
    config
        Settings of the run the reference is for.
    initial
        Starting blocks of that run.
    cache_dir
        When given, results are stored in and served from
        `<cache_dir>/reference-<key>.h5`.
    """
    long_config = long_run_config(config)
    key = long_run_key(problem, long_config, initial)
    path = Path(cache_dir) / f'reference-{key}.h5' \
        if cache_dir is not None else None
    if path is not None and path.exists():
        log.info('using cached reference {path}', path=str(path))
        return _read_cache(path, problem.m)

    log.info('computing long-run reference: {T} iterations at tau={tau}',
             T=long_config.iterations, tau=long_config.tau)
    state = initial
    for _, state in iterate_wpcg(problem, initial, long_config,
                                 diagnostics=DiagnosticsConfig(every=0)):
        pass
    if path is not None:
        _write_cache(path, key, state)
    return state


def build_reference(policy: ReferencePolicy,
                    problem: ProblemSpec,
                    config: SchemeConfig,
                    initial: BlockState,
                    cache_dir: Optional[PathLike] = None) \
        -> Optional[BlockState]:
    """
    Builds the reference blocks a run is tracked against.

    Raises
    ------
    ProblemSpecError
        If the policy is not available for the problem.
    """
    if policy is ReferencePolicy.NONE:
        return None
    elif policy is ReferencePolicy.ANALYTIC:
        if problem.analytic_reference is None:
            raise ProblemSpecError(f'{problem} has no analytic reference.')
        rng = make_generator(config.seed, Stream.REFERENCE)
        return problem.analytic_reference(initial.count, rng)
    elif policy is ReferencePolicy.TRUTH:
        return truth_reference(problem, initial.count)
    return long_run_reference(problem, config, initial, cache_dir)
