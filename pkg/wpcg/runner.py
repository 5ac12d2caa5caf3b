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
Run and sweep orchestration: builds problems, initial states and references
from a RunConfig, drives the scheduler and writes the output files.
"""
from __future__ import annotations

import math
from os import PathLike
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from twisted.logger import Logger

from .config import ConfigError, RunConfig
from .diagnostics import RateFit, RateFitError, rate_slope
from .model import BlockState, ProblemSpec, SchemeConfig
from .problems import KernelSign, SpeciesSystem, gaussian_mfvi_problem, \
    load_logistic_csv, mfvi_problem, quadratic_product_problem, \
    simulate_logistic, species_problem
from .recorder import FLOAT_FORMAT, RecordWriter
from .reference import ReferencePolicy, build_reference
from .rng import Stream, derive_seed, make_generator
from .schedulers import DivergenceError, RunRecord, iterate_wpcg, \
    step_size_guard

__all__ = ['RunOutcome', 'SweepRow', 'SWEEP_PARAMETERS', 'build_problem',
           'initial_state', 'execute_run', 'execute_sweep', 'trailing_slope']

log = Logger()

#: sweepable parameters -> configuration key, per problem where it differs
SWEEP_PARAMETERS = {
    'tau'             : {None: 'tau'},
    'alpha'           : {'species': 'species.alpha',
                         'quadratic': 'quadratic.alpha'},
    'beta'            : {'species': 'species.beta'},
    'inner_iterations': {None: 'fa.inner_iterations'},
}


class RunOutcome(NamedTuple):
    problem: ProblemSpec
    records: Tuple[RunRecord, ...]
    final: BlockState
    warnings: Tuple[str, ...]
    #: set when the run aborted
    divergence: Optional[DivergenceError] = None


class SweepRow(NamedTuple):
    value: float
    final_w2sq: float
    slope: float


def build_problem(cfg: RunConfig) -> ProblemSpec:
    s = cfg.settings
    name = cfg.problem
    if name == 'mfvi-synthetic':
        data_seed = s['mfvi.data_seed']
        if data_seed is None:
            data_seed = s['seed']
        data = simulate_logistic(s['mfvi.n'], s['mfvi.theta_star'],
                                 make_generator(data_seed, Stream.DATA),
                                 s['mfvi.prior_variance'])
        return mfvi_problem(data)
    elif name == 'mfvi-csv':
        return mfvi_problem(load_logistic_csv(s['mfvi.path'],
                                              s['mfvi.intercept'],
                                              s['mfvi.prior_variance']))
    elif name == 'species':
        return species_problem(SpeciesSystem(
            alpha=s['species.alpha'], beta=s['species.beta'],
            super_quartic=s['species.super_quartic'],
            kernel_sign=KernelSign(s['species.kernel_sign'])))
    elif name == 'quadratic':
        return quadratic_product_problem(s['quadratic.m'],
                                         s['quadratic.alpha'])
    return gaussian_mfvi_problem(s['gaussian.dims'], s['gaussian.precisions'])


def initial_state(cfg: RunConfig, problem: ProblemSpec) -> BlockState:
    """
    Gaussian initial blocks init.mean + init.scale * N(0, I); the quadratic
    family starts at quadratic.x0 (default all ones) instead of init.mean.
    """
    s = cfg.settings
    count = s['particles']
    rng = make_generator(s['seed'], Stream.INIT)
    centers: Sequence[float] = [s['init.mean']] * problem.m
    if cfg.problem == 'quadratic':
        centers = s['quadratic.x0'] or (1.0,) * problem.m
        if len(centers) != problem.m:
            raise ConfigError(f'quadratic.x0 has {len(centers)} entries for '
                              f'm = {problem.m}.')
    blocks = []
    for center, d in zip(centers, problem.dims):
        if count == 1 and cfg.problem == 'quadratic':
            blocks.append(np.full((1, d), center))
        else:
            blocks.append(center + s['init.scale']
                          * rng.standard_normal((count, d)))
    return BlockState.from_arrays(blocks)


def trailing_slope(records: Sequence[RunRecord], field: str) -> RateFit:
    """
    rate_slope over the records whose field is positive and finite; decays
    that reach exact zero are fitted up to that point.
    """
    usable = [r for r in records
              if math.isfinite(getattr(r, field)) and getattr(r, field) > 0]
    return rate_slope(usable, field)


def _summary(cfg: RunConfig, outcome: RunOutcome) -> str:
    lines = [f'problem: {outcome.problem.signature}',
             f'scheme: {cfg.settings["scheme"]}',
             f'solver: {cfg.settings["solver"]}',
             f'tau: {cfg.settings["tau"]!r}',
             f'seed: {cfg.settings["seed"]}',
             f'iterations completed: {len(outcome.records)} of '
             f'{cfg.settings["iterations"]}']
    if outcome.divergence is not None:
        lines.append(f'aborted: {outcome.divergence}')
    for w in outcome.warnings:
        lines.append(f'warning: {w}')

    lines.append('')
    lines.append(f'final state (k = {outcome.final.k}):')
    for j, block in enumerate(outcome.final.blocks):
        mean = ', '.join(f'{v:.6g}' for v in block.mean())
        var = ', '.join(f'{v:.6g}' for v in block.variance())
        lines.append(f'  block {j + 1}: mean ({mean}) variance ({var})')

    lines.append('')
    lines.append('rate fits (log value vs k):')
    for field in ('w2sq_total', 'objective'):
        try:
            fit = trailing_slope(outcome.records, field)
            lines.append(f'  {field}: slope {fit.slope:.6g} per iteration, '
                         f'R^2 {fit.r_squared:.4f}')
        except RateFitError as e:
            lines.append(f'  {field}: not available ({e})')
    return '\n'.join(lines) + '\n'


def execute_run(cfg: RunConfig,
                output: Optional[PathLike] = None) -> RunOutcome:
    """
    Executes one configured run, writing records.csv (and records.h5 when
    enabled) and summary.txt into the output directory. Records are flushed
    after every iteration, so an aborted run leaves the completed ones.

    Raises
    ------
    DivergenceError
        After the partial records and the summary have been written.
    """
    out = Path(output) if output is not None else cfg.output
    s = cfg.settings
    problem = build_problem(cfg)
    initial = initial_state(cfg, problem)
    config: SchemeConfig = cfg.scheme_config()
    warnings = tuple(step_size_guard(config, problem))
    reference = build_reference(ReferencePolicy(s['reference']), problem,
                                config, initial, s['reference.cache'])

    records: List[RunRecord] = []
    final = initial
    divergence = None
    with RecordWriter.create(out, problem.m, hdf5=s['output.hdf5'],
                             wall_time=s['output.wall_time']) as writer:
        try:
            for record, final in iterate_wpcg(problem, initial, config,
                                              reference,
                                              cfg.diagnostics_config()):
                records.append(record)
                writer.record(record)
                writer.flush()
        except DivergenceError as e:
            divergence = DivergenceError(e.k, e.reason, records)
            log.error('{error}', error=divergence)
        writer.write_state(final)

    outcome = RunOutcome(problem, tuple(records), final, warnings,
                         divergence)
    (out / 'summary.txt').write_text(_summary(cfg, outcome))
    log.info('wrote {n} records to {out}', n=len(records), out=str(out))
    if divergence is not None:
        raise divergence
    return outcome


def execute_sweep(cfg: RunConfig,
                  parameter: str,
                  values: Sequence[float],
                  output: Optional[PathLike] = None) -> List[SweepRow]:
    """
    Runs the configuration once per value of a parameter, each with a seed
    derived from the master seed and the value's position, into
    `<output>/sweep-<i>/`, and writes `<output>/sweep.csv` with the final
    W2^2 to the reference and its fitted log-rate per value.

    Raises
    ------
    ConfigError
        Unknown parameter, parameter not applicable to the problem, an
        empty value list or no reference to measure W2^2 against.
    """
    if not values:
        raise ConfigError('Sweep needs at least one value.')
    if cfg.settings['reference'] == 'none':
        raise ConfigError('Sweep needs a reference (analytic, long-run or '
                          'truth) for its final W2^2 column.')
    try:
        keys = SWEEP_PARAMETERS[parameter]
    except KeyError:
        raise ConfigError(f'Cannot sweep {parameter!r}; choose one of '
                          f'{", ".join(SWEEP_PARAMETERS)}.')
    key = keys.get(cfg.problem, keys.get(None))
    if key is None:
        raise ConfigError(f'Parameter {parameter!r} does not apply to '
                          f'problem {cfg.problem!r}.')

    out = Path(output) if output is not None else cfg.output
    master = cfg.settings['seed']
    if cfg.settings['mfvi.data_seed'] is None:
        # one synthetic dataset for every value
        cfg = cfg.overridden('mfvi.data_seed', master)
    rows: List[SweepRow] = []
    for i, value in enumerate(values):
        run_cfg = cfg.overridden(key, value) \
            .overridden('seed', derive_seed(master, Stream.SWEEP, i))
        log.info('sweep {parameter}={value} ({i} of {n})',
                 parameter=parameter, value=value, i=i + 1, n=len(values))
        try:
            records = execute_run(run_cfg, out / f'sweep-{i + 1}').records
        except DivergenceError as e:
            rows.append(SweepRow(float(value), math.inf, math.nan))
            log.warn('sweep value {value} diverged at iteration {k}',
                     value=value, k=e.k)
            continue
        final = records[-1].w2sq_total if records else math.nan
        try:
            slope = trailing_slope(records, 'w2sq_total').slope
        except RateFitError:
            slope = math.nan
        rows.append(SweepRow(float(value), final, slope))

    pd.DataFrame(rows, columns=SweepRow._fields).to_csv(
        out / 'sweep.csv', index=False, float_format=FLOAT_FORMAT,
        na_rep='nan', lineterminator='\n')
    return rows
