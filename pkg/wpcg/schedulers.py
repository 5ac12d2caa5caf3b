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
Outer loops of the parallel (WPCG-P), sequential (WPCG-S) and random
(WPCG-R) block-coordinate schemes.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Iterator, List, NamedTuple, Optional, Sequence, \
    Tuple

import numpy as np
from twisted.logger import Logger

from .diagnostics import first_variation_variance, foc_residual
from .kde import BandwidthError, KdeConfig
from .model import BlockState, NonFiniteEnsembleError, ProblemSpec, \
    SchemeConfig, SchemeKind, WPCGError, project_ensemble, validate_problem
from .objective import evaluate_objective
from .rng import RunStreams
from .steps import BlockSolver, StepResult
from .transport import product_w2_squared, w2_distance

__all__ = ['DivergenceError', 'BatchSizeError', 'IterationPlan',
           'RunRecord', 'DiagnosticsConfig', 'default_batch_M',
           'resolve_batch_M', 'parallel_step_bound', 'step_size_guard',
           'plan_iteration', 'iterate_wpcg', 'run_wpcg']

log = Logger()

THREADS_ENV = 'WPCG_THREADS'


class DivergenceError(WPCGError):
    def __init__(self, k: int, reason: str,
                 records: Sequence[RunRecord] = ()):
        super(DivergenceError, self).__init__(
            f'Run diverged at iteration {k}: {reason}')
        self.k = k
        self.reason = reason
        self.records = tuple(records)


class BatchSizeError(WPCGError):
    pass


class IterationPlan(NamedTuple):
    scheme: SchemeKind
    #: block indices in update order
    indices: Tuple[int, ...]

    @property
    def uses_snapshot(self) -> bool:
        """All blocks are solved against the state at the iteration start."""
        return self.scheme is SchemeKind.PARALLEL


class RunRecord(NamedTuple):
    k: int
    objective: float
    #: per-block W2^2 to the reference, None without a reference
    w2sq_blocks: Optional[Tuple[float, ...]]
    w2sq_total: float
    fv_var: Tuple[float, ...]
    foc: Tuple[float, ...]
    wall_ms: float
    inner_loss: Tuple[float, ...] = ()


class DiagnosticsConfig(NamedTuple):
    #: evaluate objective / first variation / FOC every this many
    #: iterations; 0 disables them
    every: int = 1
    objective: bool = True
    first_variation: bool = True
    foc: bool = True
    kde: KdeConfig = KdeConfig()
    #: companion draws of the first-variation estimate; the scheme's
    #: n_grad when None
    n_grad: Optional[int] = None


def default_batch_M(m: int, L: float) -> int:
    """
    Number of random block updates per outer iteration, ceil(2 m ln(m L)).

    Raises
    ------
    BatchSizeError
        If m L <= 1, where the logarithm is not positive.
    """
    if m < 1:
        raise BatchSizeError(f'm must be positive, got {m}.')
    if L is None or m * L <= 1:
        raise BatchSizeError(f'Batch size needs m L > 1, got m={m}, L={L}.')
    return int(math.ceil(2.0 * m * math.log(m * L)))


def resolve_batch_M(config: SchemeConfig, problem: ProblemSpec) -> int:
    if config.batch_M is not None:
        return int(config.batch_M)
    return default_batch_M(problem.m, problem.potential.lipschitz_L)


def parallel_step_bound(m: int, L: float) -> float:
    """(m - 1/2) / (L (m - 1)^(3/2)); +inf for a single or decoupled block."""
    if m == 1 or L == 0:
        return math.inf
    return (m - 0.5) / (L * (m - 1) ** 1.5)


def step_size_guard(config: SchemeConfig, problem: ProblemSpec) -> List[str]:
    """
    Warnings for step sizes outside the range where the parallel scheme is
    known to converge. Sequential and random schemes admit any tau > 0.
    """
    if config.scheme is not SchemeKind.PARALLEL or problem.m == 1:
        return []
    L = problem.potential.lipschitz_L
    if L is None:
        return ['Lipschitz constant unknown; parallel step size '
                'not checked.']
    bound = parallel_step_bound(problem.m, L)
    if config.tau >= bound:
        return [f'tau = {config.tau:g} is not below the parallel-scheme '
                f'bound (m - 1/2)/(L (m - 1)^(3/2)) = {bound:.6g}; the '
                f'iteration may diverge.']
    return []


def plan_iteration(scheme: SchemeKind,
                   m: int,
                   batch_M: Optional[int],
                   rng: np.random.Generator) -> IterationPlan:
    if scheme is SchemeKind.RANDOM:
        indices = rng.integers(0, m, size=batch_M)
        return IterationPlan(scheme, tuple(int(j) for j in indices))
    return IterationPlan(scheme, tuple(range(m)))


def _worker_count(config: SchemeConfig) -> int:
    if config.workers is not None:
        return max(1, int(config.workers))
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _reference_distances(state: BlockState,
                         reference: Optional[BlockState]) \
        -> Tuple[Optional[Tuple[float, ...]], float]:
    if reference is None:
        return None, float('nan')
    per_block = tuple(w2_distance(b, r).value ** 2
                      for b, r in zip(state.blocks, reference.blocks))
    return per_block, product_w2_squared(per_block)


class _Runner:
    def __init__(self,
                 problem: ProblemSpec,
                 config: SchemeConfig,
                 reference: Optional[BlockState],
                 diagnostics: DiagnosticsConfig):
        self.problem = problem
        self.config = config
        self.reference = reference
        self.diagnostics = diagnostics
        self.streams = RunStreams(config.seed, problem.m)
        self.solver = BlockSolver.create(config)
        self.batch_M = resolve_batch_M(config, problem) \
            if config.scheme is SchemeKind.RANDOM else None

    def _solve(self, state: BlockState, j: int) -> StepResult:
        result = self.solver.solve(self.problem, state, j, self.config.tau,
                                   self.streams.block(j))
        if self.config.project:
            result = result._replace(ensemble=project_ensemble(
                self.problem, j, result.ensemble))
        return result

    def iterate(self, state: BlockState, executor) \
            -> Tuple[BlockState, Dict[int, Tuple[BlockState, BlockState]],
                     List[float]]:
        plan = plan_iteration(self.config.scheme, self.problem.m,
                              self.batch_M, self.streams.scheme)
        updates: Dict[int, Tuple[BlockState, BlockState]] = {}
        inner = [float('nan')] * self.problem.m

        if plan.uses_snapshot:
            snapshot = state
            if executor is not None:
                results = list(executor.map(
                    lambda j: self._solve(snapshot, j), plan.indices))
            else:
                results = [self._solve(snapshot, j) for j in plan.indices]
            for j, result in zip(plan.indices, results):
                state = state.with_block(j, result.ensemble)
                updates[j] = (snapshot,
                              snapshot.with_block(j, result.ensemble))
                inner[j] = result.inner_loss
        else:
            for j in plan.indices:
                result = self._solve(state, j)
                new_state = state.with_block(j, result.ensemble)
                updates[j] = (state, new_state)
                inner[j] = result.inner_loss
                state = new_state
        return state.advanced(), updates, inner

    def record(self,
               state: BlockState,
               updates: Dict[int, Tuple[BlockState, BlockState]],
               inner: List[float],
               wall_ms: float) -> RunRecord:
        k = state.k
        diag = self.diagnostics
        m = self.problem.m
        nan = float('nan')
        active = diag.every > 0 and k % diag.every == 0

        objective = nan
        fv_var = [nan] * m
        foc = [nan] * m
        if active and diag.objective:
            objective = self._guarded(lambda: evaluate_objective(
                self.problem, state, diag.kde, self.streams.objective(k),
                self.config.n_mc), 'objective')
        if active and diag.first_variation:
            n_grad = self.config.n_grad if diag.n_grad is None \
                else diag.n_grad
            for j in range(m):
                fv_var[j] = self._guarded(
                    lambda: first_variation_variance(
                        self.problem, state, j, diag.kde,
                        self.streams.first_variation(k, j), n_grad),
                    f'first variation of block {j}')
        if active and diag.foc:
            for j, (prev, new) in updates.items():
                foc[j] = self._guarded(
                    lambda: foc_residual(self.problem, prev, new, j,
                                         self.config.tau, diag.kde,
                                         self.streams.foc(k, j),
                                         self.config.n_grad).norm,
                    f'FOC residual of block {j}')

        w2sq_blocks, w2sq_total = _reference_distances(state, self.reference)
        return RunRecord(k, objective, w2sq_blocks, w2sq_total, tuple(fv_var),
                         tuple(foc), wall_ms, tuple(inner))

    @staticmethod
    def _guarded(fn, what: str) -> float:
        try:
            return float(fn())
        except BandwidthError as e:
            log.warn('{what} not available: {error}', what=what, error=e)
            return float('nan')


def iterate_wpcg(problem: ProblemSpec,
                 initial: BlockState,
                 config: SchemeConfig,
                 reference: Optional[BlockState] = None,
                 diagnostics: DiagnosticsConfig = DiagnosticsConfig()) \
        -> Iterator[Tuple[RunRecord, BlockState]]:
    """
    Runs the configured scheme, yielding one record and the new state per
    outer iteration.

    Parameters
    ----------
    problem
        The functional.
    initial
        Starting blocks; never modified.
    config
        Scheme, step size, budget, seed and solver.
    reference
        Optional reference blocks with the same dimensions and particle
        count, for W2 tracking.
    diagnostics
        Which per-iteration diagnostics to evaluate.

    Raises
    ------
    DivergenceError
        When an ensemble becomes non-finite or exceeds the divergence bound.
    """
    validate_problem(problem, config, initial)
    if reference is not None and (reference.dims != initial.dims or
                                  reference.count != initial.count):
        raise WPCGError(f'Reference {reference} does not match initial '
                        f'state {initial}.')
    for warning in step_size_guard(config, problem):
        log.warn('{text}', text=warning)

    runner = _Runner(problem, config, reference, diagnostics)
    workers = min(_worker_count(config), problem.m)
    executor = ThreadPoolExecutor(workers) \
        if config.scheme is SchemeKind.PARALLEL and workers > 1 else None

    log.info('starting {scheme} run of {problem}: tau={tau}, T={T}, '
             'solver={solver}, B={B}', scheme=config.scheme.value,
             problem=problem, tau=config.tau, T=config.iterations,
             solver=config.solver.value, B=initial.count)
    state = initial
    try:
        for k in range(1, config.iterations + 1):
            start = time.perf_counter()
            try:
                state, updates, inner = runner.iterate(state, executor)
            except NonFiniteEnsembleError:
                raise DivergenceError(k, 'non-finite particle coordinates')
            wall_ms = (time.perf_counter() - start) * 1e3
            if state.max_abs() > config.divergence_bound:
                raise DivergenceError(k, f'coordinates exceed '
                                         f'{config.divergence_bound:g}')

            record = runner.record(state, updates, inner, wall_ms)
            log.info('iteration {k}: objective={objective:.6g} '
                     'w2sq={w2sq:.6g} ({wall_ms:.1f} ms)', k=k,
                     objective=record.objective, w2sq=record.w2sq_total,
                     wall_ms=wall_ms)
            yield record, state
    finally:
        if executor is not None:
            executor.shutdown(wait=True)


def run_wpcg(problem: ProblemSpec,
             initial: BlockState,
             config: SchemeConfig,
             reference: Optional[BlockState] = None,
             diagnostics: DiagnosticsConfig = DiagnosticsConfig()) \
        -> Tuple[List[RunRecord], BlockState]:
    """
    Runs `iterate_wpcg` to completion.

    Returns
    -------
    records, final
        One record per outer iteration and the final state.

    Raises
    ------
    DivergenceError
        With the records completed before the abort attached.
    """
    records: List[RunRecord] = []
    final = initial
    try:
        for record, final in iterate_wpcg(problem, initial, config,
                                          reference, diagnostics):
            records.append(record)
    except DivergenceError as e:
        log.error('{error}', error=e)
        raise DivergenceError(e.k, e.reason, records) from e
    return records, final
