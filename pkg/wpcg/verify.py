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
Acceptance bundles behind `wpcg verify <suite>`. Every check returns a
CriterionResult; the sizes default to the documented scale and can be
reduced through keyword arguments.
"""
from __future__ import annotations

import itertools
import math
from typing import Callable, Dict, List, NamedTuple, Sequence, Tuple

import numpy as np
from scipy import stats

from .diagnostics import RateFitError
from .maps import TransportMapModel, map_forward, map_jacobian_logdet
from .model import BlockState, ProblemSpec, SchemeConfig, SchemeKind, \
    SolverKind
from .problems import KernelSign, SpeciesSystem, gaussian_mfvi_problem, \
    mfvi_problem, quadratic_divergence_threshold, \
    quadratic_iteration_matrix, quadratic_product_problem, \
    quadratic_spectral_radius, quadratic_sum_factor, simulate_logistic, \
    species_problem
from .reference import truth_reference
from .rng import Stream, make_generator
from .runner import trailing_slope
from .schedulers import DiagnosticsConfig, DivergenceError, \
    default_batch_M, iterate_wpcg, plan_iteration, run_wpcg
from .steps import FaConfig
from .transport import product_w2_squared, w2_1d, w2_assignment

__all__ = ['CriterionResult', 'SUITES', 'run_suite',
           'finite_difference_gradient_error', 'logdet_error',
           'check_euclidean_oracle', 'check_divergence_threshold',
           'check_geometric_rate', 'check_random_covering',
           'check_exact_assignment', 'check_tensorization',
           'check_gaussian_oracle', 'check_fa_bias', 'check_inexactness',
           'check_logistic_plateau', 'species_first_variation_trace',
           'decay_verdict', 'check_first_variation_decay',
           'check_gradient_hygiene']

_NO_DIAGNOSTICS = DiagnosticsConfig(every=0)


class CriterionResult(NamedTuple):
    name: str
    passed: bool
    detail: str

    def __str__(self) -> str:
        return f'{"PASS" if self.passed else "FAIL"} {self.name}: ' \
               f'{self.detail}'


def _point_masses(values: Sequence[float]) -> BlockState:
    return BlockState.from_arrays([np.full((1, 1), v) for v in values])


# --- euclidean ---------------------------------------------------------------

def check_euclidean_oracle(m: int = 3, alpha: float = 0.5, tau: float = 1.0,
                           steps: int = 100, seed: int = 0) \
        -> CriterionResult:
    """Parallel iterates against the dense matrix iteration."""
    problem = quadratic_product_problem(m, alpha)
    x = make_generator(seed, Stream.INIT).standard_normal(m)
    s0 = float(x.sum())
    matrix = quadratic_iteration_matrix(m, alpha, tau)
    factor = quadratic_sum_factor(m, alpha, tau)
    config = SchemeConfig(SchemeKind.PARALLEL, tau, steps, seed,
                          SolverKind.EUCLIDEAN)
    worst = worst_sum = 0.0
    for k, (_, state) in enumerate(
            iterate_wpcg(problem, _point_masses(x), config,
                         diagnostics=_NO_DIAGNOSTICS), start=1):
        x = matrix @ x
        iterate = state.joint()[0]
        worst = max(worst, float(np.max(np.abs(iterate - x))))
        worst_sum = max(worst_sum, abs(float(iterate.sum())
                                       - factor ** k * s0))
    passed = worst <= 1e-12 and worst_sum <= 1e-12
    return CriterionResult('euclidean-oracle', passed,
                           f'max deviation {worst:.3g}, sum deviation '
                           f'{worst_sum:.3g} over {steps} steps')


def check_divergence_threshold(m: int = 3, alpha: float = 0.9,
                               stable_tau: float = 2.4,
                               unstable_tau: float = 2.6,
                               steps: int = 2000) -> CriterionResult:
    """The parallel scheme converges below the threshold and blows up above."""
    problem = quadratic_product_problem(m, alpha)
    initial = _point_masses(np.ones(m))
    outcome = {}
    for tau in (stable_tau, unstable_tau):
        config = SchemeConfig(SchemeKind.PARALLEL, tau, steps,
                              solver=SolverKind.EUCLIDEAN,
                              divergence_bound=1e6)
        try:
            _, final = run_wpcg(problem, initial, config,
                                diagnostics=_NO_DIAGNOSTICS)
            outcome[tau] = float(np.linalg.norm(final.joint()))
        except DivergenceError as e:
            outcome[tau] = e
    stable, unstable = outcome[stable_tau], outcome[unstable_tau]
    passed = not isinstance(stable, DivergenceError) and stable < 1e-6 \
        and isinstance(unstable, DivergenceError)
    threshold = quadratic_divergence_threshold(m, alpha)
    return CriterionResult('divergence-threshold', passed,
                           f'threshold {threshold:.4g}; tau={stable_tau}: '
                           f'{stable}; tau={unstable_tau}: {unstable}')


def check_geometric_rate(m: int = 3, alpha: float = 0.5, tau: float = 1.0,
                         steps: int = 100, seed: int = 0) -> CriterionResult:
    """Fitted log-rate of |x^k|^2 against twice the log spectral radius."""
    problem = quadratic_product_problem(m, alpha)
    x0 = make_generator(seed, Stream.INIT).standard_normal(m)
    config = SchemeConfig(SchemeKind.PARALLEL, tau, steps, seed,
                          SolverKind.EUCLIDEAN)
    records, _ = run_wpcg(problem, _point_masses(x0), config,
                          reference=_point_masses(np.zeros(m)),
                          diagnostics=_NO_DIAGNOSTICS)
    expected = 2.0 * math.log(quadratic_spectral_radius(m, alpha, tau))
    try:
        slope = trailing_slope(records, 'w2sq_total').slope
    except RateFitError as e:
        return CriterionResult('geometric-rate', False, str(e))
    return CriterionResult('geometric-rate', abs(slope - expected) <= 1e-6,
                           f'slope {slope:.9g}, expected {expected:.9g}')


def check_random_covering(m: int = 3, L: float = 2.0,
                          iterations: int = 2000,
                          seed: int = 0) -> CriterionResult:
    """
    Frequency of random-scheme iterations that skip some block, tested
    against 2 / (m L^2) at 99% confidence.
    """
    batch = default_batch_M(m, L)
    rng = make_generator(seed, Stream.SCHEME)
    skipped = sum(
        len(set(plan_iteration(SchemeKind.RANDOM, m, batch, rng).indices)) < m
        for _ in range(iterations))
    bound = 2.0 / (m * L ** 2)
    p_value = stats.binomtest(skipped, iterations, bound,
                              alternative='greater').pvalue
    return CriterionResult('random-covering', p_value >= 0.01,
                           f'M={batch}, {skipped}/{iterations} iterations '
                           f'skipped a block (bound {bound:.4g}, '
                           f'p={p_value:.3g})')


# --- ot ----------------------------------------------------------------------

def check_exact_assignment(instances: int = 200, max_count: int = 7,
                           max_dim: int = 3, seed: int = 0) \
        -> CriterionResult:
    """Assignment W2 against exhaustive permutation search."""
    rng = make_generator(seed, Stream.REFERENCE)
    worst = worst_1d = 0.0
    for _ in range(instances):
        count = int(rng.integers(1, max_count + 1))
        dim = int(rng.integers(1, max_dim + 1))
        a = rng.standard_normal((count, dim))
        b = rng.standard_normal((count, dim))
        cost = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
        brute = min(cost[np.arange(count), list(p)].sum()
                    for p in itertools.permutations(range(count))) / count
        value, _ = w2_assignment(a, b)
        worst = max(worst, abs(value ** 2 - brute))
        if dim == 1:
            worst_1d = max(worst_1d, abs(w2_1d(a, b) - value))
    return CriterionResult('exact-assignment',
                           worst <= 1e-12 and worst_1d <= 1e-12,
                           f'max |W2^2 - brute force| {worst:.3g}, max '
                           f'|w2_1d - assignment| {worst_1d:.3g}')


def check_tensorization(cases: int = 50, seed: int = 0) -> CriterionResult:
    """
    W2^2 between products of empirical measures against the sum of the
    blockwise W2^2.
    """
    rng = make_generator(seed, Stream.REFERENCE, 1)
    worst = 0.0
    for _ in range(cases):
        m = int(rng.integers(2, 4))
        count = int(rng.integers(2, 5 if m == 2 else 4))
        dims = rng.integers(1, 3, size=m)
        a = [rng.standard_normal((count, d)) for d in dims]
        b = [rng.standard_normal((count, d)) for d in dims]
        grid = list(itertools.product(range(count), repeat=m))
        joint_a = np.array([np.concatenate([a[j][i] for j, i in
                                            enumerate(idx)]) for idx in grid])
        joint_b = np.array([np.concatenate([b[j][i] for j, i in
                                            enumerate(idx)]) for idx in grid])
        joint, _ = w2_assignment(joint_a, joint_b)
        blocks = product_w2_squared([w2_assignment(x, y)[0] ** 2
                                     for x, y in zip(a, b)])
        worst = max(worst, abs(joint ** 2 - blocks))
    return CriterionResult('tensorization', worst <= 1e-9,
                           f'max |joint - sum of blocks| {worst:.3g}')


# --- gaussian ----------------------------------------------------------------

def _gaussian_start(problem: ProblemSpec, count: int, scale: float,
                    seed: int) -> BlockState:
    rng = make_generator(seed, Stream.INIT)
    return BlockState.from_arrays([scale * rng.standard_normal((count, d))
                                   for d in problem.dims])


def check_gaussian_oracle(precisions: Sequence[float] = (1.0, 4.0),
                          count: int = 2000, tau: float = 0.005,
                          iterations: int = 20000, seed: int = 0,
                          tolerance: float = 0.1,
                          w2_target: float = 0.02) -> CriterionResult:
    """Sequential SDE run against the analytic Gaussian minimizer."""
    problem = gaussian_mfvi_problem([1] * len(precisions), precisions)
    initial = _gaussian_start(problem, count, 3.0, seed)
    reference = problem.analytic_reference(
        count, make_generator(seed, Stream.REFERENCE))
    config = SchemeConfig(SchemeKind.SEQUENTIAL, tau, iterations, seed,
                          SolverKind.SDE)
    records, final = run_wpcg(problem, initial, config, reference,
                              _NO_DIAGNOSTICS)
    variances = [float(b.variance()[0]) for b in final.blocks]
    targets = [1.0 / p for p in precisions]
    var_ok = all(abs(v - t) <= tolerance * t
                 for v, t in zip(variances, targets))
    slope = trailing_slope(records, 'w2sq_total').slope
    final_w2 = records[-1].w2sq_total
    passed = var_ok and final_w2 < w2_target and slope < 0
    return CriterionResult('gaussian-oracle', passed,
                           f'variances {np.round(variances, 4).tolist()} vs '
                           f'{targets}, final W2^2 {final_w2:.4g}, slope '
                           f'{slope:.4g}')


def _tail_variance(problem: ProblemSpec, initial: BlockState,
                   config: SchemeConfig, window: int) -> float:
    tail = []
    for record, state in iterate_wpcg(problem, initial, config,
                                      diagnostics=_NO_DIAGNOSTICS):
        if record.k > config.iterations - window:
            tail.append(float(state.blocks[0].variance()[0]))
    return float(np.mean(tail))


def check_fa_bias(seeds: int = 5, count: int = 1000, tau: float = 0.2,
                  iterations: int = 60, window: int = 10,
                  fa: FaConfig = FaConfig(hidden_widths=(32, 32),
                                          inner_iterations=200,
                                          inner_step=5e-3)) \
        -> CriterionResult:
    """
    Stationary variance error of the FA and SDE solvers on N(0, 1) at a
    coarse step, compared seed by seed.
    """
    problem = gaussian_mfvi_problem([1], [1.0])
    wins = 0
    errors = []
    for seed in range(seeds):
        initial = _gaussian_start(problem, count, 3.0, seed)
        base = SchemeConfig(SchemeKind.SEQUENTIAL, tau, iterations, seed,
                            SolverKind.SDE)
        sde = abs(_tail_variance(problem, initial, base, window) - 1.0)
        fa_err = abs(_tail_variance(
            problem, initial, base._replace(solver=SolverKind.FA, fa=fa),
            window) - 1.0)
        errors.append((round(fa_err, 4), round(sde, 4)))
        wins += fa_err < sde
    return CriterionResult('fa-vs-sde-bias', wins > seeds / 2,
                           f'FA closer on {wins}/{seeds} seeds; '
                           f'(FA, SDE) variance errors {errors}')


def check_inexactness(budgets: Sequence[int] = (5, 50, 500),
                      seeds: int = 3, count: int = 300, tau: float = 0.2,
                      iterations: int = 8,
                      hidden_widths: Sequence[int] = (),
                      inner_step: float = 1e-3) -> CriterionResult:
    """
    Final FOC residual and W2^2 to the minimizer are non-increasing in the
    inner iteration budget of the FA solver, by majority over seeds.

    The default map class is affine, which contains the proximal map of a
    Gaussian block. The run stops short of the stationary state, so the
    budgets differ by their per-step progress.
    """
    problem = gaussian_mfvi_problem([1], [1.0])
    diagnostics = DiagnosticsConfig(objective=False, first_variation=False)
    votes = 0
    rows = []
    for seed in range(seeds):
        initial = _gaussian_start(problem, count, 3.0, seed)
        reference = problem.analytic_reference(
            count, make_generator(seed, Stream.REFERENCE))
        foc, w2 = [], []
        for budget in budgets:
            fa = FaConfig(hidden_widths=tuple(hidden_widths),
                          inner_iterations=budget, inner_step=inner_step)
            config = SchemeConfig(SchemeKind.SEQUENTIAL, tau, iterations,
                                  seed, SolverKind.FA, fa)
            records, _ = run_wpcg(problem, initial, config, reference,
                                  diagnostics)
            foc.append(records[-1].foc[0])
            w2.append(records[-1].w2sq_total)
        monotone = all(x >= y for x, y in zip(foc, foc[1:])) and \
            all(x >= y for x, y in zip(w2, w2[1:]))
        votes += monotone
        rows.append((np.round(foc, 4).tolist(), np.round(w2, 4).tolist()))
    return CriterionResult('inexactness-ordering', votes > seeds / 2,
                           f'monotone on {votes}/{seeds} seeds; '
                           f'(foc, W2^2) per budget {rows}')


def check_logistic_plateau(n: int = 100, count: int = 1000,
                           tau: float = 0.01, iterations: int = 400,
                           n_grad: int = 10, seed: int = 0,
                           drop: float = 0.05,
                           flatness: float = 0.1) -> CriterionResult:
    """
    Sequential SDE run on simulated logistic data, tracking W2^2 to the
    point mass at the generating parameter. It must fall below `drop` times
    its first value and then level off: the mean over the last quarter of
    the run stays within a relative `flatness` of the third quarter's.
    """
    data = simulate_logistic(n, (-1.0, 1.0, 0.3, -0.3),
                             make_generator(seed, Stream.DATA))
    problem = mfvi_problem(data)
    initial = _gaussian_start(problem, count, 3.0, seed)
    config = SchemeConfig(SchemeKind.SEQUENTIAL, tau, iterations, seed,
                          SolverKind.SDE, n_grad=n_grad)
    records, _ = run_wpcg(problem, initial, config,
                          truth_reference(problem, count), _NO_DIAGNOSTICS)
    w2 = np.array([r.w2sq_total for r in records])
    quarter = max(1, len(w2) // 4)
    third = float(w2[-2 * quarter:-quarter].mean())
    last = float(w2[-quarter:].mean())
    fell = last < drop * w2[0]
    level = abs(last - third) <= flatness * third
    return CriterionResult('logistic-plateau', fell and level,
                           f'W2^2 to theta* {w2[0]:.4g} -> {last:.4g}; '
                           f'third-quarter mean {third:.4g}')


# --- species-smoke -----------------------------------------------------------

def species_first_variation_trace(count: int = 400, tau: float = 0.1,
                                  iterations: int = 60, seed: int = 0,
                                  n_grad: int = 16,
                                  fa: FaConfig = FaConfig(
                                      hidden_widths=(32, 32),
                                      inner_iterations=100,
                                      inner_step=5e-3)) -> np.ndarray:
    """
    First-variation variance of every species per iteration (iterations x
    3) for the parallel FA scheme on the species system with alpha = beta
    = 1. The first variation is estimated with B companion draws, the
    solver with `n_grad`.
    """
    problem = species_problem(SpeciesSystem(alpha=1.0, beta=1.0))
    initial = _gaussian_start(problem, count, 3.0, seed)
    config = SchemeConfig(SchemeKind.PARALLEL, tau, iterations, seed,
                          SolverKind.FA, fa, n_grad=n_grad, workers=1)
    diagnostics = DiagnosticsConfig(objective=False, foc=False,
                                    n_grad=count)
    records, _ = run_wpcg(problem, initial, config, diagnostics=diagnostics)
    return np.array([r.fv_var for r in records])


def decay_verdict(trace: np.ndarray, ratio: float = 0.25, window: int = 5,
                  slack: float = 0.05) -> Tuple[bool, bool]:
    """
    Whether every column of `trace` ends below `ratio` times its first
    value, and whether its moving average over `window` iterations never
    rises by more than a relative `slack` from one iteration to the next.
    """
    trace = np.atleast_2d(np.asarray(trace, dtype=float).T).T
    final_ok = bool(np.all(trace[-1] < ratio * trace[0]))
    kernel = np.ones(window) / window
    trend_ok = True
    for column in trace.T:
        smooth = np.convolve(column, kernel, mode='valid')
        trend_ok &= bool(np.all(smooth[1:] <= smooth[:-1] * (1.0 + slack)))
    return final_ok, trend_ok


def check_first_variation_decay(count: int = 400, tau: float = 0.1,
                                iterations: int = 60, seed: int = 0,
                                n_grad: int = 16,
                                fa: FaConfig = FaConfig(
                                    hidden_widths=(32, 32),
                                    inner_iterations=100,
                                    inner_step=5e-3),
                                ratio: float = 0.25,
                                slack: float = 0.05) -> CriterionResult:
    """
    First-variation variance of every species at the last iteration against
    the first, and its smoothed trend (window 5, relative slack).
    """
    fv = species_first_variation_trace(count, tau, iterations, seed, n_grad,
                                       fa)
    final_ok, trend_ok = decay_verdict(fv, ratio, 5, slack)
    return CriterionResult('first-variation-decay', final_ok and trend_ok,
                           f'first {np.round(fv[0], 4).tolist()}, last '
                           f'{np.round(fv[-1], 4).tolist()}, smoothed trend '
                           f'{"non-increasing" if trend_ok else "increasing"}')


def finite_difference_gradient_error(problem: ProblemSpec,
                                     rng: np.random.Generator,
                                     points: int = 20,
                                     scale: float = 2.0,
                                     eps: float = 1e-5) -> float:
    """
    Largest relative deviation |g - g_fd| / max(1, |g|) between every block
    gradient and central finite differences of the potential.
    """
    x = scale * rng.standard_normal((points, problem.total_dim))
    worst = 0.0
    for j in range(problem.m):
        sl = problem.block_slice(j)
        grad = np.asarray(problem.potential.block_gradient(j, x))
        fd = np.empty_like(grad)
        for c in range(sl.stop - sl.start):
            step = np.zeros(problem.total_dim)
            step[sl.start + c] = eps
            fd[:, c] = (problem.potential.value(x + step)
                        - problem.potential.value(x - step)) / (2.0 * eps)
        err = np.linalg.norm(grad - fd, axis=1) / \
            np.maximum(1.0, np.linalg.norm(grad, axis=1))
        worst = max(worst, float(err.max()))
    return worst


def logdet_error(model: TransportMapModel, x: np.ndarray,
                 eps: float = 1e-6) -> float:
    """
    Relative deviation between exp(log|det|) * sign and the determinant of
    a central finite-difference Jacobian.
    """
    d = model.dim
    jac = np.empty((d, d))
    for c in range(d):
        step = np.zeros(d)
        step[c] = eps
        jac[:, c] = (map_forward(model, x + step)
                     - map_forward(model, x - step)) / (2.0 * eps)
    logdet, sign = map_jacobian_logdet(model, x)
    det = sign * math.exp(logdet)
    return abs(np.linalg.det(jac) - det) / max(abs(det), 1e-12)


def _random_model(rng: np.random.Generator) -> TransportMapModel:
    d = int(rng.integers(1, 5))
    sizes = [d] + [int(w) for w in rng.integers(2, 9, size=2)] + [d]
    weights = [0.3 * rng.standard_normal((o, i))
               for i, o in zip(sizes[:-1], sizes[1:])]
    biases = [0.3 * rng.standard_normal(o) for o in sizes[1:]]
    return TransportMapModel.from_arrays(weights, biases)


def check_gradient_hygiene(points: int = 20, models: int = 20,
                           seed: int = 0) -> CriterionResult:
    rng = make_generator(seed, Stream.REFERENCE, 2)
    data = simulate_logistic(50, (-1.0, 1.0, 0.3, -0.3), rng)
    problems = {
        'mfvi': mfvi_problem(data),
        'species': species_problem(),
        'species-positive-half': species_problem(
            SpeciesSystem(kernel_sign=KernelSign.POSITIVE_HALF)),
        'species-quartic': species_problem(SpeciesSystem(super_quartic=True)),
        'quadratic': quadratic_product_problem(3, 0.5),
        'gaussian': gaussian_mfvi_problem([1, 2], [1.0, 4.0]),
    }
    grad_errors = {name: finite_difference_gradient_error(p, rng, points)
                   for name, p in problems.items()}
    det_worst = 0.0
    for _ in range(models):
        model = _random_model(rng)
        x = rng.standard_normal(model.dim)
        det_worst = max(det_worst, logdet_error(model, x))
    passed = max(grad_errors.values()) <= 1e-6 and det_worst <= 1e-3
    worst = max(grad_errors, key=grad_errors.get)
    return CriterionResult('gradient-hygiene', passed,
                           f'worst gradient error {grad_errors[worst]:.3g} '
                           f'({worst}), worst log-det error {det_worst:.3g}')


#: suite name -> checks, in report order
SUITES: Dict[str, Sequence[Callable[[], CriterionResult]]] = {
    'euclidean'    : (check_euclidean_oracle, check_divergence_threshold,
                      check_geometric_rate, check_random_covering),
    'ot'           : (check_exact_assignment, check_tensorization),
    'gaussian'     : (check_gaussian_oracle, check_fa_bias,
                      check_inexactness, check_logistic_plateau),
    'species-smoke': (check_first_variation_decay, check_gradient_hygiene),
}


def run_suite(name: str) -> List[CriterionResult]:
    """
    Runs every check of a suite.

    Raises
    ------
    KeyError
        For an unknown suite name.
    """
    return [check() for check in SUITES[name]]
