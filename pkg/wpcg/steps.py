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
Solvers for the blockwise Wasserstein proximal subproblem

    argmin_rho V(rho, rho_{-j}) + H_j(rho) + W_j(rho)
               + W2^2(rho, rho_j) / (2 tau)

by an explicit Langevin particle step (SDE), by fitting a residual transport
map (FA), or exactly for the registered Euclidean quadratic.
"""
from __future__ import annotations

import abc
import copy
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np
import torch
from twisted.logger import Logger

from .kde import KdeConfig, bandwidth, kde_log_density
from .maps import TransportMapModel
from .marginal import draw_companions, interaction_drift, \
    interaction_energy, marginal_gradient, marginal_potential
from .model import BlockState, EntropyKind, EntropySpec, ParticleEnsemble, \
    ProblemSpec, ProblemSpecError, SchemeConfig, SolverCompatibilityError, \
    SolverKind, WPCGError

__all__ = ['NonInjectiveMapError', 'FaConfig', 'FaStepResult', 'StepResult',
           'sde_block_step', 'fa_block_step', 'euclidean_prox_step',
           'BlockSolver', 'SdeSolver', 'FaSolver', 'EuclideanSolver']

log = Logger()


class NonInjectiveMapError(WPCGError):
    pass


class FaConfig(NamedTuple):
    hidden_widths: Tuple[int, ...] = (64, 64)
    inner_iterations: int = 300
    #: initial Adam step
    inner_step: float = 1e-3
    kde: KdeConfig = KdeConfig()
    #: fresh random hidden layers every outer step instead of warm starts
    reinit_each_step: bool = False
    #: halvings of the inner step after a non-injective map
    max_retries: int = 5
    #: cosine-anneal the inner step to zero over the budget
    anneal: bool = True


class FaStepResult(NamedTuple):
    ensemble: ParticleEnsemble
    model: TransportMapModel
    inner_loss: float


class StepResult(NamedTuple):
    ensemble: ParticleEnsemble
    inner_loss: float = float('nan')


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ProblemSpecError(f'Step size must be positive, got {tau}.')


def sde_block_step(problem: ProblemSpec,
                   state: BlockState,
                   j: int,
                   tau: float,
                   rng: np.random.Generator,
                   n_grad: Optional[int] = None) -> ParticleEnsemble:
    """
    One explicit Euler-Maruyama step of the mean-field Langevin dynamics of
    block j against the other blocks of `state`.

    Parameters
    ----------
    problem
        The functional; block j must use negative self-entropy or none.
    state
        Current blocks; only block j moves.
    j
        Block index.
    tau
        Step size.
    rng
        Stream for companion draws and the Gaussian noise.
    n_grad
        Companion draws of the marginal-gradient estimator (B when None).

    Returns
    -------
    ensemble
        X_b - tau (grad V_j + interaction drift) + sqrt(2 c tau) eta_b.
    """
    _check_tau(tau)
    entropy = problem.entropies[j]
    if entropy.kind is EntropyKind.POWER:
        raise SolverCompatibilityError(
            f'SDE requires negative self-entropy (or no internal energy); '
            f'block {j} uses a power entropy.')

    x = state.blocks[j].points
    companions = draw_companions(problem, state, j, n_grad, rng)
    drift = marginal_gradient(problem, j, x, companions) + \
        interaction_drift(problem.interactions[j], x)
    moved = x - tau * drift
    if entropy.kind is EntropyKind.NEG_SELF_ENTROPY and \
            entropy.coefficient > 0:
        moved = moved + np.sqrt(2.0 * entropy.coefficient * tau) * \
            rng.standard_normal(x.shape)
    return ParticleEnsemble(moved)


def euclidean_prox_step(problem: ProblemSpec,
                        state: BlockState,
                        j: int,
                        tau: float) -> ParticleEnsemble:
    """
    Exact proximal step of V(x) = (1-a)/2 |x|^2 + a/2 (x_1+...+x_m)^2 on
    point masses: x_j = (x_j - a tau s_{-j}) / (1 + tau).
    """
    _check_tau(tau)
    if problem.closed_form is None:
        raise SolverCompatibilityError(
            f'Problem {problem.name!r} is not registered for the closed-form '
            f'Euclidean step.')
    if state.count != 1:
        raise SolverCompatibilityError(
            f'Closed-form Euclidean step needs B = 1, got B = {state.count}.')
    x = state.joint()[0]
    s_minus = float(x.sum() - x[j])
    alpha = problem.closed_form.alpha
    return ParticleEnsemble([(x[j] - alpha * tau * s_minus) / (1.0 + tau)])


def _entropy_on(entropy: EntropySpec) -> bool:
    return entropy.active and entropy.coefficient != 0


def _kde_draws(x: np.ndarray,
               entropy: EntropySpec,
               kde: KdeConfig,
               h: float,
               rng: np.random.Generator) \
        -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    """
    Points drawn from the kernel density estimate of the input ensemble,
    one around every particle, and for the power entropy the log estimate
    at those points.
    """
    z = x + h * rng.standard_normal(x.shape)
    log_rho = None
    if entropy.kind is EntropyKind.POWER:
        log_rho = torch.from_numpy(kde_log_density(x, kde, z, h))
    return torch.from_numpy(z), log_rho


def _entropy_term(model: TransportMapModel,
                  z: torch.Tensor,
                  entropy: EntropySpec,
                  log_rho: Optional[torch.Tensor]) -> torch.Tensor:
    if not _entropy_on(entropy):
        return torch.zeros((), dtype=z.dtype)
    sign, logabsdet = torch.linalg.slogdet(model.jacobian(z))
    if bool((sign <= 0).any()):
        raise NonInjectiveMapError('Map Jacobian determinant is not '
                                   'positive at every evaluation point.')
    if entropy.kind is EntropyKind.NEG_SELF_ENTROPY:
        return -entropy.coefficient * logabsdet.mean()
    n = entropy.exponent
    return entropy.coefficient * \
        torch.exp((n - 1) * (log_rho - logabsdet)).mean()


def fa_block_step(problem: ProblemSpec,
                  state: BlockState,
                  j: int,
                  tau: float,
                  fa: FaConfig,
                  rng: np.random.Generator,
                  model: Optional[TransportMapModel] = None,
                  n_grad: Optional[int] = None) -> FaStepResult:
    """
    Solves the block-j subproblem over residual maps T by minimizing

        (1/B) sum_b V_j(T(X_b)) + entropy term
            + (1/B^2) sum_b sum_b' W_j(T(X_b), T(X_b'))
            + (1/(2 B tau)) sum_b |T(X_b) - X_b|^2

    where the entropy term is -(1/B) sum_b log|det grad T(Z_b)| for negative
    self-entropy and (1/B) sum_b [rho_kde(Z_b) / |det grad T(Z_b)|]^(n-1)
    for the power entropy. rho_kde is the kernel density estimate of the
    input ensemble and the Z_b are fresh draws from it at every inner
    iteration, Z_b = X_b + h eps_b with h the estimate's bandwidth.

    The potential and interaction terms enter the loss through their
    particle gradients (evaluated with the problem's numpy callables), so
    only the entropy and proximity terms are differentiated by torch.

    Parameters
    ----------
    problem, state, j, tau
        The subproblem.
    fa
        Inner-solver settings.
    rng
        Stream for companion draws, kernel draws and fresh model
        initialization.
    model
        Previous map of this block, reused as a warm start; its output layer
        is reset so the inner solve starts at the identity.
    n_grad
        Companion draws of the marginal estimators (B when None).

    Returns
    -------
    result
        The pushforward ensemble, the fitted map and the final inner loss.

    Raises
    ------
    NonInjectiveMapError
        If every retry with a halved step produced a non-injective map.
    """
    _check_tau(tau)
    if fa.inner_iterations < 1:
        raise ProblemSpecError('FA needs at least one inner iteration.')

    x = state.blocks[j].points
    count, dim = x.shape
    entropy = problem.entropies[j]
    interaction = problem.interactions[j]
    companions = draw_companions(problem, state, j, n_grad, rng)

    if model is None or fa.reinit_each_step:
        model = TransportMapModel(dim, fa.hidden_widths, rng)
    else:
        model.reset_output_layer()

    x_t = torch.from_numpy(x.copy())
    h = bandwidth(x, fa.kde) if _entropy_on(entropy) else None

    start = copy.deepcopy(model.state_dict())
    step = fa.inner_step
    for attempt in range(fa.max_retries + 1):
        try:
            _fit_map(problem, j, tau, fa, model, x_t, entropy, interaction,
                     companions, h, rng, step)
            break
        except NonInjectiveMapError:
            model.load_state_dict(start)
            if attempt == fa.max_retries:
                raise
            step *= 0.5
            log.warn('block {j}: non-injective map, retrying with inner '
                     'step {step:.3g}', j=j, step=step)

    with torch.no_grad():
        y_t = model(x_t)
        entropy_value = 0.0
        if h is not None:
            z_t, log_rho = _kde_draws(x, entropy, fa.kde, h, rng)
            entropy_value = _entropy_term(model, z_t, entropy, log_rho).item()
    y = y_t.numpy().copy()
    potential = marginal_potential(problem, j, y, companions)
    inner_loss = float(np.mean(potential)) + entropy_value \
        + interaction_energy(interaction, y) \
        + float(np.sum((y - x) ** 2)) / (2.0 * count * tau)
    return FaStepResult(ParticleEnsemble(y), model, inner_loss)


def _fit_map(problem, j, tau, fa, model, x_t, entropy, interaction,
             companions, h, rng, step) -> None:
    count = x_t.shape[0]
    x = x_t.numpy()
    optimizer = torch.optim.Adam(model.parameters(), lr=step)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=fa.inner_iterations) if fa.anneal else None

    for it in range(fa.inner_iterations):
        optimizer.zero_grad()
        y_t = model(x_t)
        y = y_t.detach().numpy()
        drift = marginal_gradient(problem, j, y, companions) + \
            interaction_drift(interaction, y)
        surrogate = (torch.from_numpy(drift) * y_t).sum() / count
        proximity = ((y_t - x_t) ** 2).sum() / (2.0 * count * tau)
        loss = surrogate + proximity
        if h is not None:
            z_t, log_rho = _kde_draws(x, entropy, fa.kde, h, rng)
            loss = loss + _entropy_term(model, z_t, entropy, log_rho)
        loss.backward()
        optimizer.step()
        if scheduler is not None:
            scheduler.step()
        if it % 100 == 0:
            log.debug('block {j} inner iteration {it}: surrogate loss '
                      '{loss:.6g}', j=j, it=it, loss=loss.item())


class BlockSolver(abc.ABC):
    """
    Solves one block subproblem. Instances may keep per-block state (the FA
    warm-start maps) but never share it between blocks, so distinct blocks
    can be solved concurrently.
    """

    @abc.abstractmethod
    def solve(self,
              problem: ProblemSpec,
              state: BlockState,
              j: int,
              tau: float,
              rng: np.random.Generator) -> StepResult:
        pass

    @staticmethod
    def create(config: SchemeConfig) -> BlockSolver:
        if config.solver is SolverKind.SDE:
            return SdeSolver(config.n_grad)
        elif config.solver is SolverKind.FA:
            return FaSolver(config.fa or FaConfig(), config.n_grad)
        return EuclideanSolver()


class SdeSolver(BlockSolver):
    def __init__(self, n_grad: Optional[int] = None):
        super(SdeSolver, self).__init__()
        self._n_grad = n_grad

    def solve(self, problem, state, j, tau, rng) -> StepResult:
        return StepResult(sde_block_step(problem, state, j, tau, rng,
                                         self._n_grad))


class FaSolver(BlockSolver):
    def __init__(self, fa: FaConfig, n_grad: Optional[int] = None):
        super(FaSolver, self).__init__()
        self._fa = fa
        self._n_grad = n_grad
        self._maps: Dict[int, TransportMapModel] = {}

    @property
    def maps(self) -> Dict[int, TransportMapModel]:
        return self._maps

    def solve(self, problem, state, j, tau, rng) -> StepResult:
        result = fa_block_step(problem, state, j, tau, self._fa, rng,
                               model=self._maps.get(j), n_grad=self._n_grad)
        self._maps[j] = result.model
        return StepResult(result.ensemble, result.inner_loss)


class EuclideanSolver(BlockSolver):
    def solve(self, problem, state, j, tau, rng) -> StepResult:
        return StepResult(euclidean_prox_step(problem, state, j, tau))
