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

import enum
from typing import TYPE_CHECKING, Any, Callable, Iterable, Mapping, \
    NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from twisted.logger import Logger

if TYPE_CHECKING:  # pragma: no cover
    from .steps import FaConfig

__all__ = ['WPCGError', 'EnsembleError', 'NonFiniteEnsembleError',
           'ProblemSpecError', 'SolverCompatibilityError',
           'ParticleEnsemble', 'BlockState', 'PotentialSpec', 'EntropyKind',
           'EntropySpec', 'InteractionSpec', 'QuadraticRegistration',
           'ProblemSpec', 'SchemeKind', 'SolverKind', 'SchemeConfig',
           'validate_problem', 'project_ensemble']

log = Logger()

#: rows are points; returns one value per row
PotentialValue = Callable[[np.ndarray], np.ndarray]
#: (block index, rows of full points) -> rows of block gradients
PotentialBlockGradient = Callable[[int, np.ndarray], np.ndarray]
#: broadcasting kernel on (..., d) x (..., d)
PairFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


class WPCGError(Exception):
    pass


class EnsembleError(WPCGError):
    pass


class NonFiniteEnsembleError(EnsembleError):
    pass


class ProblemSpecError(WPCGError):
    pass


class SolverCompatibilityError(ProblemSpecError):
    pass


class ParticleEnsemble:
    """
    An equal-weight empirical measure of B points in R^d.

    Ensembles are immutable: the point matrix is copied on construction and
    marked read-only. A one-dimensional input is read as B scalar particles.
    """

    __slots__ = ('_points',)

    def __init__(self, points: Union[np.ndarray, Sequence]):
        pts = np.array(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2:
            raise EnsembleError(f'Expected a B x d matrix, got shape '
                                f'{pts.shape}.')
        if pts.shape[0] < 1 or pts.shape[1] < 1:
            raise EnsembleError(f'Empty ensemble of shape {pts.shape}.')
        if not np.all(np.isfinite(pts)):
            raise NonFiniteEnsembleError('Ensemble contains NaN or Inf '
                                         'coordinates.')
        pts.setflags(write=False)
        self._points = pts

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def count(self) -> int:
        return self._points.shape[0]

    @property
    def dim(self) -> int:
        return self._points.shape[1]

    def __len__(self) -> int:
        return self.count

    def __repr__(self) -> str:
        return f'ParticleEnsemble(B={self.count}, d={self.dim})'

    def mean(self) -> np.ndarray:
        return self._points.mean(axis=0)

    def variance(self) -> np.ndarray:
        """Per-coordinate sample variance (ddof=1; zero for a single point)."""
        if self.count < 2:
            return np.zeros(self.dim)
        return self._points.var(axis=0, ddof=1)

    def canonical_order(self) -> np.ndarray:
        """Row indices sorting the points lexicographically."""
        return np.lexsort(self._points.T[::-1])

    def shifted(self, v: Union[float, np.ndarray]) -> ParticleEnsemble:
        return ParticleEnsemble(self._points + np.asarray(v, dtype=float))

    def permuted(self, order: np.ndarray) -> ParticleEnsemble:
        return ParticleEnsemble(self._points[np.asarray(order)])


class BlockState:
    """
    The m block distributions at outer iteration k. All blocks share the
    same particle count B. New states are produced by `with_block` and
    `advanced`; a state is never modified in place.
    """

    __slots__ = ('_blocks', '_k')

    def __init__(self, blocks: Iterable[ParticleEnsemble], k: int = 0):
        blocks = tuple(b if isinstance(b, ParticleEnsemble)
                       else ParticleEnsemble(b) for b in blocks)
        if len(blocks) < 1:
            raise EnsembleError('A block state needs at least one block.')
        counts = {b.count for b in blocks}
        if len(counts) != 1:
            raise EnsembleError(f'All blocks must share one particle count, '
                                f'got {sorted(counts)}.')
        if k < 0:
            raise EnsembleError(f'Negative iteration index {k}.')
        self._blocks = blocks
        self._k = int(k)

    @staticmethod
    def from_arrays(arrays: Iterable[np.ndarray], k: int = 0) -> BlockState:
        return BlockState((ParticleEnsemble(a) for a in arrays), k)

    @property
    def blocks(self) -> Tuple[ParticleEnsemble, ...]:
        return self._blocks

    @property
    def k(self) -> int:
        return self._k

    @property
    def m(self) -> int:
        return len(self._blocks)

    @property
    def count(self) -> int:
        return self._blocks[0].count

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(b.dim for b in self._blocks)

    def __getitem__(self, j: int) -> ParticleEnsemble:
        return self._blocks[j]

    def __repr__(self) -> str:
        return f'BlockState(k={self._k}, m={self.m}, B={self.count}, ' \
               f'dims={self.dims})'

    def with_block(self, j: int, ensemble: ParticleEnsemble) -> BlockState:
        if ensemble.dim != self._blocks[j].dim:
            raise EnsembleError(f'Block {j} has dimension '
                                f'{self._blocks[j].dim}, got '
                                f'{ensemble.dim}.')
        blocks = list(self._blocks)
        blocks[j] = ensemble
        return BlockState(blocks, self._k)

    def advanced(self) -> BlockState:
        return BlockState(self._blocks, self._k + 1)

    def joint(self) -> np.ndarray:
        """Particles paired by index, concatenated into B x (d_1+...+d_m)."""
        return np.concatenate([b.points for b in self._blocks], axis=1)

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(b.points))) for b in self._blocks)


class PotentialSpec(NamedTuple):
    #: V evaluated row-wise on N x D points, D = d_1 + ... + d_m
    value: PotentialValue
    #: grad_j V evaluated row-wise, returns N x d_j
    block_gradient: PotentialBlockGradient
    #: Lipschitz constant of grad_j V in x_{-j}; 0 for decoupled potentials
    lipschitz_L: Optional[float] = None
    #: grad_j V depends on x_j only
    separable: bool = False


class EntropyKind(enum.Enum):
    NONE = 'none'
    NEG_SELF_ENTROPY = 'neg-self-entropy'
    POWER = 'power'


class EntropySpec(NamedTuple):
    """
    Internal energy c * int h(rho), with h(x) = x log x (negative
    self-entropy) or h(x) = x^n (porous-medium power).
    """
    kind: EntropyKind = EntropyKind.NONE
    exponent: Optional[int] = None
    coefficient: float = 1.0

    @classmethod
    def none(cls) -> EntropySpec:
        return cls(EntropyKind.NONE)

    @classmethod
    def neg_self_entropy(cls, coefficient: float = 1.0) -> EntropySpec:
        return cls(EntropyKind.NEG_SELF_ENTROPY, None, float(coefficient))

    @classmethod
    def power(cls, exponent: int, coefficient: float = 1.0) -> EntropySpec:
        if int(exponent) != exponent or exponent < 2:
            raise ProblemSpecError(f'Power entropy exponent must be an '
                                   f'integer >= 2, got {exponent}.')
        return cls(EntropyKind.POWER, int(exponent), float(coefficient))

    @property
    def active(self) -> bool:
        return self.kind is not EntropyKind.NONE

    def h(self, rho: np.ndarray) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        if self.kind is EntropyKind.NEG_SELF_ENTROPY:
            return self.coefficient * rho * np.log(rho)
        elif self.kind is EntropyKind.POWER:
            return self.coefficient * rho ** self.exponent
        return np.zeros_like(rho)

    def h_prime(self, rho: np.ndarray) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        if self.kind is EntropyKind.NEG_SELF_ENTROPY:
            return self.coefficient * (np.log(rho) + 1.0)
        elif self.kind is EntropyKind.POWER:
            n = self.exponent
            return self.coefficient * n * rho ** (n - 1)
        return np.zeros_like(rho)

    def h_over_rho(self, rho: np.ndarray) -> np.ndarray:
        """h(rho)/rho, the integrand of int h(rho) under sampling from rho."""
        rho = np.asarray(rho, dtype=float)
        if self.kind is EntropyKind.NEG_SELF_ENTROPY:
            return self.coefficient * np.log(rho)
        elif self.kind is EntropyKind.POWER:
            return self.coefficient * rho ** (self.exponent - 1)
        return np.zeros_like(rho)


class InteractionSpec(NamedTuple):
    kernel: Optional[PairFunction] = None
    grad1: Optional[PairFunction] = None
    grad2: Optional[PairFunction] = None

    @property
    def present(self) -> bool:
        return self.kernel is not None


class QuadraticRegistration(NamedTuple):
    """Marks V(x) = (1-a)/2 |x|^2 + a/2 (x_1+...+x_m)^2 on scalar blocks."""
    alpha: float


class ProblemSpec:
    """
    The composite functional F over m blocks: a joint potential, one
    internal energy and one self-interaction per block, and an optional
    per-block axis-aligned domain box.
    """

    def __init__(self,
                 dims: Sequence[int],
                 potential: PotentialSpec,
                 entropies: Sequence[EntropySpec],
                 interactions: Optional[Sequence[InteractionSpec]] = None,
                 domain_box: Optional[Sequence[Tuple[np.ndarray,
                                                     np.ndarray]]] = None,
                 name: str = 'custom',
                 params: Optional[Mapping[str, Any]] = None,
                 closed_form: Optional[QuadraticRegistration] = None,
                 analytic_reference: Optional[
                     Callable[[int, np.random.Generator], BlockState]] = None):
        dims = tuple(int(d) for d in dims)
        m = len(dims)
        if m < 1:
            raise ProblemSpecError('A problem needs at least one block.')
        if any(d < 1 for d in dims):
            raise ProblemSpecError(f'Block dimensions must be positive, got '
                                   f'{dims}.')
        if interactions is None:
            interactions = [InteractionSpec()] * m
        if len(entropies) != m or len(interactions) != m:
            raise ProblemSpecError(f'Expected {m} entropies and interactions, '
                                   f'got {len(entropies)} and '
                                   f'{len(interactions)}.')
        if domain_box is not None:
            if len(domain_box) != m:
                raise ProblemSpecError(f'Expected {m} domain boxes, got '
                                       f'{len(domain_box)}.')
            domain_box = tuple((np.broadcast_to(np.asarray(lo, float), (d,)),
                                np.broadcast_to(np.asarray(hi, float), (d,)))
                               for (lo, hi), d in zip(domain_box, dims))

        self.dims = dims
        self.potential = potential
        self.entropies = tuple(entropies)
        self.interactions = tuple(interactions)
        self.domain_box = domain_box
        self.name = name
        self.params = dict(params or {})
        self.closed_form = closed_form
        self.analytic_reference = analytic_reference

        self.offsets = tuple(int(o) for o in np.cumsum((0,) + dims))

    def __repr__(self) -> str:
        return f'ProblemSpec(name={self.name!r}, dims={self.dims})'

    @property
    def m(self) -> int:
        return len(self.dims)

    @property
    def total_dim(self) -> int:
        return self.offsets[-1]

    def block_slice(self, j: int) -> slice:
        return slice(self.offsets[j], self.offsets[j + 1])

    @property
    def signature(self) -> str:
        """Stable textual identity of the problem, used for cache keys."""
        params = ','.join(f'{k}={self.params[k]!r}'
                          for k in sorted(self.params))
        return f'{self.name}({params})'


class SchemeKind(enum.Enum):
    PARALLEL = 'parallel'
    SEQUENTIAL = 'sequential'
    RANDOM = 'random'


class SolverKind(enum.Enum):
    SDE = 'sde'
    FA = 'fa'
    EUCLIDEAN = 'euclidean'


class SchemeConfig(NamedTuple):
    scheme: SchemeKind
    tau: float
    iterations: int
    seed: int = 0
    solver: SolverKind = SolverKind.SDE
    #: FA solver settings; defaults apply when None
    fa: Optional[FaConfig] = None
    #: random scheme batch size; derived from L when None
    batch_M: Optional[int] = None
    #: companion draws of the marginal-gradient estimator; B when None
    n_grad: Optional[int] = None
    #: random index matchings for the potential term of the objective
    n_mc: int = 1
    #: parallel-scheme workers; WPCG_THREADS or the CPU count when None
    workers: Optional[int] = None
    #: clip particles into the problem's domain box after every move
    project: bool = False
    #: abort once any coordinate exceeds this magnitude
    divergence_bound: float = 1e10


def project_ensemble(problem: ProblemSpec,
                     j: int,
                     ensemble: ParticleEnsemble) -> ParticleEnsemble:
    if problem.domain_box is None:
        return ensemble
    lo, hi = problem.domain_box[j]
    return ParticleEnsemble(np.clip(ensemble.points, lo, hi))


def validate_problem(problem: ProblemSpec,
                     config: SchemeConfig,
                     state: Optional[BlockState] = None) -> None:
    """
    Checks that a problem, a scheme configuration and (optionally) an
    initial state fit together.

    Gradient and kernel shapes are checked at two random points per block.

    Parameters
    ----------
    problem
        The functional to minimize.
    config
        Scheme and solver settings.
    state
        Initial state; when given, its block dimensions and particle count
        are checked as well.

    Raises
    ------
    ProblemSpecError
        On any shape or value inconsistency.
    SolverCompatibilityError
        When the selected solver cannot handle the problem.
    """
    if config.tau <= 0:
        raise ProblemSpecError(f'Step size must be positive, got '
                               f'{config.tau}.')
    if config.iterations < 1:
        raise ProblemSpecError(f'Iteration budget must be positive, got '
                               f'{config.iterations}.')
    if config.batch_M is not None and config.batch_M < 1:
        raise ProblemSpecError(f'Batch size must be positive, got '
                               f'{config.batch_M}.')
    if config.n_grad is not None and config.n_grad < 1:
        raise ProblemSpecError(f'n_grad must be positive, got '
                               f'{config.n_grad}.')
    lipschitz = problem.potential.lipschitz_L
    if config.scheme is SchemeKind.RANDOM and config.batch_M is None \
            and (lipschitz is None or problem.m * lipschitz <= 1):
        raise ProblemSpecError(f'Random scheme needs batch_M or a coupling '
                               f'constant with m L > 1 to derive it from, '
                               f'got m={problem.m}, L={lipschitz}.')

    for j, ent in enumerate(problem.entropies):
        if ent.kind is EntropyKind.POWER and \
                (ent.exponent is None or ent.exponent < 2):
            raise ProblemSpecError(f'Block {j}: power exponent must be >= 2.')
        if ent.coefficient < 0:
            raise ProblemSpecError(f'Block {j}: negative entropy '
                                   f'coefficient {ent.coefficient}.')
        if config.solver is SolverKind.SDE and \
                ent.kind is EntropyKind.POWER:
            raise SolverCompatibilityError(
                f'SDE requires negative self-entropy (or no internal '
                f'energy); block {j} uses a power entropy.')

    for j, inter in enumerate(problem.interactions):
        if inter.present and (inter.grad1 is None or inter.grad2 is None):
            raise ProblemSpecError(f'Block {j}: interaction kernel given '
                                   f'without both gradients.')

    if config.solver is SolverKind.EUCLIDEAN:
        if problem.closed_form is None:
            raise SolverCompatibilityError(
                f'Closed-form Euclidean solver needs a registered quadratic '
                f'problem, got {problem.name!r}.')
        if any(d != 1 for d in problem.dims):
            raise SolverCompatibilityError('Closed-form Euclidean solver '
                                           'needs scalar blocks.')
        if state is not None and state.count != 1:
            raise SolverCompatibilityError(
                f'Closed-form Euclidean solver needs point masses (B = 1), '
                f'got B = {state.count}.')

    if state is not None:
        if state.dims != problem.dims:
            raise ProblemSpecError(f'State dimensions {state.dims} do not '
                                   f'match problem dimensions '
                                   f'{problem.dims}.')

    # shapes at random points
    rng = np.random.default_rng(0)
    points = rng.standard_normal((2, problem.total_dim))
    value = np.asarray(problem.potential.value(points))
    if value.shape != (2,):
        raise ProblemSpecError(f'Potential returned shape {value.shape} for '
                               f'2 random points, expected (2,).')
    for j, d in enumerate(problem.dims):
        grad = np.asarray(problem.potential.block_gradient(j, points))
        if grad.shape != (2, d):
            raise ProblemSpecError(f'Block gradient {j} returned shape '
                                   f'{grad.shape}, expected (2, {d}).')
        inter = problem.interactions[j]
        if inter.present:
            x = rng.standard_normal((2, d))
            y = rng.standard_normal((2, d))
            if np.asarray(inter.kernel(x, y)).shape != (2,):
                raise ProblemSpecError(f'Interaction kernel {j} must reduce '
                                       f'the last axis.')
            for name, fn in (('grad1', inter.grad1), ('grad2', inter.grad2)):
                if np.asarray(fn(x, y)).shape != (2, d):
                    raise ProblemSpecError(f'Interaction {name} of block {j} '
                                           f'returned the wrong shape.')

    log.debug('validated {problem} with {solver} solver',
              problem=problem, solver=config.solver.value)
