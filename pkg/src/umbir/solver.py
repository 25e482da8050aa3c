"""MAP reconstruction by iterative coordinate descent.

Minimizes

    1/(2 sigma^2) ||y - A x - D g||^2 + sum_{cliques} b_sr rho(x_s - x_r)

jointly over the image ``x`` and the direct-arrival coefficients ``g``.
Voxels are updated one at a time against a quadratic majorizer of the
prior; ``g`` is solved exactly (the columns of D have disjoint supports).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from . import _loops
from .prior import CliqueTable, QggmrfParams
from .system import RunMatrix

log = logging.getLogger(__name__)


@dataclass
class ReconProblem:
    A: RunMatrix
    y: np.ndarray
    sigma: float
    D: RunMatrix | None = None
    prior: QggmrfParams | None = None
    cliques: CliqueTable | None = None
    iterations: int = 100
    seed: int = 0
    early_exit_tol: float | None = None
    relaxation: float = 1.0

    def __post_init__(self):
        self.y = np.ascontiguousarray(self.y, dtype=float).ravel()
        if self.y.shape != (self.A.n_rows,):
            raise ValueError(f"y has {self.y.size} entries, A has {self.A.n_rows} rows")
        if self.D is not None and self.D.n_rows != self.A.n_rows:
            raise ValueError("A and D must have the same number of rows")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 < self.relaxation < 2:
            raise ValueError("relaxation must be in (0, 2)")
        if (self.prior is None) != (self.cliques is None):
            raise ValueError("prior parameters and clique table go together")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("measurements contain NaN or inf")
        self._norms2 = None

    @property
    def N(self):
        return self.A.shape[1]

    @property
    def n_direct(self):
        return 0 if self.D is None else self.D.shape[1]

    @property
    def norms2(self):
        if self._norms2 is None:
            self._norms2 = self.A.column_norms2()
        return self._norms2


@dataclass
class ReconState:
    x: np.ndarray
    g: np.ndarray
    e: np.ndarray
    costs: list = field(default_factory=list)


@dataclass
class ReconResult:
    x: np.ndarray
    g: np.ndarray
    costs: np.ndarray


def residual(problem: ReconProblem, x, g) -> np.ndarray:
    e = problem.y - problem.A.matvec(x)
    if problem.D is not None and len(g):
        e -= problem.D.matvec(g)
    return e


def _prior_cost(problem, x):
    if problem.prior is None:
        return 0.0
    c = problem.cliques
    p = problem.prior
    return _loops.prior_cost(x, c.nbr, c.weight, c.sigma, p.p, p.q, p.T)


def map_cost(state: ReconState, problem: ReconProblem) -> float:
    """Data misfit plus prior, from the state's residual."""
    e = state.e
    data = math.fsum(e * e) / (2 * problem.sigma ** 2)
    return data + _prior_cost(problem, state.x)


def init_state(problem: ReconProblem, x0=None, g0=None) -> ReconState:
    x = np.zeros(problem.N) if x0 is None else np.array(x0, dtype=float).ravel()
    g = np.zeros(problem.n_direct) if g0 is None else np.array(g0, dtype=float).ravel()
    if x.shape != (problem.N,) or g.shape != (problem.n_direct,):
        raise ValueError("initial values do not match the problem size")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(g))):
        raise ValueError("initial values contain NaN or inf")
    return ReconState(x, g, residual(problem, x, g))


def _icd(state, problem, order):
    A = problem.A
    if problem.prior is not None:
        c, p = problem.cliques, problem.prior
        nbr, bw, nsig, pp, qq, TT, use = c.nbr, c.weight, c.sigma, p.p, p.q, p.T, True
    else:
        nbr = np.full((problem.N, 1), -1, dtype=np.int64)
        bw = np.zeros((problem.N, 1))
        nsig = np.ones((problem.N, 1))
        pp, qq, TT, use = 1.5, 2.0, 1.0, False
    _loops.icd_pass(np.ascontiguousarray(order, dtype=np.int64), state.x, state.e,
                    A.start, A.length, A.ptr, A.values, problem.norms2,
                    1.0 / problem.sigma ** 2, nbr, bw, nsig, pp, qq, TT, use,
                    problem.relaxation)


def icd_update_voxel(state: ReconState, problem: ReconProblem, i: int) -> float:
    """Majorized coordinate update of voxel ``i``; returns the new value."""
    _icd(state, problem, np.array([i]))
    return float(state.x[i])


def update_direct_arrival(state: ReconState, problem: ReconProblem) -> np.ndarray:
    """Exact minimization over g given x; each column of D is solved on its own."""
    D = problem.D
    if D is None:
        return state.g
    norms = D.column_norms2()
    proj = D.rmatvec(state.e)
    old = state.g.copy()
    zero = norms <= 0
    if zero.any():
        warnings.warn(f"{int(zero.sum())} direct-arrival columns are empty; their coefficients stay 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        new = np.where(zero, 0.0, old + proj / np.where(zero, 1.0, norms))
    state.g = new
    state.e -= D.matvec(new - old)
    return new


def reconstruct(problem: ReconProblem, x0=None, g0=None, log_stream: TextIO | None = None) -> ReconResult:
    """Run ``problem.iterations`` sweeps; each sweep is a g update then one ICD pass.

    The residual is recomputed from scratch at every sweep boundary.  Voxels
    are visited in a fresh random order each sweep, drawn from
    ``problem.seed``.
    """
    state = init_state(problem, x0, g0)
    rng = np.random.default_rng(problem.seed)
    cost = map_cost(state, problem)
    state.costs.append(cost)
    if log_stream is not None:
        log_stream.write("sweep,cost\n0,%.17g\n" % cost)
    for sweep in range(1, problem.iterations + 1):
        update_direct_arrival(state, problem)
        _icd(state, problem, rng.permutation(problem.N))
        state.e = residual(problem, state.x, state.g)
        new_cost = map_cost(state, problem)
        state.costs.append(new_cost)
        if log_stream is not None:
            log_stream.write("%d,%.17g\n" % (sweep, new_cost))
        if not math.isfinite(new_cost):
            raise FloatingPointError(f"cost became {new_cost} at sweep {sweep}")
        if problem.early_exit_tol is not None and cost > 0:
            if (cost - new_cost) / cost < problem.early_exit_tol:
                log.info("early exit after sweep %d", sweep)
                break
        cost = new_cost
    return ReconResult(state.x, state.g, np.array(state.costs))
