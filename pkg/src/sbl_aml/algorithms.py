"""Hyperparameter updates and the shared alternating-minimization loop.

Each iteration computes the posterior mean (the x-update) at the current
``gamma`` and then applies one of four gamma-updates:

``em``   gamma_i <- mu_i^2 + Sigma_ii
``mk``   gamma_i <- gamma_i mu_i^2 / (gamma_i - Sigma_ii)
``cb``   gamma_i <- gamma_i sqrt(mu_i^2 / (gamma_i - Sigma_ii))
``amq``  half step gamma_i ((x_i^2 + tau) / (gamma_i^2 Z_ii + tau))^2,
         blended with the current iterate in ``theta = gamma^-1/2``
         coordinates with a diminishing step size.

Indices whose ``gamma`` drops to ``prune_tol`` or below, or whose
posterior mean is exactly zero, are zeroed and never revisited.
"""
import enum
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .core import PosteriorMoments, _check_gamma, _evaluate
from .exceptions import SBLInputError, SBLNumericalError

__all__ = [
    "ALGORITHMS",
    "AlgorithmConfig",
    "AmqState",
    "ConvergenceTrace",
    "RunResult",
    "Status",
    "em_update",
    "mk_update",
    "cb_update",
    "amq_half_step",
    "amq_blend",
    "step_size_next",
    "run",
]

ALGORITHMS = ("em", "mk", "cb", "amq")


class Status(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    DIVERGED = "diverged"
    NUMERICAL_ERROR = "numerical_error"


@dataclass(frozen=True)
class AlgorithmConfig:
    """Algorithm selector and its knobs.

    Defaults follow the experimental settings: ``tau=1e-10``,
    ``epsilon=0.02``, ``eta0=1`` and a relative-change tolerance of 1e-3.
    """

    algorithm: str = "amq"
    tau: float = 1e-10
    epsilon: float = 0.02
    eta0: float = 1.0
    max_iters: int = 10000
    rel_tol: float = 1e-3
    prune_tol: float = 1e-12

    def __post_init__(self):
        alg = str(self.algorithm).lower()
        if alg not in ALGORITHMS:
            raise SBLInputError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        object.__setattr__(self, "algorithm", alg)
        if not self.tau >= 0:
            raise SBLInputError(f"tau must be non-negative, got {self.tau}")
        if not 0 <= self.epsilon < 1:
            raise SBLInputError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if not 0 < self.eta0 <= 1:
            raise SBLInputError(f"eta0 must lie in (0, 1], got {self.eta0}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise SBLInputError(f"max_iters must be a positive integer, got {self.max_iters}")
        object.__setattr__(self, "max_iters", int(self.max_iters))
        if not self.rel_tol > 0:
            raise SBLInputError(f"rel_tol must be positive, got {self.rel_tol}")
        if not self.prune_tol >= 0:
            raise SBLInputError(f"prune_tol must be non-negative, got {self.prune_tol}")

    def as_dict(self):
        return asdict(self)


@dataclass
class AmqState:
    """Step size and last half step of an AMQ run."""

    eta: float
    half_step: Optional[np.ndarray] = None


@dataclass
class ConvergenceTrace:
    """Per-iteration records plus the terminal status of one run."""

    iters: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    gamma_rel_change: list = field(default_factory=list)
    active_count: list = field(default_factory=list)
    elapsed_ms: list = field(default_factory=list)
    status: Status = Status.MAX_ITERS

    def append(self, it, objective, rel_change, active, elapsed_ms):
        if self.iters and it <= self.iters[-1]:
            raise ValueError("trace iterations must be strictly increasing")
        self.iters.append(int(it))
        self.objective.append(float(objective))
        self.gamma_rel_change.append(float(rel_change))
        self.active_count.append(int(active))
        self.elapsed_ms.append(float(elapsed_ms))

    def __len__(self):
        return len(self.iters)

    @property
    def n_iter(self):
        """Number of gamma-updates recorded (the first record is the start point)."""
        return self.iters[-1] if self.iters else 0


class RunResult(NamedTuple):
    gamma: np.ndarray
    moments: PosteriorMoments
    trace: ConvergenceTrace


def em_update(moments, gamma):
    """``gamma_i <- mu_i^2 + Sigma_ii`` on the active set."""
    gamma = np.asarray(gamma, dtype=float)
    out = np.zeros_like(gamma)
    J = gamma > 0
    out[J] = moments.mean[J] ** 2 + moments.cov_diag[J]
    return out


def _ratio_update(moments, gamma, prune_tol, power):
    gamma = np.asarray(gamma, dtype=float)
    out = np.zeros_like(gamma)
    J = np.flatnonzero(gamma > 0)
    gJ = gamma[J]
    denom = gJ - moments.cov_diag[J]
    # nonpositive raw denominator: roundoff on an index that is effectively pruned
    keep = denom > 0
    denom = np.maximum(denom, prune_tol * gJ)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = moments.mean[J] ** 2 / denom
    if power == 0.5:
        ratio = np.sqrt(ratio)
    out[J] = np.where(keep, gJ * ratio, 0.0)
    return out


def mk_update(moments, gamma, prune_tol=1e-12):
    """MacKay update ``gamma_i mu_i^2 / (gamma_i - Sigma_ii)``.

    The denominator is floored at ``prune_tol * gamma_i``; a nonpositive
    raw denominator prunes the index.
    """
    return _ratio_update(moments, gamma, prune_tol, 1.0)


def cb_update(moments, gamma, prune_tol=1e-12):
    """Convex-bounding update ``gamma_i sqrt(mu_i^2 / (gamma_i - Sigma_ii))``."""
    return _ratio_update(moments, gamma, prune_tol, 0.5)


def amq_half_step(derivs, x, gamma, tau):
    """Unrelaxed AMQ iterate ``gamma_i ((x_i^2 + tau) / (gamma_i^2 Z_ii + tau))^2``.

    Zero where ``gamma_i = 0`` or where the denominator vanishes.
    """
    gamma = np.asarray(gamma, dtype=float)
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(gamma)
    J = np.flatnonzero(gamma > 0)
    gJ = gamma[J]
    denom = gJ * gJ * derivs.z_diag[J] + tau
    ok = denom > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        val = gJ * ((x[J] ** 2 + tau) / denom) ** 2
    out[J] = np.where(ok, val, 0.0)
    return out


def amq_blend(gamma, half_step, eta):
    """Move ``theta = gamma^-1/2`` a fraction ``eta`` toward the half step.

    ``eta == 1`` returns the half step exactly.  A zero half step prunes
    the index for any ``eta``.
    """
    gamma = np.asarray(gamma, dtype=float)
    half_step = np.asarray(half_step, dtype=float)
    if not 0 < eta <= 1:
        raise SBLInputError(f"eta must lie in (0, 1], got {eta}")
    out = np.zeros_like(gamma)
    J = (gamma > 0) & (half_step > 0)
    if eta == 1:
        out[J] = half_step[J]
        return out
    theta = gamma[J] ** -0.5
    theta_half = half_step[J] ** -0.5
    out[J] = (theta + eta * (theta_half - theta)) ** -2.0
    return out


def step_size_next(eta, epsilon):
    """Diminishing step ``eta (1 - epsilon eta)``."""
    return eta * (1.0 - epsilon * eta)


def _moments_of(ev):
    return PosteriorMoments(ev.mean.copy(), ev.cov_diag.copy())


def run(problem, gamma0=None, config=None, callback: Optional[Callable] = None):
    """Iterate x-update / gamma-update until the relative change of gamma is small.

    Parameters
    ----------
    problem : ProblemInstance
    gamma0 : array of shape (n,), optional
        Strictly positive start point; all ones by default.
    config : AlgorithmConfig, optional
    callback : callable, optional
        Called as ``callback(k, gamma)`` for the start point and after
        every accepted iterate.

    Returns
    -------
    RunResult
        ``(gamma, moments, trace)``.  On divergence or a numerical failure
        ``gamma`` and ``moments`` are the last accepted iterate and the
        trace status says what happened.
    """
    config = config or AlgorithmConfig()
    n = problem.dictionary.shape[1]
    gamma = np.ones(n) if gamma0 is None else _check_gamma(gamma0, problem).copy()
    if np.any(gamma <= 0):
        raise SBLInputError("gamma0 must be strictly positive")
    alg = config.algorithm
    gamma[gamma <= config.prune_tol] = 0.0

    trace = ConvergenceTrace()
    t0 = time.perf_counter()
    J = np.flatnonzero(gamma > 0)
    try:
        ev = _evaluate(problem, gamma, columns=J)
    except SBLNumericalError:
        trace.status = Status.NUMERICAL_ERROR
        return RunResult(gamma, PosteriorMoments(np.zeros(n), np.zeros(n)), trace)
    L = ev.objective
    trace.append(0, L, np.nan, J.size, 0.0)
    if callback is not None:
        callback(0, gamma)
    state = AmqState(eta=config.eta0)

    for k in range(1, config.max_iters + 1):
        x = ev.mean
        # permanent zeros: an index with x_i == 0 can never come back
        gamma = np.where((gamma > 0) & (x == 0), 0.0, gamma)
        if alg == "em":
            new = em_update(ev, gamma)
        elif alg == "mk":
            new = mk_update(ev, gamma, config.prune_tol)
        elif alg == "cb":
            new = cb_update(ev, gamma, config.prune_tol)
        else:
            state.half_step = amq_half_step(ev, x, gamma, config.tau)
            new = amq_blend(gamma, state.half_step, state.eta)
        new[new <= config.prune_tol] = 0.0
        new[gamma <= 0] = 0.0
        elapsed = (time.perf_counter() - t0) * 1e3

        if not np.all(np.isfinite(new)):
            trace.append(k, np.nan, np.nan, int(np.sum(new > 0)), elapsed)
            trace.status = Status.DIVERGED
            break
        rel = np.linalg.norm(new - gamma) / max(np.linalg.norm(gamma), 1e-300)
        J = np.flatnonzero(new > 0)
        try:
            ev_new = _evaluate(problem, new, columns=J)
        except SBLNumericalError:
            trace.status = Status.NUMERICAL_ERROR
            break
        L_new = ev_new.objective
        elapsed = (time.perf_counter() - t0) * 1e3
        if not np.isfinite(L_new) or L_new - L > 1e3 * abs(L):
            trace.append(k, L_new, rel, J.size, elapsed)
            trace.status = Status.DIVERGED
            break

        gamma, ev, L = new, ev_new, L_new
        trace.append(k, L, rel, J.size, elapsed)
        if callback is not None:
            callback(k, gamma)
        if alg == "amq":
            state.eta = step_size_next(state.eta, config.epsilon)
        if rel < config.rel_tol:
            trace.status = Status.CONVERGED
            break
    else:
        trace.status = Status.MAX_ITERS

    return RunResult(gamma, _moments_of(ev), trace)
