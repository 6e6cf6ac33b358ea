"""Scalar denoising problem ``min_{gamma >= 0} y^2/(b + gamma) + log(b + gamma)``.

With an identity dictionary the evidence objective separates into one
such problem per coordinate.  Its minimizer is ``max(y^2 - b, 0)`` and the
four schemes reduce to closed-form scalar maps whose order and rate of
convergence are known in closed form.  This module evaluates those maps,
the theoretical rates, empirical rate estimates and the O(1/k) envelopes.
"""
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import SBLInputError, WindowTooShortError

__all__ = [
    "SCALAR_ALGORITHMS",
    "DenoiseScalarProblem",
    "RateInfo",
    "closed_form_gamma",
    "step_1d",
    "trajectory",
    "theoretical_rate",
    "empirical_rate",
    "em_bracket_1d",
    "cb_bracket_boundary",
    "sq_bracket_boundary",
    "mk_boundary_exact",
]

SCALAR_ALGORITHMS = ("em", "mk", "cb", "sq")

ERROR_FLOOR = 1e-12
WINDOW = 5


@dataclass(frozen=True)
class DenoiseScalarProblem:
    y_sq: float
    b: float

    def __post_init__(self):
        if not self.b > 0 or not math.isfinite(self.b):
            raise SBLInputError(f"b must be positive and finite, got {self.b}")
        if not self.y_sq >= 0 or not math.isfinite(self.y_sq):
            raise SBLInputError(f"y_sq must be non-negative and finite, got {self.y_sq}")

    @property
    def ratio(self):
        """Signal-to-noise ratio ``r = y^2 / b``."""
        return self.y_sq / self.b

    @classmethod
    def from_ratio(cls, r, b=1.0):
        return cls(r * b, b)


@dataclass(frozen=True)
class RateInfo:
    order: float
    rate: float
    regime: str
    sublinear: bool = False


def _alg(alg):
    a = str(alg).lower()
    if a not in SCALAR_ALGORITHMS:
        raise SBLInputError(f"unknown scalar algorithm {alg!r}; choose from {SCALAR_ALGORITHMS}")
    return a


def closed_form_gamma(problem):
    return max(problem.y_sq - problem.b, 0.0)


def step_1d(alg, gamma, problem):
    """One scalar iteration of ``em``, ``mk``, ``cb`` or ``sq``."""
    y2, b = problem.y_sq, problem.b
    a = _alg(alg)
    if a == "em":
        q = gamma / (b + gamma)
        return y2 * q * q + b * q
    if a == "mk":
        return y2 * gamma / (b + gamma)
    if a == "cb":
        return gamma * math.sqrt(y2 / (b + gamma))
    f = y2 / (b + gamma)
    return gamma * f * f


def trajectory(alg, problem, gamma0, iters):
    """``[gamma^(0), ..., gamma^(iters)]`` as a float array."""
    a = _alg(alg)
    out = np.empty(iters + 1)
    g = float(gamma0)
    out[0] = g
    for k in range(1, iters + 1):
        g = step_1d(a, g, problem)
        out[k] = g
    return out


def theoretical_rate(alg, problem):
    """Closed-form order ``p`` and rate ``zeta`` for the regime of ``problem``.

    Regimes are ``above`` (y^2 > b), ``below`` (y^2 < b), ``boundary``
    (y^2 == b, exact comparison) and ``em_above`` (EM with y^2 >= b).
    Sublinear regimes report ``zeta = 1`` and ``sublinear=True``.
    """
    a = _alg(alg)
    y2, b = problem.y_sq, problem.b
    if a == "em":
        if y2 >= b:
            zeta = b * (2 * y2 - b) / y2**2
            return RateInfo(1.0, zeta, "em_above", sublinear=zeta == 1.0)
        return RateInfo(1.0, 1.0, "below", sublinear=True)
    if y2 == b:
        return RateInfo(1.0, 1.0, "boundary", sublinear=True)
    above = y2 > b
    if a == "mk":
        return RateInfo(1.0, b / y2 if above else y2 / b, "above" if above else "below")
    if a == "cb":
        return RateInfo(1.0, (b + y2) / (2 * y2) if above else math.sqrt(y2 / b),
                        "above" if above else "below")
    if above:
        return RateInfo(1.0, abs(2 * b / y2 - 1), "above")
    return RateInfo(2.0, (y2 / b) ** 2, "below")


def empirical_rate(alg, problem, gamma0=1.0, iters=10000):
    """Estimate ``(p, zeta)`` from the tail of the scalar trajectory.

    Errors ``e_k = |gamma^(k) - gamma*|`` are collected until they drop
    below 1e-12 (or ``iters`` is reached).  The last five successive pairs
    form the window: ``p`` is the least-squares slope of ``log e_{k+1}``
    against ``log e_k``, and ``zeta`` is the geometric mean of
    ``e_{k+1} / e_k`` in linear regimes or the mean of ``e_{k+1} / e_k^2``
    in the quadratic regime.

    Raises
    ------
    WindowTooShortError
        Fewer than five usable ratios, e.g. when ``gamma0`` is already the
        minimizer.
    """
    a = _alg(alg)
    info = theoretical_rate(a, problem)
    target = closed_form_gamma(problem)
    errs = []
    g = float(gamma0)
    for _ in range(iters + 1):
        e = abs(g - target)
        if e < ERROR_FLOOR:
            break
        errs.append(e)
        g = step_1d(a, g, problem)
    if len(errs) < WINDOW + 1:
        raise WindowTooShortError(
            f"{a} at r={problem.ratio:g}: only {len(errs)} errors above {ERROR_FLOOR:g}, "
            f"need {WINDOW + 1}")
    e = np.asarray(errs[-(WINDOW + 1):])
    prev, nxt = e[:-1], e[1:]
    lx, ly = np.log(prev), np.log(nxt)
    if np.ptp(lx) > 0:
        p_est = float(np.polyfit(lx, ly, 1)[0])
    else:
        p_est = float("nan")
    if info.order == 2.0:
        zeta_est = float(np.mean(nxt / prev**2))
    else:
        zeta_est = float(np.exp(np.mean(ly - lx)))
    return p_est, zeta_est


def em_bracket_1d(problem, gamma0, k):
    """``(b/(k + b/gamma0), c0/(k + c0/gamma0))`` with ``c0 = y^2 + b + b^2/(b - y^2)``.

    Only defined below the threshold (``y^2 < b``).
    """
    y2, b = problem.y_sq, problem.b
    if not y2 < b:
        raise SBLInputError("the EM envelope needs y^2 < b")
    c0 = y2 + b + b * b / (b - y2)
    k = np.asarray(k, dtype=float)
    return b / (k + b / gamma0), c0 / (k + c0 / gamma0)


def mk_boundary_exact(problem, gamma0, k):
    """MacKay at ``y^2 == b`` follows ``b/(k + b/gamma0)`` exactly."""
    k = np.asarray(k, dtype=float)
    return problem.b / (k + problem.b / gamma0)


def cb_bracket_boundary(problem, gamma0, k):
    """``(2b/(k + 2b/gamma0), c0/(k + c0/gamma0))`` with ``c0 = max(4b, sqrt(2 b gamma0))``."""
    b = problem.b
    c0 = max(4 * b, math.sqrt(2 * b * gamma0))
    k = np.asarray(k, dtype=float)
    return 2 * b / (k + 2 * b / gamma0), c0 / (k + c0 / gamma0)


def sq_bracket_boundary(problem, gamma0, k):
    """``(1/(c0 k + 1/gamma0), 1/(2k/b + 1/gamma0))`` with ``c0 = 2/b + gamma0/b^2``."""
    b = problem.b
    c0 = 2 / b + gamma0 / b**2
    k = np.asarray(k, dtype=float)
    return 1 / (c0 * k + 1 / gamma0), 1 / (2 * k / b + 1 / gamma0)
