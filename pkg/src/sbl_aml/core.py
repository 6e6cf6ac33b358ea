"""Evidence objective, posterior moments and evidence derivatives.

The model is ``y = F x + eps`` with ``eps ~ N(0, beta^-1 I)`` and the
prior ``x ~ N(0, diag(gamma))``.  Everything here is a pure function of a
:class:`ProblemInstance` and a hyperparameter vector ``gamma >= 0``.

Two computational paths are provided.  The fast path restricts to the
active set ``J = {i : gamma_i > 0}`` and factors whichever of

* ``S = beta^-1 I + F_J Gamma_J F_J^T``            (m x m), or
* ``A = Gamma_J^-1 + beta F_J^T F_J``              (|J| x |J|)

is smaller (the two are linked by the Woodbury identity).  The oracle
path forms ``S^-1`` densely over all columns and is meant for checking.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .exceptions import SBLInputError, SBLNumericalError

__all__ = [
    "ProblemInstance",
    "PosteriorMoments",
    "EvidenceDerivatives",
    "active_set",
    "evidence_objective",
    "log_det_covariance",
    "posterior_moments",
    "evidence_derivatives",
    "auxiliary_objective",
    "em_surrogate_value",
    "psi_hessian",
]

_JITTER = 1e-12
_HESSIAN_MAX_N = 64


@dataclass(frozen=True)
class ProblemInstance:
    """Dictionary ``F`` (m x n), observation ``y`` (m) and noise precision."""

    dictionary: np.ndarray
    observation: np.ndarray
    noise_precision: float

    def __post_init__(self):
        F = np.asarray(self.dictionary, dtype=float)
        y = np.asarray(self.observation, dtype=float)
        if F.ndim != 2 or F.shape[0] < 1 or F.shape[1] < 1:
            raise SBLInputError(f"dictionary must be a non-empty 2-D array, got shape {F.shape}")
        if y.ndim == 2 and 1 in y.shape:
            y = y.ravel()
        if y.ndim != 1 or y.shape[0] != F.shape[0]:
            raise SBLInputError(
                f"observation length {y.shape} does not match dictionary rows {F.shape[0]}")
        if not np.all(np.isfinite(F)):
            raise SBLInputError("dictionary contains non-finite entries")
        if not np.all(np.isfinite(y)):
            raise SBLInputError("observation contains non-finite entries")
        beta = float(self.noise_precision)
        if not beta > 0 or np.isnan(beta):
            raise SBLInputError(f"noise precision must be positive, got {beta}")
        object.__setattr__(self, "dictionary", F)
        object.__setattr__(self, "observation", y)
        object.__setattr__(self, "noise_precision", beta)

    @property
    def shape(self):
        return self.dictionary.shape

    @property
    def noise_variance(self):
        """``b = 1 / beta``."""
        return 1.0 / self.noise_precision


@dataclass
class PosteriorMoments:
    """Posterior mean and covariance diagonal; ``full_cov`` only from the oracle."""

    mean: np.ndarray
    cov_diag: np.ndarray
    full_cov: Optional[np.ndarray] = None


@dataclass
class EvidenceDerivatives:
    """``diag(Z)``, ``u`` and the gradient ``Z_ii - u_i**2`` of the objective."""

    z_diag: np.ndarray
    u: np.ndarray
    gradient: np.ndarray


def active_set(gamma, prune_tol=0.0):
    """Sorted indices with ``gamma_i > prune_tol``."""
    return np.flatnonzero(np.asarray(gamma) > prune_tol)


def _check_gamma(gamma, problem):
    gamma = np.asarray(gamma, dtype=float)
    n = problem.dictionary.shape[1]
    if gamma.ndim != 1 or gamma.shape[0] != n:
        raise SBLInputError(f"gamma has shape {gamma.shape}, expected ({n},)")
    if not np.all(np.isfinite(gamma)):
        raise SBLInputError("gamma contains non-finite entries")
    if np.any(gamma < 0):
        raise SBLInputError("gamma must be non-negative")
    return gamma


def _cholesky(M, label):
    """Lower Cholesky factor, retrying once with a small diagonal jitter."""
    try:
        return linalg.cholesky(M, lower=True)
    except (linalg.LinAlgError, ValueError):
        pass
    dim = M.shape[0]
    trace = np.trace(M)
    if np.isfinite(trace):
        try:
            return linalg.cholesky(M + (_JITTER * trace / dim) * np.eye(dim), lower=True)
        except (linalg.LinAlgError, ValueError):
            pass
    with np.errstate(all="ignore"):
        try:
            cond = np.linalg.cond(M) if np.all(np.isfinite(M)) else np.inf
        except np.linalg.LinAlgError:
            cond = np.inf
    raise SBLNumericalError(
        f"Cholesky factorization of {label} ({dim}x{dim}) failed after jitter retry; "
        f"condition number estimate {cond:.3e}")


@dataclass
class _Evaluation:
    """Everything one factorization gives.  ``z``/``u`` are only filled on ``columns``."""

    active: np.ndarray
    mean: np.ndarray
    cov_diag: np.ndarray
    z_diag: np.ndarray
    u: np.ndarray
    quad: float
    logdet: float

    @property
    def objective(self):
        return self.quad + self.logdet


def _evaluate(problem, gamma, columns=None):
    """Fast-path evaluation restricted to the active set of ``gamma``.

    ``columns`` selects where ``diag(Z)`` and ``u`` are computed; it is
    always widened to include the active set.  Entries outside it are NaN.
    """
    F, y, beta = problem.dictionary, problem.observation, problem.noise_precision
    m, n = F.shape
    b = 1.0 / beta
    J = np.flatnonzero(gamma > 0)
    k = J.size
    if columns is None:
        cols = np.arange(n)
    else:
        cols = np.union1d(np.asarray(columns, dtype=int), J)

    mean = np.zeros(n)
    cov_diag = np.zeros(n)
    z_diag = np.full(n, np.nan)
    u = np.full(n, np.nan)
    FC = F[:, cols]

    if k == 0:
        w = beta * y
        z_diag[cols] = beta * np.einsum("ij,ij->j", FC, FC)
        u[cols] = FC.T @ w
        return _Evaluation(J, mean, cov_diag, z_diag, u, float(y @ w), m * np.log(b))

    gJ = gamma[J]
    FJ = F[:, J]
    if m <= k:
        S = (FJ * gJ) @ FJ.T
        S[np.diag_indices_from(S)] += b
        L = _cholesky(S, "S(gamma)")
        w = linalg.cho_solve((L, True), y)
        V = linalg.solve_triangular(L, FC, lower=True)
        zc = np.einsum("ij,ij->j", V, V)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        z_diag[cols] = zc
        u[cols] = FC.T @ w
        zJ = z_diag[J]
        mean[J] = gJ * u[J]
        cov_diag[J] = gJ - gJ * gJ * zJ
    else:
        A = beta * (FJ.T @ FJ)
        A[np.diag_indices_from(A)] += 1.0 / gJ
        L = _cholesky(A, "Gamma_J^-1 + beta F_J^T F_J")
        muJ = linalg.cho_solve((L, True), beta * (FJ.T @ y))
        Linv = linalg.solve_triangular(L, np.eye(k), lower=True)
        mean[J] = muJ
        cov_diag[J] = np.einsum("ij,ij->j", Linv, Linv)
        w = beta * (y - FJ @ muJ)
        W = Linv @ (FJ.T @ FC)
        z_diag[cols] = beta * np.einsum("ij,ij->j", FC, FC) - beta**2 * np.einsum("ij,ij->j", W, W)
        u[cols] = FC.T @ w
        logdet = 2.0 * np.sum(np.log(np.diag(L))) + np.sum(np.log(gJ)) + m * np.log(b)

    # roundoff guards: 0 <= Sigma_ii <= gamma_i, Z_ii >= 0
    np.clip(cov_diag, 0.0, gamma, out=cov_diag)
    z_diag[cols] = np.maximum(z_diag[cols], 0.0)
    return _Evaluation(J, mean, cov_diag, z_diag, u, float(y @ w), float(logdet))


def _dense_inverse(problem, gamma):
    F, beta = problem.dictionary, problem.noise_precision
    S = (F * gamma) @ F.T + np.eye(F.shape[0]) / beta
    try:
        Sinv = np.linalg.inv(S)
    except np.linalg.LinAlgError as exc:
        raise SBLNumericalError(f"dense inversion of S(gamma) failed: {exc}") from exc
    return S, Sinv


def evidence_objective(gamma, problem, mode="fast"):
    """``L(gamma) = y^T S(gamma)^-1 y + log det S(gamma)``."""
    gamma = _check_gamma(gamma, problem)
    if mode == "oracle":
        S, Sinv = _dense_inverse(problem, gamma)
        sign, logdet = np.linalg.slogdet(S)
        if sign <= 0:
            raise SBLNumericalError("S(gamma) is not positive definite")
        y = problem.observation
        return float(y @ Sinv @ y + logdet)
    if mode != "fast":
        raise SBLInputError(f"unknown mode {mode!r}")
    return _evaluate(problem, gamma, columns=np.empty(0, dtype=int)).objective


def log_det_covariance(gamma, problem):
    """``g(gamma) = log det S(gamma)``."""
    gamma = _check_gamma(gamma, problem)
    return _evaluate(problem, gamma, columns=np.empty(0, dtype=int)).logdet


def posterior_moments(gamma, problem, mode="fast"):
    """Posterior mean ``Gamma F^T S^-1 y`` and ``diag(Gamma - Gamma F^T S^-1 F Gamma)``.

    Parameters
    ----------
    gamma : array of shape (n,)
        Non-negative prior variances.  Zero entries pin ``x_i`` to zero.
    problem : ProblemInstance
    mode : {"fast", "oracle"}
        ``"fast"`` factors the smaller of the two Woodbury-equivalent
        systems on the active set.  ``"oracle"`` inverts ``S`` densely and
        also returns the full posterior covariance.
    """
    gamma = _check_gamma(gamma, problem)
    if mode == "oracle":
        F, y = problem.dictionary, problem.observation
        _, Sinv = _dense_inverse(problem, gamma)
        GFt = gamma[:, None] * F.T
        mean = GFt @ (Sinv @ y)
        cov = np.diag(gamma) - GFt @ Sinv @ GFt.T
        return PosteriorMoments(mean, np.diag(cov).copy(), cov)
    if mode != "fast":
        raise SBLInputError(f"unknown mode {mode!r}")
    ev = _evaluate(problem, gamma, columns=np.empty(0, dtype=int))
    return PosteriorMoments(ev.mean, ev.cov_diag)


def evidence_derivatives(gamma, problem, mode="fast"):
    """``diag(Z)``, ``u`` and ``dL/dgamma_i = Z_ii - u_i**2`` for every index.

    ``Z = F^T S^-1 F`` and ``u = F^T S^-1 y``.  Both are reported on
    inactive indices too, where the gradient still decides stationarity.
    """
    gamma = _check_gamma(gamma, problem)
    if mode == "oracle":
        F, y = problem.dictionary, problem.observation
        _, Sinv = _dense_inverse(problem, gamma)
        z = np.einsum("ij,ij->j", F, Sinv @ F)
        u = F.T @ (Sinv @ y)
    elif mode == "fast":
        ev = _evaluate(problem, gamma)
        z, u = ev.z_diag, ev.u
    else:
        raise SBLInputError(f"unknown mode {mode!r}")
    return EvidenceDerivatives(z, u, z - u * u)


def auxiliary_objective(x, gamma, problem):
    """``beta ||F x - y||^2 + x^T Gamma^+ x`` plus the indicator of ``x_i = 0`` on zero ``gamma_i``.

    Returns ``inf`` when ``x`` is nonzero somewhere ``gamma`` is zero.
    """
    gamma = _check_gamma(gamma, problem)
    x = np.asarray(x, dtype=float)
    if x.shape != gamma.shape:
        raise SBLInputError(f"x has shape {x.shape}, expected {gamma.shape}")
    zero = gamma == 0
    if np.any(x[zero] != 0):
        return np.inf
    r = problem.dictionary @ x - problem.observation
    nz = ~zero
    return float(problem.noise_precision * (r @ r) + np.sum(x[nz] ** 2 / gamma[nz]))


def em_surrogate_value(gamma, gamma_anchor, problem):
    """EM majorant of ``log det S`` linearized in ``s = 1/gamma`` at ``gamma_anchor``.

    Sums run over the anchor's active set; ``gamma`` must be strictly
    positive there and zero elsewhere.
    """
    gamma = _check_gamma(gamma, problem)
    gamma_anchor = _check_gamma(gamma_anchor, problem)
    J = gamma_anchor > 0
    if np.any(gamma[J] <= 0):
        raise SBLInputError("gamma must be strictly positive on the anchor's active set")
    if np.any(gamma[~J] != 0):
        raise SBLInputError("gamma must be zero where the anchor is zero")
    ev = _evaluate(problem, gamma_anchor, columns=np.empty(0, dtype=int))
    m = problem.dictionary.shape[0]
    log_beta = np.log(problem.noise_precision)
    ga, g = gamma_anchor[J], gamma[J]
    # phi(s_anchor) = log det(Gamma^-1 + beta F^T F) restricted to J
    phi = ev.logdet - np.sum(np.log(ga)) + m * log_beta
    return float(phi + np.sum(ev.cov_diag[J] * (1.0 / g - 1.0 / ga)) + np.sum(np.log(g)) - m * log_beta)


def psi_hessian(gamma, problem):
    """Hessian of ``Psi(theta) = log det S(theta^-2)`` at ``theta = gamma^-1/2``.

    Dense in ``Z``; limited to ``n <= 64`` and strictly positive ``gamma``.
    """
    gamma = _check_gamma(gamma, problem)
    n = gamma.shape[0]
    if n > _HESSIAN_MAX_N:
        raise SBLInputError(f"psi_hessian materializes Z densely; n={n} exceeds {_HESSIAN_MAX_N}")
    if np.any(gamma <= 0):
        raise SBLInputError("psi_hessian needs strictly positive gamma")
    F = problem.dictionary
    _, Sinv = _dense_inverse(problem, gamma)
    Z = F.T @ Sinv @ F
    g32 = gamma**1.5
    H = -4.0 * Z * Z * np.outer(g32, g32)
    d = np.diag(Z)
    H[np.diag_indices(n)] = 6.0 * d * gamma**2 - 4.0 * d * d * gamma**3
    return H
