"""Sparse Bayesian learning hyperparameter estimation.

Evidence evaluation, the EM / MacKay / convex-bounding / AMQ updates, a
scalar denoising rate analyzer and a seeded experiment harness.
"""
from .algorithms import (ALGORITHMS, AlgorithmConfig, ConvergenceTrace, RunResult, Status,
                         amq_blend, amq_half_step, cb_update, em_update, mk_update, run,
                         step_size_next)
from .core import (EvidenceDerivatives, PosteriorMoments, ProblemInstance, active_set,
                   auxiliary_objective, em_surrogate_value, evidence_derivatives,
                   evidence_objective, log_det_covariance, posterior_moments, psi_hessian)
from .estimator import SBLRegressor
from .exceptions import SBLInputError, SBLNumericalError, WindowTooShortError

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS",
    "AlgorithmConfig",
    "ConvergenceTrace",
    "EvidenceDerivatives",
    "PosteriorMoments",
    "ProblemInstance",
    "RunResult",
    "SBLInputError",
    "SBLNumericalError",
    "SBLRegressor",
    "Status",
    "WindowTooShortError",
    "active_set",
    "amq_blend",
    "amq_half_step",
    "auxiliary_objective",
    "cb_update",
    "em_surrogate_value",
    "em_update",
    "evidence_derivatives",
    "evidence_objective",
    "log_det_covariance",
    "mk_update",
    "posterior_moments",
    "psi_hessian",
    "run",
    "step_size_next",
]
