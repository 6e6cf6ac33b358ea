"""scikit-learn style wrapper around :func:`sbl_aml.algorithms.run`."""
import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .algorithms import AlgorithmConfig, Status, run
from .core import ProblemInstance

__all__ = ["SBLRegressor"]


class SBLRegressor(RegressorMixin, BaseEstimator):
    """Sparse Bayesian linear regression with a fixed noise precision.

    ``X`` plays the role of the dictionary and ``y`` the observation; the
    prior variances ``gamma`` are estimated by the selected scheme and
    the posterior mean gives the coefficients.

    Parameters
    ----------
    algorithm : {"em", "mk", "cb", "amq"}, default="amq"
    beta : float, default=1.0
        Noise precision (inverse noise variance).
    tau : float, default=1e-10
        Proximal weight of the AMQ update.
    epsilon : float, default=0.02
        Step-size decay of the AMQ update.
    eta0 : float, default=1.0
        Initial AMQ step size.
    rel_tol : float, default=1e-3
        Stop once ``||gamma_new - gamma|| / ||gamma||`` falls below this.
    max_iter : int, default=10000
    prune_tol : float, default=1e-12
    gamma0 : float or array-like, default=1.0
        Start point, broadcast to ``n_features``.

    Attributes
    ----------
    gamma_ : ndarray of shape (n_features,)
    coef_ : ndarray of shape (n_features,)
        Posterior mean at ``gamma_``.
    sigma_diag_ : ndarray of shape (n_features,)
        Diagonal of the posterior covariance.
    active_ : ndarray of int
        Indices with ``gamma_ > 0``.
    trace_ : ConvergenceTrace
    status_ : str
    n_iter_ : int
    objective_ : float

    Examples
    --------
    >>> import numpy as np
    >>> from sbl_aml import SBLRegressor
    >>> X = np.eye(3); y = np.array([3.0, 0.1, -2.0])
    >>> model = SBLRegressor(algorithm="mk", beta=1.0).fit(X, y)
    >>> model.active_
    array([0, 2])
    """

    def __init__(self, algorithm="amq", beta=1.0, tau=1e-10, epsilon=0.02, eta0=1.0,
                 rel_tol=1e-3, max_iter=10000, prune_tol=1e-12, gamma0=1.0):
        self.algorithm = algorithm
        self.beta = beta
        self.tau = tau
        self.epsilon = epsilon
        self.eta0 = eta0
        self.rel_tol = rel_tol
        self.max_iter = max_iter
        self.prune_tol = prune_tol
        self.gamma0 = gamma0

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        config = AlgorithmConfig(self.algorithm, self.tau, self.epsilon, self.eta0,
                                 self.max_iter, self.rel_tol, self.prune_tol)
        problem = ProblemInstance(X, y, self.beta)
        gamma0 = np.broadcast_to(np.asarray(self.gamma0, dtype=float), (X.shape[1],)).copy()
        gamma, moments, trace = run(problem, gamma0, config)
        self.gamma_ = gamma
        self.coef_ = moments.mean
        self.sigma_diag_ = moments.cov_diag
        self.active_ = np.flatnonzero(gamma > 0)
        self.trace_ = trace
        self.status_ = Status(trace.status).value
        self.n_iter_ = trace.n_iter
        self.objective_ = trace.objective[-1] if trace.objective else np.nan
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_
