"""Scikit-learn compatible regressor for the Laplacian multi-user kernel.

The last column of ``X`` holds the integer user id; the remaining columns are
the arm context. The fitted mean is the kernel Laplacian-regularized
least-squares solution, which coincides with the GP posterior mean.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import ValidationError
from .graph import UserGraph, build_laplacian
from .kernel import MultiUserKernel, make_base_kernel
from .posterior import _cholesky_jittered, solve_posterior


def split_user_column(X, n_users):
    contexts = X[:, :-1]
    users = X[:, -1]
    if not np.all(users == np.round(users)):
        raise ValidationError("user column must hold integer ids")
    users = users.astype(int)
    if users.size and (users.min() < 0 or users.max() >= n_users):
        raise ValidationError(f"user id out of range [0, {n_users})")
    return contexts, users


class MultiUserGPRegressor(RegressorMixin, BaseEstimator):
    """GP regression with kernel ``[(L + rho I)^{-1}]_{uu'} K_x(x, x')``.

    Parameters
    ----------
    weights : (n, n) array
        Symmetric non-negative user-graph weights.
    rho : float
        Laplacian ridge.
    alpha : float
        Noise variance / ridge added to the Gram diagonal.
    kernel : {"se", "linear"}
    lengthscale : float or "median"
        SE lengthscale; ``"median"`` uses the median pairwise distance of the
        training contexts.
    """

    def __init__(self, weights=None, rho=0.1, alpha=1.0, kernel="se", lengthscale=1.0):
        self.weights = weights
        self.rho = rho
        self.alpha = alpha
        self.kernel = kernel
        self.lengthscale = lengthscale

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if self.weights is None:
            raise ValidationError("weights (user graph) are required")
        self.graph_ = UserGraph(self.weights)
        self.spectrum_ = build_laplacian(self.graph_, self.rho)
        contexts, users = split_user_column(X, self.graph_.n)
        base = make_base_kernel(self.kernel, self.lengthscale, pool=contexts)
        self.kernel_ = MultiUserKernel(base, self.spectrum_)
        self.X_train_, self.users_train_, self.y_train_ = contexts, users, y
        gram = self.kernel_.gram(contexts, users)
        self.L_ = _cholesky_jittered(gram + self.alpha * np.eye(y.size))
        self.dual_coef_ = np.linalg.solve(self.L_.T, np.linalg.solve(self.L_, y))
        self.information_gain_ = float(2.0 * np.sum(np.log(np.diag(self.L_)))
                                       - y.size * np.log(self.alpha))
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, return_std=False):
        check_is_fitted(self, "dual_coef_")
        X = check_array(X)
        contexts, users = split_user_column(X, self.graph_.n)
        cross = self.kernel_(self.X_train_, self.users_train_, contexts, users)
        if not return_std:
            return cross.T @ self.dual_coef_
        gram = self.kernel_.gram(self.X_train_, self.users_train_)
        mean, var = solve_posterior(gram, self.y_train_, cross,
                                    self.kernel_.diag(contexts, users), self.alpha)
        return mean, np.sqrt(np.maximum(var, 0.0))
