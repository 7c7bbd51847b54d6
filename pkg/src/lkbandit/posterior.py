"""GP posterior over the ``users x pool`` grid.

Two phases share one object:

* exact: the Cholesky factor of ``K_t + lam I`` is grown one row per
  observation (Schur complement of the new point);
* recursive: mean, variance and the full grid covariance table ``q`` are
  updated with rank-one recursions, ``O(|grid|^2)`` per step.

:meth:`GridPosterior.update` switches from exact to recursive once, at
``t == t_star``, by materializing ``q`` from the exact state.
"""
from __future__ import annotations

import logging
import math

import numpy as np
from scipy.linalg import blas, cho_solve, cholesky, solve_triangular

from .exceptions import NumericalError, ParameterError, ValidationError

log = logging.getLogger(__name__)

JITTER = 1e-8
T_STAR_CAP = 1500


def icbrt(n: int) -> int:
    """Integer cube root, ``floor(n ** (1/3))`` without float error."""
    r = int(round(n ** (1.0 / 3.0)))
    while r**3 > n:
        r -= 1
    while (r + 1) ** 3 <= n:
        r += 1
    return r


def default_t_star(n_users: int, pool_size: int) -> int:
    return min(T_STAR_CAP, icbrt(n_users) * pool_size)


class GridPosterior:
    """Posterior of a product kernel ``user_matrix[u,u'] * arm_gram[i,i']``.

    Parameters
    ----------
    user_matrix : (n, n) array
        User kernel, e.g. ``(L + rho I)^{-1}``.
    arm_gram : (m, m) array
        Arm kernel on the context pool.
    lam : float
        Ridge / noise variance.
    t_star : int, float or None
        Phase switch. ``None`` uses ``min(1500, floor(n^(1/3)) * m)``;
        ``0`` runs purely recursive, ``math.inf`` purely exact.
    """

    def __init__(self, user_matrix, arm_gram, lam, t_star=None, symmetry_check_every=50):
        if not lam > 0:
            raise ParameterError(f"lambda must be > 0, got {lam}")
        self.user_matrix = np.ascontiguousarray(user_matrix, dtype=float)
        self.arm_gram = np.ascontiguousarray(arm_gram, dtype=float)
        self.n, self.m = self.user_matrix.shape[0], self.arm_gram.shape[0]
        self.lam = float(lam)
        self.t_star = default_t_star(self.n, self.m) if t_star is None else t_star
        self.symmetry_check_every = symmetry_check_every
        self.clip_count = 0
        self.symmetry_violations = 0
        self.diagnostics = []  # (t, clip_count, logdet_increment)
        self._users = np.empty(0, dtype=int)
        self._arms = np.empty(0, dtype=int)
        self._y = np.empty(0)
        self._reset_exact()

    # -- bookkeeping -----------------------------------------------------------

    @property
    def t(self) -> int:
        return self._users.size

    @property
    def size(self) -> int:
        return self.n * self.m

    @property
    def history(self):
        return self._users.copy(), self._arms.copy(), self._y.copy()

    def _reset_exact(self):
        self.phase = "exact"
        self._chol = np.zeros((16, 16))
        self._white_y = np.zeros(16)
        self.mu = self.var = self.q = None
        self.logdet = 0.0

    def _check_index(self, users, arms):
        users = np.asarray(users, dtype=int)
        arms = np.asarray(arms, dtype=int)
        if np.any((users < 0) | (users >= self.n)) or np.any((arms < 0) | (arms >= self.m)):
            raise ValidationError("query outside the tracked grid")
        return users, arms

    def kernel(self, users, arms, users2, arms2) -> np.ndarray:
        """Cross-kernel matrix between two lists of grid points."""
        return (self.user_matrix[np.ix_(users, users2)]
                * self.arm_gram[np.ix_(arms, arms2)])

    def prior_diag(self, users, arms) -> np.ndarray:
        return self.user_matrix[users, users] * self.arm_gram[arms, arms]

    def grid_gram(self) -> np.ndarray:
        k = np.kron(self.user_matrix, self.arm_gram)
        return 0.5 * (k + k.T)

    # -- prediction --------------------------------------------------------------

    def predict(self, users, arms):
        """Posterior mean and standard deviation at grid points.

        ``users`` may be a scalar broadcast against an array of ``arms``.
        Negative variances from roundoff are clipped to zero.
        """
        users, arms = np.broadcast_arrays(*self._check_index(users, arms))
        scalar = users.ndim == 0
        users, arms = np.atleast_1d(users).ravel(), np.atleast_1d(arms).ravel()
        if self.phase == "recursive":
            g = users * self.m + arms
            mu, var = self.mu[g].copy(), self.var[g].copy()
        else:
            mu, var = self._predict_exact(users, arms)
        neg = var < 0
        if np.any(neg):
            self.clip_count += int(neg.sum())
            var[neg] = 0.0
        sigma = np.sqrt(var)
        if scalar:
            return float(mu[0]), float(sigma[0])
        return mu, sigma

    def _predict_exact(self, users, arms):
        var = self.prior_diag(users, arms)
        t = self.t
        if t == 0:
            return np.zeros(users.size), var
        k = self.kernel(self._users, self._arms, users, arms)
        v = solve_triangular(self._chol[:t, :t], k, lower=True, check_finite=False)
        return v.T @ self._white_y[:t], var - np.einsum("ij,ij->j", v, v)

    def covariance(self, users, arms, users2, arms2) -> np.ndarray:
        """Posterior covariance between two sets of grid points."""
        users, arms = self._check_index(users, arms)
        users2, arms2 = self._check_index(users2, arms2)
        if self.phase == "recursive":
            return self.q[np.ix_(users * self.m + arms, users2 * self.m + arms2)].copy()
        cov = self.kernel(users, arms, users2, arms2)
        if self.t:
            L = self._chol[:self.t, :self.t]
            a = solve_triangular(L, self.kernel(self._users, self._arms, users, arms), lower=True)
            b = solve_triangular(L, self.kernel(self._users, self._arms, users2, arms2), lower=True)
            cov = cov - a.T @ b
        return cov

    # -- updates ---------------------------------------------------------------

    def update(self, user: int, arm: int, y: float) -> None:
        """Hybrid step: exact below ``t_star``, one materialization at ``t_star``, recursive after."""
        if self.phase == "exact" and self.t >= self.t_star:
            self.materialize()
        if self.phase == "exact":
            self.update_exact(user, arm, y)
        else:
            self.update_recursive(user, arm, y)

    def _append(self, user, arm, y):
        self._users = np.append(self._users, user)
        self._arms = np.append(self._arms, arm)
        self._y = np.append(self._y, y)

    def _grow(self):
        cap = self._chol.shape[0]
        if self.t < cap:
            return
        chol = np.zeros((2 * cap, 2 * cap))
        chol[:cap, :cap] = self._chol
        self._chol = chol
        self._white_y = np.concatenate([self._white_y, np.zeros(cap)])

    def update_exact(self, user: int, arm: int, y: float) -> None:
        """Append one observation and extend the Cholesky factor by one row."""
        if self.phase != "exact":
            raise ValidationError("update_exact called in recursive phase")
        if not np.isfinite(y):
            raise ValidationError(f"reward must be finite, got {y}")
        (user, arm) = (int(v) for v in self._check_index(user, arm))
        t = self.t
        self._grow()
        kdiag = self.user_matrix[user, user] * self.arm_gram[arm, arm]
        if t:
            k = self.kernel(self._users, self._arms, [user], [arm])[:, 0]
            row = solve_triangular(self._chol[:t, :t], k, lower=True, check_finite=False)
        else:
            row = np.zeros(0)
        pivot2 = kdiag + self.lam - row @ row
        if pivot2 <= 0:
            pivot2 += JITTER
            if pivot2 <= 0:
                raise NumericalError(f"non-positive Cholesky pivot {pivot2} at t={t}")
        pivot = math.sqrt(pivot2)
        self._chol[t, :t] = row
        self._chol[t, t] = pivot
        self._white_y[t] = (y - row @ self._white_y[:t]) / pivot
        self._append(user, arm, y)
        inc = math.log(pivot2 / self.lam)
        self.logdet += inc
        self.diagnostics.append((self.t, self.clip_count, inc))

    def materialize(self) -> None:
        """Switch to the recursive phase, building mean, variance and ``q`` on the grid."""
        if self.phase == "recursive":
            return
        q = self.grid_gram()
        t = self.t
        if t:
            gu = np.repeat(np.arange(self.n), self.m)
            ga = np.tile(np.arange(self.m), self.n)
            kx = self.kernel(self._users, self._arms, gu, ga)
            v = solve_triangular(self._chol[:t, :t], kx, lower=True, check_finite=False)
            mu = v.T @ self._white_y[:t]
            q -= v.T @ v
            q = 0.5 * (q + q.T)
        else:
            mu = np.zeros(self.size)
        self.mu, self.q = mu, np.asfortranarray(q)
        self.var = np.diag(q).copy()
        self.phase = "recursive"
        self._chol = self._white_y = None

    def update_recursive(self, user: int, arm: int, y: float) -> None:
        """Rank-one update of mean, variance and covariance table at every grid point."""
        if self.phase != "recursive":
            raise ValidationError("update_recursive called in exact phase")
        if not np.isfinite(y):
            raise ValidationError(f"reward must be finite, got {y}")
        (user, arm) = (int(v) for v in self._check_index(user, arm))
        g = user * self.m + arm
        var_g = max(self.var[g], 0.0)
        denom = self.lam + var_g
        assert denom > 0, "recursion denominator must be positive"
        col = self.q[:, g].copy()
        resid = y - self.mu[g]
        self.mu += col * (resid / denom)
        self.var -= col * col / denom
        s = col / math.sqrt(denom)
        # q is symmetric, so the Fortran view is the same matrix; update in place.
        self.q = blas.dger(-1.0, s, s, a=self.q, overwrite_a=True)
        neg = self.var < 0
        if np.any(neg):
            self.clip_count += int(neg.sum())
            self.var[neg] = 0.0
        self._append(user, arm, y)
        inc = math.log1p(var_g / self.lam)
        self.logdet += inc
        self.diagnostics.append((self.t, self.clip_count, inc))
        if self.symmetry_check_every and self.t % self.symmetry_check_every == 0:
            self.check_symmetry()

    def check_symmetry(self, tol: float = 1e-10) -> float:
        if self.q is None:
            return 0.0
        asym = float(np.max(np.abs(self.q - self.q.T)))
        if asym > tol:
            self.symmetry_violations += 1
            log.warning("covariance table asymmetry %.3g at t=%d", asym, self.t)
        return asym

    # -- rebuild -----------------------------------------------------------------

    def rebuild(self, user_matrix=None, lam=None) -> None:
        """Recompute the state from the stored history, optionally with a new kernel or ridge.

        The phase follows the hybrid rule for the current ``t``. Below
        ``t_star`` the Cholesky factor of the full history is refactored;
        otherwise the grid state is computed directly from per-grid-point
        observation counts and reward sums, which is algebraically identical to
        replaying every observation.
        """
        if user_matrix is not None:
            self.user_matrix = np.ascontiguousarray(user_matrix, dtype=float)
        if lam is not None:
            if not lam > 0:
                raise ParameterError(f"lambda must be > 0, got {lam}")
            self.lam = float(lam)
        users, arms, y = self._users, self._arms, self._y
        t = users.size
        self._reset_exact()
        if t < self.t_star:
            if t == 0:
                return
            sigma = self.kernel(users, arms, users, arms) + self.lam * np.eye(t)
            chol = _cholesky_jittered(sigma)
            cap = max(16, 1 << (t - 1).bit_length())
            self._chol = np.zeros((cap, cap))
            self._chol[:t, :t] = chol
            self._white_y = np.zeros(cap)
            self._white_y[:t] = solve_triangular(chol, y, lower=True)
            self.logdet = 2.0 * np.sum(np.log(np.diag(chol))) - t * math.log(self.lam)
            return
        self._rebuild_grid(users * self.m + arms, y)

    def _rebuild_grid(self, g_hist, y):
        size = self.size
        counts = np.bincount(g_hist, minlength=size).astype(float)
        sums = np.bincount(g_hist, weights=y, minlength=size)
        vis = np.flatnonzero(counts)
        root = np.sqrt(counts[vis])
        k = self.grid_gram()
        k_vg = k[vis]
        a = root[:, None] * k_vg[:, vis] * root[None, :] + self.lam * np.eye(vis.size)
        chol = _cholesky_jittered(a)
        w = solve_triangular(chol, root[:, None] * k_vg, lower=True)
        z = solve_triangular(chol, sums[vis] / root, lower=True)
        q = k - w.T @ w
        q = 0.5 * (q + q.T)
        self.mu = w.T @ z
        self.q = np.asfortranarray(q)
        self.var = np.diag(q).copy()
        self.phase = "recursive"
        self._chol = self._white_y = None
        self.logdet = 2.0 * np.sum(np.log(np.diag(chol))) - vis.size * math.log(self.lam)

    def diagnostics_csv(self) -> str:
        lines = ["t,clip_count,logdet_increment"]
        lines += [f"{t},{c},{inc!r}" for t, c, inc in self.diagnostics]
        return "\n".join(lines) + "\n"


def _cholesky_jittered(a):
    try:
        return cholesky(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        try:
            return cholesky(a + JITTER * np.eye(a.shape[0]), lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("Cholesky failed after jitter") from exc


def solve_posterior(k_train, y, k_cross, k_query_diag, lam):
    """Dense posterior mean and variance (used by the estimator API)."""
    chol = _cholesky_jittered(k_train + lam * np.eye(k_train.shape[0]))
    mean = k_cross.T @ cho_solve((chol, True), y)
    v = solve_triangular(chol, k_cross, lower=True)
    return mean, k_query_diag - np.einsum("ij,ij->j", v, v)
