"""Arm-selection policies.

Every policy follows the same round protocol::

    policy.initialize(pool, spectrum, horizon, random_state)
    pos = policy.select(user, candidates)        # index into ``candidates``
    policy.update(user, candidates[pos], reward)

Hyperparameters live in ``__init__`` (scikit-learn convention), so
``get_params``/``set_params``/``clone`` drive pilot tuning. State created
by ``initialize`` carries a trailing underscore.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import ParameterError, ProtocolError
from .graph import LaplacianSpectrum, spectral_scale
from .kernel import AgentKernel, agent_kernel_matrix, make_base_kernel
from .posterior import GridPosterior
from .rng import as_generator
from .schedule import is_epoch_boundary, lambda_schedule, needs_rebuild

TIE_TOL = 1e-12
MAX_LINEAR_DIM = 4000


def argmax_lowest(scores) -> int:
    """Argmax with ties (within a relative ``1e-12``) resolved to the lowest index."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ProtocolError("empty candidate set")
    best = scores.max()
    return int(np.flatnonzero(scores >= best - TIE_TOL * max(1.0, abs(best)))[0])


def select_ucb(mu, sigma, beta) -> int:
    return argmax_lowest(np.asarray(mu) + beta * np.asarray(sigma))


def select_ts(mu, sigma, nu, rng) -> int:
    """One standard normal per candidate, consumed in candidate order."""
    mu = np.asarray(mu, dtype=float)
    if mu.size == 0:
        raise ProtocolError("empty candidate set")
    z = as_generator(rng).standard_normal(mu.size)
    return argmax_lowest(mu + nu * z * np.asarray(sigma))


@dataclass
class ConfidenceParams:
    B_rho: float = 1.0
    sigma_sub: float = 0.1
    delta: float = 0.05
    lam: float = 1.0
    logdet: float = 0.0

    def __post_init__(self):
        if not 0 < self.delta <= 1:
            raise ParameterError(f"delta must lie in (0, 1], got {self.delta}")
        if self.B_rho < 0 or self.sigma_sub < 0 or self.lam <= 0:
            raise ParameterError("B_rho, sigma_sub must be >= 0 and lambda > 0")


def theoretical_beta(cp: ConfidenceParams, t: int | None = None) -> float:
    """``B + sqrt(sigma^2/lam * (2 log(1/delta) + logdet(I + K_t/lam)))``.

    ``t`` is informational; the width depends on ``t`` only through the
    running log-determinant.
    """
    inner = 2.0 * math.log(1.0 / cp.delta) + cp.logdet
    return cp.B_rho + math.sqrt(cp.sigma_sub**2 / cp.lam * max(inner, 0.0))


def _check_candidates(candidates):
    cands = np.asarray(candidates, dtype=int).ravel()
    if cands.size == 0:
        raise ProtocolError("empty candidate set")
    return cands


class Policy(BaseEstimator):
    """Base class; subclasses set ``exploration_param``."""

    exploration_param = None
    requires_truth = False

    def initialize(self, pool, spectrum: LaplacianSpectrum, horizon: int, random_state=None):
        self.pool_ = np.asarray(pool, dtype=float)
        self.spectrum_ = spectrum
        self.horizon_ = int(horizon)
        self.rng_ = as_generator(random_state)
        self.t_ = 0
        self._setup()
        return self

    def _setup(self):
        pass

    def select(self, user: int, candidates) -> int:
        raise NotImplementedError

    def update(self, user: int, arm: int, reward: float) -> None:
        self.t_ += 1


# -- kernel policies ------------------------------------------------------------


class _GPPolicy(Policy):
    """Shared machinery for GP learners on a product kernel."""

    def _user_matrix(self):
        raise NotImplementedError

    def _setup(self):
        self.base_kernel_ = make_base_kernel(self.kernel, self.lengthscale, pool=self.pool_)
        self.s_spec_, self.s_spec_degenerate_ = self._spectral_scale()
        lam = self._scheduled_lambda(0)
        self.posterior_ = GridPosterior(self._user_matrix(), self.base_kernel_(self.pool_), lam,
                                        t_star=self.t_star)
        self.rebuilds_ = 0

    def _spectral_scale(self):
        return spectral_scale(self.spectrum_)

    def _scheduled_lambda(self, t):
        if not self.schedule:
            return float(self.lambda_base)
        return lambda_schedule(self.lambda_base, self.s_spec_, self.horizon_, t)

    def confidence_params(self) -> ConfidenceParams:
        return ConfidenceParams(self.B, self.sigma, self.delta, self.posterior_.lam,
                                self.posterior_.logdet)

    def width(self, scalar) -> float:
        if self.exploration == "theoretical":
            return theoretical_beta(self.confidence_params(), self.t_)
        if self.exploration != "tuned":
            raise ParameterError(f"exploration must be 'tuned' or 'theoretical', got {self.exploration!r}")
        return float(scalar)

    def predict(self, user, candidates):
        return self.posterior_.predict(user, _check_candidates(candidates))

    def update(self, user, arm, reward):
        self.posterior_.update(user, arm, reward)
        self.t_ += 1
        new_kernel = self._refresh_user_matrix()
        new_lam = None
        if self.schedule and is_epoch_boundary(self.t_):
            proposed = self._scheduled_lambda(self.t_)
            if needs_rebuild(self.posterior_.lam, proposed):
                new_lam = proposed
        if new_kernel is not None or new_lam is not None:
            self.posterior_.rebuild(user_matrix=new_kernel, lam=new_lam)
            self.rebuilds_ += 1

    def _refresh_user_matrix(self):
        return None


class LKGPUCB(_GPPolicy):
    """Laplacian-kernelized GP-UCB.

    Parameters
    ----------
    beta : float
        Confidence scale (used when ``exploration="tuned"``).
    rho : float
        Laplacian ridge of the user kernel ``(L + rho I)^{-1}``.
    kernel, lengthscale :
        Base arm kernel; ``lengthscale="median"`` applies the median heuristic to the pool.
    lambda_base : float
        Ridge before the spectral/time schedule.
    schedule : bool
        Apply the ridge schedule; ``False`` keeps ``lambda_base`` fixed.
    t_star : int, float or None
        Exact-to-recursive switch, ``None`` for the default rule.
    exploration : {"tuned", "theoretical"}
        ``"theoretical"`` replaces ``beta`` by the confidence width built from
        ``B``, ``sigma``, ``delta`` and the running log-determinant.
    """

    exploration_param = "beta"

    def __init__(self, beta=1.0, rho=0.1, kernel="se", lengthscale="median", lambda_base=0.05,
                 schedule=True, t_star=None, exploration="tuned", B=1.0, sigma=0.1, delta=0.05):
        self.beta = beta
        self.rho = rho
        self.kernel = kernel
        self.lengthscale = lengthscale
        self.lambda_base = lambda_base
        self.schedule = schedule
        self.t_star = t_star
        self.exploration = exploration
        self.B = B
        self.sigma = sigma
        self.delta = delta

    def _user_matrix(self):
        return self.spectrum_.with_rho(self.rho).inv_reg

    def select(self, user, candidates):
        mu, sigma = self.predict(user, candidates)
        return select_ucb(mu, sigma, self.width(self.beta))


class LKGPTS(_GPPolicy):
    """Laplacian-kernelized GP Thompson sampling (perturbed-mean form)."""

    exploration_param = "nu"

    def __init__(self, nu=1.0, rho=0.1, kernel="se", lengthscale="median", lambda_base=0.05,
                 schedule=True, t_star=None, exploration="tuned", B=1.0, sigma=0.1, delta=0.05):
        self.nu = nu
        self.rho = rho
        self.kernel = kernel
        self.lengthscale = lengthscale
        self.lambda_base = lambda_base
        self.schedule = schedule
        self.t_star = t_star
        self.exploration = exploration
        self.B = B
        self.sigma = sigma
        self.delta = delta

    def _user_matrix(self):
        return self.spectrum_.with_rho(self.rho).inv_reg

    def select(self, user, candidates):
        mu, sigma = self.predict(user, candidates)
        return select_ts(mu, sigma, self.width(self.nu), self.rng_)


class GPUCB(LKGPUCB):
    """GP-UCB on the arm kernel alone: one independent GP per user (``rho`` is ignored).

    The graph is invisible to this learner, so the ridge schedule sees an
    edgeless graph as well.
    """

    def _user_matrix(self):
        return np.eye(self.spectrum_.n)

    def _spectral_scale(self):
        return 0.0, True


class CoopKernelUCB(_GPPolicy):
    """UCB on the product kernel ``K_z (x) K_x`` with a configurable agent kernel."""

    exploration_param = "beta"

    def __init__(self, beta=1.0, agent_kernel="learned_mmd", agent_rho=0.1, tau=1.0, k=8,
                 feature_dim=256, update_interval=200, min_count=5, kernel="se",
                 lengthscale="median", lambda_base=0.05, schedule=True, t_star=None,
                 exploration="tuned", B=1.0, sigma=0.1, delta=0.05):
        self.beta = beta
        self.agent_kernel = agent_kernel
        self.agent_rho = agent_rho
        self.tau = tau
        self.k = k
        self.feature_dim = feature_dim
        self.update_interval = update_interval
        self.min_count = min_count
        self.kernel = kernel
        self.lengthscale = lengthscale
        self.lambda_base = lambda_base
        self.schedule = schedule
        self.t_star = t_star
        self.exploration = exploration
        self.B = B
        self.sigma = sigma
        self.delta = delta

    def _user_matrix(self):
        ell = getattr(self.base_kernel_, "lengthscale", 1.0)
        self.agent_ = AgentKernel(self.agent_kernel, rho=self.agent_rho, tau=self.tau, k=self.k,
                                  feature_dim=self.feature_dim, update_interval=self.update_interval,
                                  min_count=self.min_count, lengthscale=ell,
                                  seed=int(self.rng_.integers(2**31 - 1)))
        return agent_kernel_matrix(self.agent_, self.spectrum_)

    def _refresh_user_matrix(self):
        if not self.agent_.time_varying or self.t_ % self.update_interval:
            return None
        users, arms, _ = self.posterior_.history
        return agent_kernel_matrix(self.agent_, self.spectrum_, (users, self.pool_[arms]))

    def select(self, user, candidates):
        mu, sigma = self.predict(user, candidates)
        return select_ucb(mu, sigma, self.width(self.beta))


# -- linear policies ------------------------------------------------------------


class _LinearPolicy(Policy):
    """LinUCB in a design space chosen by the subclass; ``M^{-1}`` kept by Sherman-Morrison."""

    exploration_param = "alpha"

    def _block(self, user):
        raise NotImplementedError

    def select(self, user, candidates):
        cands = _check_candidates(candidates)
        x = self.pool_[cands]
        minv, theta = self._block(user)
        width = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", x, minv, x), 0.0))
        return argmax_lowest(x @ theta + self.alpha * width)


class PerUserLinUCB(_LinearPolicy):
    """Independent ridge LinUCB per user."""

    def __init__(self, alpha=1.0, ridge=1.0):
        self.alpha = alpha
        self.ridge = ridge

    def _setup(self):
        n, d = self.spectrum_.n, self.pool_.shape[1]
        self.minv_ = np.tile(np.eye(d) / self.ridge, (n, 1, 1))
        self.b_ = np.zeros((n, d))

    def _block(self, user):
        return self.minv_[user], self.minv_[user] @ self.b_[user]

    def update(self, user, arm, reward):
        x = self.pool_[arm]
        v = self.minv_[user] @ x
        s = v / math.sqrt(1.0 + x @ v)
        self.minv_[user] -= np.outer(s, s)
        self.b_[user] += reward * x
        self.t_ += 1


class PooledLinUCB(_LinearPolicy):
    """A single LinUCB shared by all users."""

    def __init__(self, alpha=1.0, ridge=1.0):
        self.alpha = alpha
        self.ridge = ridge

    def _setup(self):
        d = self.pool_.shape[1]
        self.minv_ = np.eye(d) / self.ridge
        self.b_ = np.zeros(d)

    def _block(self, user):
        return self.minv_, self.minv_ @ self.b_

    def update(self, user, arm, reward):
        x = self.pool_[arm]
        v = self.minv_ @ x
        s = v / math.sqrt(1.0 + x @ v)
        self.minv_ -= np.outer(s, s)
        self.b_ += reward * x
        self.t_ += 1


class GraphUCB(_LinearPolicy):
    """Laplacian-regularized LinUCB on the ``n*d`` stacked parameter.

    The regularizer is ``(L + rho I) (x) I_d``; features are ``e_u (x) x``.
    """

    def __init__(self, alpha=1.0, rho=0.1):
        self.alpha = alpha
        self.rho = rho

    def _setup(self):
        n, d = self.spectrum_.n, self.pool_.shape[1]
        if n * d > MAX_LINEAR_DIM:
            raise ParameterError(f"graph design dimension {n * d} exceeds {MAX_LINEAR_DIM}")
        self.d_ = d
        self.minv_ = np.kron(self.spectrum_.with_rho(self.rho).inv_reg, np.eye(d))
        self.b_ = np.zeros(n * d)

    def _slice(self, user):
        return slice(user * self.d_, (user + 1) * self.d_)

    def _block(self, user):
        sl = self._slice(user)
        return self.minv_[sl, sl], self.minv_[sl] @ self.b_

    def update(self, user, arm, reward):
        sl = self._slice(user)
        x = self.pool_[arm]
        v = self.minv_[:, sl] @ x
        s = v / math.sqrt(1.0 + x @ v[sl])
        self.minv_ -= np.outer(s, s)
        self.b_[sl] += reward * x
        self.t_ += 1


class GoBLin(GraphUCB):
    """Gang-of-bandits linear UCB: GraphUCB with regularizer ``I + L``."""

    def __init__(self, alpha=1.0):
        self.alpha = alpha

    @property
    def rho(self):
        return 1.0


class OraclePolicy(Policy):
    """Picks the true best candidate. Test and calibration helper only."""

    requires_truth = True

    def __init__(self, scale=1.0):
        self.scale = scale

    def attach_truth(self, truth):
        self.truth_ = np.asarray(truth)

    def select(self, user, candidates):
        cands = _check_candidates(candidates)
        return argmax_lowest(self.truth_[user, cands])


POLICIES = {
    "lk_gp_ucb": LKGPUCB,
    "lk_gp_ts": LKGPTS,
    "gp_ucb": GPUCB,
    "coop_kernel_ucb": CoopKernelUCB,
    "gob_lin": GoBLin,
    "graph_ucb": GraphUCB,
    "pooled_linucb": PooledLinUCB,
    "peruser_linucb": PerUserLinUCB,
    "oracle": OraclePolicy,
}


def make_policy(algo: str, **params) -> Policy:
    try:
        cls = POLICIES[algo]
    except KeyError:
        raise ParameterError(f"unknown algorithm {algo!r}; choose from {sorted(POLICIES)}") from None
    try:
        return cls(**params)
    except TypeError as exc:
        raise ParameterError(f"bad parameters for {algo}: {exc}") from None
