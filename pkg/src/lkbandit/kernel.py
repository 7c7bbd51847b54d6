"""Arm kernels, the multi-user kernel and the agent kernels used by Coop-KernelUCB.

Grid convention: a pool of ``m`` arms and ``n`` users is flattened user-major,
``g = u * m + i``, so the grid Gram of a product kernel is
``np.kron(user_matrix, arm_gram)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist
from sklearn.kernel_approximation import RBFSampler
from sklearn.metrics.pairwise import linear_kernel, rbf_kernel

from .exceptions import ParameterError, ValidationError
from .graph import LaplacianSpectrum


def median_lengthscale(points: np.ndarray) -> float:
    """Median of the non-zero pairwise Euclidean distances (1.0 if there are none)."""
    d = pdist(np.atleast_2d(points))
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


def _as_2d(x):
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


@dataclass(frozen=True)
class SquaredExponential:
    """``exp(-||x - x'||^2 / (2 l^2))``."""

    lengthscale: float = 1.0

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise ParameterError(f"lengthscale must be > 0, got {self.lengthscale}")

    @property
    def variance_bound(self) -> float:
        return 1.0

    def __call__(self, X, Y=None) -> np.ndarray:
        X = _as_2d(X)
        Y = X if Y is None else _as_2d(Y)
        if X.shape[1] != Y.shape[1]:
            raise ValidationError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
        return rbf_kernel(X, Y, gamma=0.5 / self.lengthscale**2)

    def diag(self, X) -> np.ndarray:
        return np.ones(_as_2d(X).shape[0])


@dataclass(frozen=True)
class LinearKernel:
    """``x . x'``."""

    @property
    def variance_bound(self) -> float:
        # Contexts are unit-normalized throughout the package.
        return 1.0

    def __call__(self, X, Y=None) -> np.ndarray:
        X = _as_2d(X)
        Y = X if Y is None else _as_2d(Y)
        if X.shape[1] != Y.shape[1]:
            raise ValidationError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
        return linear_kernel(X, Y)

    def diag(self, X) -> np.ndarray:
        X = _as_2d(X)
        return np.einsum("ij,ij->i", X, X)


def make_base_kernel(kind: str = "se", lengthscale="median", pool=None):
    """Build a base kernel; ``lengthscale="median"`` applies the median heuristic on ``pool``."""
    if kind in ("se", "squared_exponential", "rbf"):
        if lengthscale == "median" or lengthscale is None:
            if pool is None:
                raise ParameterError("median lengthscale needs a context pool")
            lengthscale = median_lengthscale(pool)
        return SquaredExponential(float(lengthscale))
    if kind == "linear":
        return LinearKernel()
    raise ParameterError(f"unknown base kernel {kind!r}")


def eval_base(k, x, x2) -> float:
    x, x2 = np.asarray(x, dtype=float), np.asarray(x2, dtype=float)
    if x.shape != x2.shape:
        raise ValidationError(f"dimension mismatch: {x.shape} vs {x2.shape}")
    return float(k(x, x2)[0, 0])


class MultiUserKernel:
    """``K((x,u),(x',u')) = user_matrix[u, u'] * K_x(x, x')``.

    With a :class:`LaplacianSpectrum` the user matrix is ``(L + rho I)^{-1}``.
    Any other PSD ``n x n`` matrix may be passed instead (this is how the
    agent kernels of Coop-KernelUCB and the graph-free GP-UCB reuse it).
    """

    def __init__(self, base, user_matrix):
        self.base = base
        if isinstance(user_matrix, LaplacianSpectrum):
            self.spectrum = user_matrix
            user_matrix = user_matrix.inv_reg
        else:
            self.spectrum = None
        um = np.asarray(user_matrix, dtype=float)
        if um.ndim != 2 or um.shape[0] != um.shape[1]:
            raise ValidationError("user matrix must be square")
        self.user_matrix = um

    @property
    def n_users(self) -> int:
        return self.user_matrix.shape[0]

    @property
    def k_max(self) -> float:
        return self.base.variance_bound * float(np.max(np.diag(self.user_matrix)))

    def _check_users(self, users):
        users = np.atleast_1d(np.asarray(users))
        if users.size and (users.min() < 0 or users.max() >= self.n_users):
            raise ValidationError(f"user index out of range [0, {self.n_users})")
        return users.astype(int)

    def __call__(self, X, users, Y=None, users2=None) -> np.ndarray:
        users = self._check_users(users)
        if Y is None:
            Y, users2 = X, users
        users2 = self._check_users(users2)
        return self.user_matrix[np.ix_(users, users2)] * self.base(X, Y)

    def eval(self, x, u, x2, u2) -> float:
        return float(self(_as_2d(x), [u], _as_2d(x2), [u2])[0, 0])

    def gram(self, X, users) -> np.ndarray:
        X = _as_2d(X)
        if X.shape[0] == 0:
            raise ValidationError("gram needs at least one pair")
        return self(X, users)

    def diag(self, X, users) -> np.ndarray:
        users = self._check_users(users)
        return np.diag(self.user_matrix)[users] * self.base.diag(X)

    def grid_gram(self, pool) -> np.ndarray:
        """Gram over the full ``users x pool`` grid in user-major order."""
        return np.kron(self.user_matrix, self.base(pool))


def rkhs_penalty(weights, rho, coef, arm_gram) -> float:
    """Graph-smoothness plus ridge penalty of ``f_u = sum_i coef[u, i] K_x(., x_i)``.

    Computed term by term from the arm Gram matrix:
    ``0.5 * sum_ij w_ij ||f_i - f_j||^2 + rho * sum_i ||f_i||^2``.
    """
    w = np.asarray(weights, dtype=float)
    c = np.asarray(coef, dtype=float)
    inner = c @ arm_gram @ c.T
    sq = np.diag(inner)
    graph_term = 0.5 * np.sum(w * (sq[:, None] + sq[None, :] - 2.0 * inner))
    return float(graph_term + rho * np.sum(sq))


def representer_coefficients(user_matrix, alpha) -> np.ndarray:
    """Per-user arm coefficients of ``f = sum alpha_{v,i} K((., .), (x_i, v))``; alpha is ``n x m``."""
    return np.asarray(user_matrix) @ np.asarray(alpha)


# -- agent kernels -------------------------------------------------------------

AGENT_KINDS = ("laplacian_inv", "heat", "spectral_rbf", "all_ones", "learned_mmd")


def _median_bandwidth(emb):
    d = pdist(emb)
    d = d[d > 1e-12]
    return float(np.median(d)) if d.size else 1.0


def _rbf_on_embeddings(emb, bandwidth):
    d2 = np.sum((emb[:, None, :] - emb[None, :, :]) ** 2, axis=-1)
    return np.exp(-d2 / (2.0 * bandwidth**2))


@dataclass
class AgentKernel:
    """User-similarity kernel ``K_z`` for Coop-KernelUCB.

    ``learned_mmd`` embeds each user's observed contexts with random Fourier
    features of the SE arm kernel and compares mean embeddings with an RBF.
    Users with fewer than ``min_count`` observations only cooperate with
    themselves.
    """

    kind: str = "learned_mmd"
    rho: float = 0.1
    tau: float = 1.0
    k: int = 8
    bandwidth: Optional[float] = None
    feature_dim: int = 256
    update_interval: int = 200
    min_count: int = 5
    lengthscale: float = 1.0
    seed: int = 0
    last_bandwidth: Optional[float] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in AGENT_KINDS:
            raise ParameterError(f"unknown agent kernel {self.kind!r}")

    @property
    def time_varying(self) -> bool:
        return self.kind == "learned_mmd"

    def feature_map(self, dim: int) -> RBFSampler:
        rff = RBFSampler(gamma=0.5 / self.lengthscale**2, n_components=self.feature_dim,
                         random_state=self.seed)
        return rff.fit(np.zeros((1, dim)))


def agent_kernel_matrix(a: AgentKernel, spec: LaplacianSpectrum, history=None) -> np.ndarray:
    """Materialize ``K_z`` (``n x n``).

    ``history`` is ``(users, contexts)`` of past observations and is only
    read by ``learned_mmd``.
    """
    n = spec.n
    if a.kind == "laplacian_inv":
        return spec.inv_reg if a.rho == spec.rho else spec.with_rho(a.rho).inv_reg
    if a.kind == "heat":
        return spec.heat(a.tau)
    if a.kind == "all_ones":
        return np.ones((n, n))
    if a.kind == "spectral_rbf":
        if not 1 <= a.k < n:
            raise ParameterError(f"spectral_rbf needs 1 <= k < n, got k={a.k}, n={n}")
        emb = spec.eigenvectors[:, 1:a.k + 1]
        bw = a.bandwidth or _median_bandwidth(emb)
        a.last_bandwidth = bw
        return _rbf_on_embeddings(emb, bw)
    # learned_mmd
    kz = np.eye(n)
    if history is None:
        return kz
    users, contexts = history
    users = np.asarray(users, dtype=int)
    if users.size == 0:
        return kz
    contexts = _as_2d(contexts)
    feats = a.feature_map(contexts.shape[1]).transform(contexts)
    counts = np.bincount(users, minlength=n)
    sums = np.zeros((n, feats.shape[1]))
    np.add.at(sums, users, feats)
    active = np.flatnonzero(counts >= a.min_count)
    if active.size == 0:
        return kz
    emb = sums[active] / counts[active, None]
    bw = a.bandwidth or _median_bandwidth(emb)
    a.last_bandwidth = bw
    kz[np.ix_(active, active)] = _rbf_on_embeddings(emb, bw)
    np.fill_diagonal(kz, 1.0)
    return kz
