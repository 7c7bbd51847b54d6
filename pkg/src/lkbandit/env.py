"""Synthetic reward environments and the shared round stream."""
from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import NumericalError, ParameterError, ProtocolError
from .graph import LaplacianSpectrum, UserGraph
from .kernel import MultiUserKernel
from .rng import as_generator

#: Task presets: pool size m, candidates per round M, users n, dimension d, horizon T.
PRESETS = {
    "easy": dict(m=10, M=5, n=20, d=5, T=1000),
    "medium": dict(m=20, M=5, n=20, d=10, T=3000),
    "hard": dict(m=50, M=5, n=20, d=20, T=5000),
    # Same tuple with a shorter horizon.
    "hard_t3000": dict(m=50, M=5, n=20, d=20, T=3000),
}

DEFAULT_NOISE = 0.1
MAX_GRID = 5000


def make_pool(m: int, d: int, seed=None) -> np.ndarray:
    """``m`` contexts drawn from ``N(0, I_d)`` and scaled to unit norm."""
    if m < 1 or d < 1:
        raise ParameterError("pool needs m >= 1 and d >= 1")
    x = as_generator(seed).standard_normal((m, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@dataclass(frozen=True)
class Round:
    t: int
    user: int
    candidates: np.ndarray
    noise: float


@dataclass
class Environment:
    """Ground truth ``truth[u, i] = f(pool[i], u)`` plus the noise level."""

    pool: np.ndarray
    truth: np.ndarray
    noise_sigma: float
    regime: str
    graph: Optional[UserGraph] = None
    theta: Optional[np.ndarray] = None
    theta0: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def n_users(self) -> int:
        return self.truth.shape[0]

    @property
    def pool_size(self) -> int:
        return self.truth.shape[1]

    def step(self, t: int, M: int, rng) -> Round:
        """Draw the user, ``M`` distinct candidates and the round's noise."""
        if not 1 <= M <= self.pool_size:
            raise ParameterError(f"need 1 <= M <= m, got M={M}, m={self.pool_size}")
        rng = as_generator(rng)
        user = int(rng.integers(self.n_users))
        cands = rng.choice(self.pool_size, size=M, replace=False)
        eps = float(rng.standard_normal()) * self.noise_sigma
        return Round(t, user, cands, eps)

    def realize(self, rnd: Round, chosen: int):
        """Return ``(y, instantaneous_regret)`` for pulling pool item ``chosen``."""
        if chosen not in rnd.candidates:
            raise ProtocolError(f"arm {chosen} not offered at round {rnd.t}")
        row = self.truth[rnd.user]
        best = row[rnd.candidates].max()
        return float(row[chosen] + rnd.noise), float(best - row[chosen])

    def truth_hash(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.truth).tobytes()).hexdigest()

    def describe(self) -> dict:
        return {"regime": self.regime, "noise_sigma": self.noise_sigma,
                "pool": self.pool.tolist(), "truth_sha256": self.truth_hash(), **self.meta}

    def truth_csv(self) -> str:
        buf = io.StringIO()
        buf.write("user,arm,f\n")
        for u in range(self.n_users):
            for i in range(self.pool_size):
                buf.write(f"{u},{i},{float(self.truth[u, i])!r}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class RoundSequence:
    """Pre-generated ``(u_t, D_t, eps_t)`` stream shared by all algorithms in a trial."""

    users: np.ndarray
    candidates: np.ndarray
    noise: np.ndarray

    def __len__(self):
        return self.users.size

    def __getitem__(self, t) -> Round:
        return Round(t, int(self.users[t]), self.candidates[t], float(self.noise[t]))

    def sha256(self) -> str:
        h = hashlib.sha256()
        for arr in (self.users, self.candidates, self.noise):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def generate_rounds(env: Environment, T: int, M: int, seed=None) -> RoundSequence:
    rng = as_generator(seed)
    rounds = [env.step(t, M, rng) for t in range(T)]
    return RoundSequence(np.array([r.user for r in rounds], dtype=np.int64),
                         np.array([r.candidates for r in rounds], dtype=np.int64).reshape(T, M),
                         np.array([r.noise for r in rounds]))


# -- regimes -------------------------------------------------------------------


def make_linear_gob(pool, spectrum: LaplacianSpectrum, eta: float = 1.0, seed=None,
                    noise_sigma: float = DEFAULT_NOISE) -> Environment:
    """Linear rewards with Tikhonov-smoothed user parameters ``(I + eta L)^{-1} Theta_0``."""
    if eta < 0:
        raise ParameterError(f"eta must be >= 0, got {eta}")
    pool = np.asarray(pool, dtype=float)
    theta0 = as_generator(seed).standard_normal((spectrum.n, pool.shape[1]))
    u = spectrum.eigenvectors
    theta = (u / (1.0 + eta * spectrum.eigenvalues)) @ (u.T @ theta0)
    return Environment(pool, theta @ pool.T, noise_sigma, "linear_gob", theta=theta,
                       theta0=theta0, meta={"eta": eta})


def _jittered_factor(gram):
    jitter = 0.0
    scale = max(float(np.mean(np.diag(gram))), 1e-300)
    for _ in range(8):
        try:
            return np.linalg.cholesky(gram + jitter * scale * np.eye(gram.shape[0]))
        except np.linalg.LinAlgError:
            jitter = 1e-10 if jitter == 0.0 else jitter * 10
    raise NumericalError("could not factor the grid Gram even with jitter")


def _grid_gram(pool, kernel: MultiUserKernel):
    size = kernel.n_users * len(pool)
    if size > MAX_GRID:
        raise ParameterError(f"grid of {size} points exceeds the dense limit {MAX_GRID}")
    g = kernel.grid_gram(pool)
    return 0.5 * (g + g.T)


def make_gp_draw(pool, kernel: MultiUserKernel, seed=None) -> Environment:
    """Joint GP draw over the grid; noise is 1% of the reward range."""
    pool = np.asarray(pool, dtype=float)
    factor = _jittered_factor(_grid_gram(pool, kernel))
    f = factor @ as_generator(seed).standard_normal(factor.shape[0])
    truth = f.reshape(kernel.n_users, len(pool))
    return Environment(pool, truth, 0.01 * float(np.ptp(truth)), "lk_gp_draw")


def make_representer(pool, kernel: MultiUserKernel, seed=None, alpha=None,
                     noise_sigma: float = DEFAULT_NOISE) -> Environment:
    """``f = Gram @ alpha`` with ``alpha ~ N(0, 1)`` per grid point (or a given ``alpha``)."""
    pool = np.asarray(pool, dtype=float)
    gram = _grid_gram(pool, kernel)
    if alpha is None:
        alpha = as_generator(seed).standard_normal(gram.shape[0])
    alpha = np.asarray(alpha, dtype=float).ravel()
    truth = (gram @ alpha).reshape(kernel.n_users, len(pool))
    return Environment(pool, truth, noise_sigma, "lk_representer")
