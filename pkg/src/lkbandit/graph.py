"""User graphs, their Laplacian and the regularized inverse used as user kernel."""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ParameterError, ValidationError
from .rng import as_generator

#: Eigenvalues at or below this are treated as zero when looking for the
#: Fiedler value.
ZERO_EIG_TOL = 1e-9


@dataclass(frozen=True)
class UserGraph:
    """Weighted undirected graph over ``n`` users.

    ``weights`` must be square, symmetric, non-negative and have a zero
    diagonal. The array is copied and made read-only.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, copy=True)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValidationError(f"weights must be a square matrix, got shape {w.shape}")
        if w.shape[0] < 1:
            raise ValidationError("graph needs at least one user")
        if not np.all(np.isfinite(w)):
            raise ValidationError("weights must be finite")
        if np.any(w < 0):
            raise ValidationError("edge weights must be non-negative")
        if np.any(np.diag(w) != 0):
            raise ValidationError("weights must have a zero diagonal")
        if not np.allclose(w, w.T, rtol=0.0, atol=1e-12):
            raise ValidationError("weights must be symmetric")
        w = 0.5 * (w + w.T)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def n_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.weights, 1)))

    def laplacian(self) -> np.ndarray:
        return np.diag(self.weights.sum(axis=1)) - self.weights

    def edges(self):
        """Yield ``(u, v, w)`` for every edge once, with ``u < v``."""
        iu, iv = np.nonzero(np.triu(self.weights, 1))
        for u, v in zip(iu, iv):
            yield int(u), int(v), float(self.weights[u, v])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("u,v,w\n")
        for u, v, w in self.edges():
            buf.write(f"{u},{v},{w!r}\n")
        return buf.getvalue()

    @classmethod
    def empty(cls, n: int) -> "UserGraph":
        return cls(np.zeros((n, n)))

    @classmethod
    def complete(cls, n: int) -> "UserGraph":
        return cls(np.ones((n, n)) - np.eye(n))


@dataclass(frozen=True)
class LaplacianSpectrum:
    """Laplacian ``L = D - W`` of a graph with its eigendecomposition and
    the regularized inverse ``(L + rho I)^{-1}``."""

    laplacian: np.ndarray
    rho: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    inv_reg: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.laplacian.shape[0]

    @property
    def inv_reg_eigenvalues(self) -> np.ndarray:
        """Eigenvalues ``1 / (lambda_i + rho)`` of the user kernel, aligned with ``eigenvectors``."""
        return 1.0 / (self.eigenvalues + self.rho)

    def spectral_function(self, fn) -> np.ndarray:
        """``U diag(fn(eigenvalues)) U^T``, symmetrized."""
        u = self.eigenvectors
        out = (u * fn(self.eigenvalues)) @ u.T
        return 0.5 * (out + out.T)

    def heat(self, tau: float) -> np.ndarray:
        return self.spectral_function(lambda lam: np.exp(-tau * lam))

    def with_rho(self, rho: float) -> "LaplacianSpectrum":
        """Same graph, different ridge; reuses the eigendecomposition."""
        _check_rho(rho)
        inv = _inverse_from_eigs(self.eigenvalues, self.eigenvectors, rho)
        return LaplacianSpectrum(self.laplacian, float(rho), self.eigenvalues, self.eigenvectors, inv)


def _check_rho(rho):
    if not np.isfinite(rho) or rho <= 0:
        raise ParameterError(f"rho must be > 0, got {rho}")


def _inverse_from_eigs(eigenvalues, eigenvectors, rho):
    inv = (eigenvectors / (eigenvalues + rho)) @ eigenvectors.T
    inv = 0.5 * (inv + inv.T)
    inv.setflags(write=False)
    return inv


def build_laplacian(g: UserGraph, rho: float = 1.0) -> LaplacianSpectrum:
    """Laplacian, symmetric eigendecomposition and ``(L + rho I)^{-1}``.

    Eigenvalues are clamped at zero from below before inversion so that
    roundoff negatives (order 1e-15) cannot leak into ``1/(lambda + rho)``.
    """
    if not isinstance(g, UserGraph):
        g = UserGraph(g)
    _check_rho(rho)
    lap = g.laplacian()
    lap = 0.5 * (lap + lap.T)
    eigvals, eigvecs = np.linalg.eigh(lap)
    eigvals = np.maximum(eigvals, 0.0)
    inv = _inverse_from_eigs(eigvals, eigvecs, rho)
    for arr in (lap, eigvals, eigvecs):
        arr.setflags(write=False)
    return LaplacianSpectrum(lap, float(rho), eigvals, eigvecs, inv)


def spectral_scale(spec: LaplacianSpectrum) -> tuple[float, bool]:
    """Ratio of the Fiedler value to the largest Laplacian eigenvalue.

    Returns ``(scale, degenerate)``. An edgeless graph has no non-zero
    eigenvalue; the scale is then 0 and ``degenerate`` is True.
    """
    eigs = spec.eigenvalues
    nonzero = eigs[eigs > ZERO_EIG_TOL]
    if nonzero.size == 0:
        return 0.0, True
    return float(nonzero.min() / nonzero.max()), False


# -- generators --------------------------------------------------------------
#
# All pair-based generators consume one uniform draw per unordered pair
# (i < j) in row-major order, which keeps SBM with p_in == p_out on the same
# stream as Erdos-Renyi.


def _pair_draws(n, rng):
    iu, iv = np.triu_indices(n, k=1)
    return iu, iv, rng.random(iu.size)


def _from_pairs(n, iu, iv, mask, values=1.0):
    w = np.zeros((n, n))
    w[iu[mask], iv[mask]] = values if np.isscalar(values) else values[mask]
    return UserGraph(w + w.T)


def gen_erdos_renyi(n: int, p: float, seed=None) -> UserGraph:
    if n < 1:
        raise ParameterError("n must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"p must lie in [0, 1], got {p}")
    iu, iv, u = _pair_draws(n, as_generator(seed))
    return _from_pairs(n, iu, iv, u < p)


def sbm_labels(n: int, k: int) -> np.ndarray:
    """Block label per user; blocks are contiguous and differ in size by at most one."""
    sizes = [len(b) for b in np.array_split(np.arange(n), k)]
    return np.repeat(np.arange(k), sizes)


def gen_sbm(n: int, k: int, p_in: float, p_out: float, seed=None) -> UserGraph:
    if n < 1:
        raise ParameterError("n must be >= 1")
    if not 1 <= k <= n:
        raise ParameterError(f"k must lie in [1, n], got k={k}, n={n}")
    if not 0.0 <= p_out <= p_in <= 1.0:
        raise ParameterError(f"need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")
    labels = sbm_labels(n, k)
    iu, iv, u = _pair_draws(n, as_generator(seed))
    prob = np.where(labels[iu] == labels[iv], p_in, p_out)
    return _from_pairs(n, iu, iv, u < prob)


def rbf_graph_from_latents(z: np.ndarray, rho_l: float = 0.1, s: float = 0.1) -> UserGraph:
    """``w_ij = exp(-rho_l ||z_i - z_j||^2)``, with weights below ``s`` dropped."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if rho_l <= 0:
        raise ParameterError(f"rho_L must be > 0, got {rho_l}")
    if s < 0:
        raise ParameterError(f"threshold s must be >= 0, got {s}")
    n = z.shape[0]
    iu, iv = np.triu_indices(n, k=1)
    d2 = np.sum((z[iu] - z[iv]) ** 2, axis=1)
    w = np.exp(-rho_l * d2)
    return _from_pairs(n, iu, iv, w >= s, w)


def gen_rbf_graph(n: int, q: int = 4, rho_l: float = 0.1, s: float = 0.1, seed=None,
                  return_latents: bool = False):
    """Random geometric graph on latent ``z_i ~ N(0, I_q)``."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    if q < 1:
        raise ParameterError(f"q must be >= 1, got {q}")
    z = as_generator(seed).standard_normal((n, q))
    g = rbf_graph_from_latents(z, rho_l, s)
    return (g, z) if return_latents else g


def star_graph(n: int) -> UserGraph:
    w = np.zeros((n, n))
    w[0, 1:] = w[1:, 0] = 1.0
    return UserGraph(w)


def make_graph(spec: dict, n: int, seed=None) -> UserGraph:
    """Build a graph from a config table such as ``{"kind": "er", "p": 0.2}``."""
    kind = spec.get("kind", "er")
    if kind == "er":
        return gen_erdos_renyi(n, spec.get("p", 0.2), seed)
    if kind == "rbf":
        return gen_rbf_graph(n, spec.get("q", 4), spec.get("rho_L", 0.1), spec.get("s", 0.1), seed)
    if kind == "sbm":
        return gen_sbm(n, spec.get("k", 2), spec.get("p_in", 0.5), spec.get("p_out", 0.05), seed)
    if kind == "complete":
        return UserGraph.complete(n)
    if kind == "empty":
        return UserGraph.empty(n)
    if kind == "star":
        return star_graph(n)
    raise ParameterError(f"unknown graph kind {kind!r}")
