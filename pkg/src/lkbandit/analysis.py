"""Spectral diagnostics: information gain, effective dimension and the
operator / regular-design bounds on the information gain."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cholesky
from scipy.stats import linregress

from .exceptions import NumericalError, ParameterError
from .graph import UserGraph, build_laplacian, make_graph
from .kernel import SquaredExponential
from .posterior import JITTER
from .rng import as_generator

EIG_FLOOR = 1e-12
SWEEP_COLUMNS = ("n", "T", "gamma_actual", "bound_crude", "bound_regular", "d_eff")


@dataclass
class SpectralReport:
    gamma_T: float
    d_eff: float
    bound_crude: float
    bound_regular: float
    head_tail: Optional[tuple] = None


def info_gain(gram, lam: float) -> float:
    """``log det(I + K / lam)`` via Cholesky (one jitter retry)."""
    gram = np.asarray(gram, dtype=float)
    if lam <= 0:
        raise ParameterError(f"lambda must be > 0, got {lam}")
    a = np.eye(gram.shape[0]) + gram / lam
    try:
        c = cholesky(a, lower=True)
    except np.linalg.LinAlgError:
        try:
            c = cholesky(a + JITTER * np.eye(a.shape[0]), lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("I + K/lam is not positive definite") from exc
    return float(2.0 * np.sum(np.log(np.diag(c))))


def effective_dimension(gram, lam: float, k_max: float, T: Optional[int] = None) -> float:
    """Information gain over its worst-case scale ``log(1 + T k_max / lam)``."""
    gram = np.asarray(gram, dtype=float)
    T = gram.shape[0] if T is None else T
    if T != gram.shape[0]:
        raise ParameterError(f"T={T} does not match the Gram size {gram.shape[0]}")
    if k_max <= 0:
        raise ParameterError("k_max must be > 0")
    return info_gain(gram, lam) / np.log1p(T * k_max / lam)


def psi_hat(s, base_eigs) -> np.ndarray:
    """Single-user gain ``sum_j log(1 + s nu_j)``, vectorized over ``s``."""
    s = np.asarray(s, dtype=float)
    nu = np.asarray(base_eigs, dtype=float)
    return np.sum(np.log1p(s[..., None] * nu), axis=-1)


def truncate_eigs(eigs, floor: float = EIG_FLOOR) -> np.ndarray:
    eigs = np.asarray(eigs, dtype=float)
    return eigs[eigs >= floor]


def population_eigs(kernel, points) -> np.ndarray:
    """Eigenvalues of ``K(points) / len(points)``, truncated below ``1e-12``."""
    pts = np.asarray(points, dtype=float)
    return truncate_eigs(np.linalg.eigvalsh(kernel(pts)) / len(pts))


def bound_crude(graph_eigs, base_eigs, T: int, lam: float):
    """Operator bound ``sum_i sum_j log(1 + (T/lam) lambda_i nu_j)``.

    Returns ``(total, per_user)`` where ``per_user[i]`` is ``Psi(T lambda_i / lam)``.
    """
    g = np.asarray(graph_eigs, dtype=float)
    nu = truncate_eigs(base_eigs)
    if np.any(g < 0):
        raise ParameterError("graph eigenvalues must be non-negative")
    per_user = psi_hat(T * g / lam, nu)
    return float(np.sum(per_user)), per_user


def regular_gain(graph_eigs, base_eigs_hat, T: int, lam: float) -> float:
    """``sum_i Psi_hat(T lambda_i / (n lam))`` for given normalized base eigenvalues."""
    g = np.asarray(graph_eigs, dtype=float)
    return float(np.sum(psi_hat(T * g / (g.size * lam), np.clip(base_eigs_hat, 0.0, None))))


def bound_regular(graph_eigs, base_gram_m, T: int, lam: float) -> float:
    """Exact information gain of the regular design (every user plays the same ``m`` arms)."""
    base = np.atleast_2d(np.asarray(base_gram_m, dtype=float))
    n, m = len(graph_eigs), base.shape[0]
    if T != n * m:
        raise ParameterError(f"regular design needs T == n*m, got T={T}, n={n}, m={m}")
    return regular_gain(graph_eigs, np.linalg.eigvalsh(base) / m, T, lam)


def regular_design_gram(user_matrix, base_gram_m) -> np.ndarray:
    """Gram of the regular design with rounds ordered user by user."""
    return np.kron(user_matrix, base_gram_m)


def clique_head_tail(n: int, rho: float, lam: float, T: int, base_gram_m):
    """Split of the complete-graph regular-design gain into its shared and per-user parts."""
    base = np.atleast_2d(np.asarray(base_gram_m, dtype=float))
    nu_hat = np.clip(np.linalg.eigvalsh(base) / base.shape[0], 0.0, None)
    head = float(psi_hat(T / (n * rho * lam), nu_hat))
    tail = float((n - 1) * psi_hat(T / (n * (n + rho) * lam), nu_hat))
    return head, tail


def clique_bound(C: float, lam: float, rho: float, base_trace: float) -> float:
    """Explicit constant ``(C/lam)(1/rho + 1)(sum nu_hat + 1)`` for ``T <= C n`` on a clique."""
    return C / lam * (1.0 / rho + 1.0) * (base_trace + 1.0)


def spectral_report(gram, lam, k_max, graph_eigs, base_eigs, base_gram_m=None) -> SpectralReport:
    T = gram.shape[0]
    crude, _ = bound_crude(graph_eigs, base_eigs, T, lam)
    regular = bound_regular(graph_eigs, base_gram_m, T, lam) if base_gram_m is not None else float("nan")
    return SpectralReport(info_gain(gram, lam), effective_dimension(gram, lam, k_max), crude, regular)


# -- rank-collapse sweep ---------------------------------------------------------

SWEEP_DEFAULTS = dict(
    n_grid=[10, 20, 40],
    T_grid=None,        # explicit horizons; otherwise T = T_factor * n
    T_factor=2,
    d=5,
    lengthscale=1.0,
    rho=1.0,
    lam=1.0,
    graph={"kind": "complete"},
    seeds=10,
    seed=0,
    population_size=1000,
    regular_base="design",
)


def _sweep_cell(n, T, cfg, kernel, nu_pop, rng):
    graph = make_graph(cfg["graph"], n, seed=rng)
    spec = build_laplacian(graph, cfg["rho"])
    g_eigs = spec.inv_reg_eigenvalues
    lam, d = cfg["lam"], cfg["d"]
    k_max = float(np.max(np.diag(spec.inv_reg)))
    users = rng.integers(n, size=T)
    x = rng.random((T, d))
    gram = spec.inv_reg[np.ix_(users, users)] * kernel(x)
    gamma = info_gain(gram, lam)
    crude, _ = bound_crude(g_eigs, nu_pop, T, lam)
    if cfg["regular_base"] == "design":
        nu_hat = np.linalg.eigvalsh(kernel(x)) / T
    else:
        m = max(1, round(T / n))
        nu_hat = np.linalg.eigvalsh(kernel(rng.random((m, d)))) / m
    regular = regular_gain(g_eigs, nu_hat, T, lam)
    return gamma, crude, regular, gamma / np.log1p(T * k_max / lam)


def rank_collapse_sweep(config: dict) -> list[dict]:
    """Realized information gain under i.i.d. uniform design against both bounds.

    Contexts are ``Unif[0,1]^d``, users uniform, SE kernel. Each row is the
    mean over ``seeds`` repetitions.

    ``regular_base`` picks the arm set whose normalized Gram spectrum feeds the
    regular-design expression: ``"design"`` uses the realized contexts
    (normalized by ``T``), ``"fresh"`` draws ``T/n`` new shared arms.
    """
    cfg = {**SWEEP_DEFAULTS, **config}
    if cfg["regular_base"] not in ("design", "fresh"):
        raise ParameterError("regular_base must be 'design' or 'fresh'")
    kernel = SquaredExponential(cfg["lengthscale"])
    rng_pop = as_generator(np.random.SeedSequence(cfg["seed"], spawn_key=(0,)))
    nu_pop = population_eigs(kernel, rng_pop.random((cfg["population_size"], cfg["d"])))
    cells = []
    for n in cfg["n_grid"]:
        horizons = cfg["T_grid"] if cfg["T_grid"] else [int(cfg["T_factor"] * n)]
        cells += [(int(n), int(T)) for T in horizons]
    rows = []
    for n, T in cells:
        vals = []
        for s in range(cfg["seeds"]):
            rng = as_generator(np.random.SeedSequence(cfg["seed"], spawn_key=(1, n, T, s)))
            vals.append(_sweep_cell(n, T, cfg, kernel, nu_pop, rng))
        mean = np.mean(vals, axis=0)
        rows.append(dict(zip(SWEEP_COLUMNS, (n, T, *map(float, mean)))))
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([r["n"], r["T"]] + [repr(r[c]) for c in SWEEP_COLUMNS[2:]])
    return buf.getvalue()


def linear_fit(xs, ys):
    """Slope and ``R^2`` of a least-squares line."""
    res = linregress(xs, ys)
    return float(res.slope), float(res.rvalue**2)
