"""Acceptance criteria 1-10, each at its stated tolerance and time budget."""
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, random_graph_weights, unit_rows
from lkbandit import harness
from lkbandit.analysis import (bound_regular, clique_bound, clique_head_tail, info_gain,
                               rank_collapse_sweep, regular_design_gram)
from lkbandit.cli import main
from lkbandit.graph import UserGraph, build_laplacian
from lkbandit.kernel import SquaredExponential, representer_coefficients, rkhs_penalty
from lkbandit.policy import CoopKernelUCB, GraphUCB, LKGPUCB, PerUserLinUCB
from lkbandit.posterior import GridPosterior


def report(k, ok, detail, elapsed, budget):
    ok = bool(ok) and elapsed < budget
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}  ({elapsed:.1f}s / {budget:.0f}s)"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def se(x):
    return SquaredExponential(1.0)(x)


def test_c1_penalty_equals_rkhs_norm():
    t0 = time.perf_counter()
    r = np.random.default_rng(1)
    worst = 0.0
    for _ in range(50):
        w = random_graph_weights(r, 5, 0.5)
        rho = float(r.uniform(0.05, 2.0))
        pool = unit_rows(r, 8, 3)
        kx = se(pool)
        kg = build_laplacian(UserGraph(w), rho).inv_reg
        alpha = r.standard_normal((5, 8))
        pen = rkhs_penalty(w, rho, representer_coefficients(kg, alpha), kx)
        norm = alpha.ravel() @ np.kron(kg, kx) @ alpha.ravel()
        worst = max(worst, abs(pen - norm) / abs(norm))
    report(1, worst <= 1e-8, f"max rel err {worst:.2e}", time.perf_counter() - t0, 5)


def _dense(full, h, y, lam):
    a = full[np.ix_(h, h)] + lam * np.eye(h.size)
    mean = full[:, h] @ np.linalg.solve(a, y)
    var = np.diag(full) - np.einsum("ij,ji->i", full[:, h], np.linalg.solve(a, full[h]))
    return mean, var


def test_c2_posterior_oracles():
    t0 = time.perf_counter()
    r = np.random.default_rng(2)
    worst_dense = 0.0
    for _ in range(100):
        n, m, T = int(r.integers(2, 8)), int(r.integers(2, 10)), int(r.integers(1, 101))
        kg = build_laplacian(UserGraph(random_graph_weights(r, n)), float(r.uniform(0.1, 1))).inv_reg
        kx = SquaredExponential(float(r.uniform(0.5, 2)))(unit_rows(r, m, 3))
        lam = float(r.uniform(0.05, 1.0))
        users, arms, y = r.integers(n, size=T), r.integers(m, size=T), r.standard_normal(T)
        post = GridPosterior(kg, kx, lam, t_star=math.inf)
        for u, a, v in zip(users, arms, y):
            post.update(u, a, v)
        gu, ga = np.repeat(np.arange(n), m), np.tile(np.arange(m), n)
        mu, sd = post.predict(gu, ga)
        mean, var = _dense(np.kron(kg, kx), users * m + arms, y, lam)
        worst_dense = max(worst_dense, np.max(np.abs(mu - mean)), np.max(np.abs(sd**2 - var)))
    worst_rec = 0.0
    n, m = 20, 10
    for _ in range(5):
        kg = build_laplacian(UserGraph(random_graph_weights(r, n, 0.2)), 0.1).inv_reg
        kx = se(unit_rows(r, m, 5))
        users, arms, y = r.integers(n, size=200), r.integers(m, size=200), r.standard_normal(200)
        ex, rec = GridPosterior(kg, kx, 0.1, t_star=math.inf), GridPosterior(kg, kx, 0.1, t_star=0)
        for u, a, v in zip(users, arms, y):
            ex.update(u, a, v)
            rec.update(u, a, v)
        gu, ga = np.repeat(np.arange(n), m), np.tile(np.arange(m), n)
        for p, q in zip(ex.predict(gu, ga), rec.predict(gu, ga)):
            worst_rec = max(worst_rec, float(np.max(np.abs(p - q))))
    report(2, worst_dense <= 1e-8 and worst_rec <= 1e-8,
           f"exact-vs-dense {worst_dense:.2e}, exact-vs-recursive {worst_rec:.2e}",
           time.perf_counter() - t0, 30)


def test_c3_schur_logdet():
    t0 = time.perf_counter()
    r = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        n, m = 10, 8
        kg = build_laplacian(UserGraph(random_graph_weights(r, n)), 0.3).inv_reg
        kx = se(unit_rows(r, m, 4))
        lam = 0.1
        post = GridPosterior(kg, kx, lam)
        users, arms = r.integers(n, size=200), r.integers(m, size=200)
        total = 0.0
        for u, a in zip(users, arms):
            total += math.log1p(post.predict(u, a)[1] ** 2 / lam)
            post.update(u, a, float(r.standard_normal()))
        h = users * m + arms
        ref = np.linalg.slogdet(np.eye(200) + np.kron(kg, kx)[np.ix_(h, h)] / lam)[1]
        worst = max(worst, abs(total - ref) / ref)
    report(3, worst <= 1e-6, f"max rel err {worst:.2e}", time.perf_counter() - t0, 10)


def test_c4_regular_design_exact():
    t0 = time.perf_counter()
    r = np.random.default_rng(4)
    worst = 0.0
    for n, m in [(5, 10), (20, 10), (50, 5)]:
        spec = build_laplacian(UserGraph(random_graph_weights(r, n, 0.3)), 0.5)
        base = se(unit_rows(r, m, 4))
        lam = 0.2
        exact = info_gain(regular_design_gram(spec.inv_reg, base), lam)
        worst = max(worst, abs(bound_regular(spec.inv_reg_eigenvalues, base, n * m, lam) - exact) / exact)
    report(4, worst <= 1e-6, f"max rel err {worst:.2e}", time.perf_counter() - t0, 10)


def test_c5_clique_bound():
    t0 = time.perf_counter()
    rho = lam = C = 1.0
    base = se(np.zeros((1, 5)))
    gains = []
    for n in (50, 100, 200):
        spec = build_laplacian(UserGraph.complete(n), rho)
        gamma = info_gain(regular_design_gram(spec.inv_reg, base), lam)
        head, tail = clique_head_tail(n, rho, lam, n, base)
        assert head + tail == pytest.approx(gamma, rel=1e-8)
        gains.append(gamma)
    bound = clique_bound(C, lam, rho, float(np.trace(base)))
    report(5, max(gains) <= bound,
           f"gamma {[round(g, 4) for g in gains]} <= bound {bound:g}", time.perf_counter() - t0, 30)


def test_c6_rank_collapse_sweep():
    t0 = time.perf_counter()
    import tomli
    doc = tomli.loads(harness.preset_path("rank_collapse").read_text())
    rows = rank_collapse_sweep(doc["sweep"])
    assert [r["n"] for r in rows] == [10, 20, 40] and [r["T"] for r in rows] == [20, 40, 80]
    ratios = [r["bound_regular"] / r["gamma_actual"] for r in rows]
    crude_ok = all(r["bound_crude"] >= r["gamma_actual"] for r in rows)
    ok = all(abs(x - 1) <= 0.05 for x in ratios) and crude_ok
    report(6, ok, f"regular/actual {[round(x, 4) for x in ratios]}, crude>=actual {crude_ok}",
           time.perf_counter() - t0, 300)


def test_c7_regret_ordering():
    t0 = time.perf_counter()
    cfg = harness.load_config(harness.preset_path("easy"))
    cfg = cfg.replace(trials=10, algos={"lk_gp_ucb": {"beta": 1.0}, "gp_ucb": {"beta": 1.0},
                                        "peruser_linucb": {"alpha": 1.0}})
    results = harness.run_trials(cfg, range(10))
    s, _ = harness.summarize([tr for r in results for tr in r.traces])
    lk, gp, lin = s["lk_gp_ucb"], s["gp_ucb"], s["peruser_linucb"]
    z_gp = (gp["mean"] - lk["mean"]) / harness.pooled_se(lk, gp)
    z_lin = (lin["mean"] - lk["mean"]) / harness.pooled_se(lk, lin)
    report(7, z_gp > 2 and z_lin > 2,
           f"final regret LK {lk['mean']:.1f}+-{lk['se']:.1f}, GP-UCB {gp['mean']:.1f}+-{gp['se']:.1f}, "
           f"PerUser {lin['mean']:.1f}+-{lin['se']:.1f}; gaps {z_gp:.2f}, {z_lin:.2f} SE",
           time.perf_counter() - t0, 600)


def test_c8_sublinearity():
    t0 = time.perf_counter()
    worst, parts = 0.0, []
    for preset in ("easy", "medium", "hard"):
        cfg = harness.load_config(harness.preset_path(preset))
        cfg = cfg.replace(trials=5, algos={"lk_gp_ucb": {}, "lk_gp_ts": {}})
        results = harness.run_trials(cfg, range(5))
        for label in ("lk_gp_ucb", "lk_gp_ts"):
            mean = np.mean([[t.regret for t in r.traces if t.algo == label][0] for r in results], axis=0)
            ratio = harness.sublinearity_ratio(mean)
            worst = max(worst, ratio)
            parts.append(f"{preset}/{label} {ratio:.3f}")
    report(8, worst < 0.6, "last/first quarter: " + ", ".join(parts), time.perf_counter() - t0, 1200)


def _replay(policy, pool, spec, users, cands, truth, noise):
    policy.initialize(pool, spec, len(users), np.random.default_rng(0))
    out = []
    for u, c, e in zip(users, cands, noise):
        arm = int(c[policy.select(u, c)])
        policy.update(u, arm, truth[u, arm] + e)
        out.append(arm)
    return out


def test_c9_baseline_reductions():
    t0 = time.perf_counter()
    r = np.random.default_rng(9)
    n, m, T = 6, 10, 50
    pool = unit_rows(r, m, 4)
    users = r.integers(n, size=T)
    cands = np.array([r.choice(m, 5, replace=False) for _ in range(T)])
    truth, noise = r.standard_normal((n, m)), 0.1 * r.standard_normal(T)
    edgeless = build_laplacian(UserGraph.empty(n), 1.0)
    a = _replay(GraphUCB(alpha=1.0, rho=1.0), pool, edgeless, users, cands, truth, noise)
    b = _replay(PerUserLinUCB(alpha=1.0, ridge=1.0), pool, edgeless, users, cands, truth, noise)
    spec = build_laplacian(UserGraph(random_graph_weights(r, n)), 1.0)
    c = _replay(CoopKernelUCB(beta=1.0, agent_kernel="laplacian_inv", agent_rho=0.1), pool, spec,
                users, cands, truth, noise)
    d = _replay(LKGPUCB(beta=1.0, rho=0.1), pool, spec, users, cands, truth, noise)
    report(9, a == b and c == d, f"GraphUCB==PerUser {a == b}, Coop==LK {c == d}",
           time.perf_counter() - t0, 10)


def test_c10_determinism(tmp_path):
    t0 = time.perf_counter()
    out = tmp_path / "runs"
    args = ["run", "easy", "--trials", "2", "--seed", "11", "--out", str(out)]
    assert main(args) == 0 and main(args) == 0
    d1, d2 = sorted((out / "easy").iterdir())
    same = all((d1 / f).read_bytes() == (d2 / f).read_bytes() for f in ("curves.csv", "summary.json"))
    report(10, same, f"byte-identical curves.csv and summary.json: {same}", time.perf_counter() - t0, 600)
