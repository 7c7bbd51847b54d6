import json
import logging

import numpy as np
import pytest

from lkbandit import harness
from lkbandit.exceptions import ValidationError
from lkbandit.harness import (RegretTrace, RunConfig, TrialAborted, config_from_dict, pilot_tune,
                              run_trial, summarize, sublinearity_ratio)
from lkbandit.policy import POLICIES, Policy, argmax_lowest


class ScaleStub(Policy):
    """Plays the best arm when ``scale == 2`` and the worst otherwise."""

    exploration_param = "scale"
    requires_truth = True

    def __init__(self, scale=1.0):
        self.scale = scale

    def attach_truth(self, truth):
        self.truth_ = truth

    def select(self, user, candidates):
        vals = self.truth_[user, np.asarray(candidates)]
        return argmax_lowest(vals if self.scale == 2 else -vals)


class BrokenStub(Policy):
    def __init__(self):
        pass

    def select(self, user, candidates):
        return len(candidates)


@pytest.fixture
def stubs(monkeypatch):
    monkeypatch.setitem(POLICIES, "scale_stub", ScaleStub)
    monkeypatch.setitem(POLICIES, "broken_stub", BrokenStub)


def small_config(**kw):
    base = dict(name="small", preset=None, task=dict(m=6, M=3, n=4, d=3, T=60), trials=2, seed=3,
                algos={"lk_gp_ucb": {}, "peruser_linucb": {}})
    base.update(kw)
    return config_from_dict(base)


def test_config_validation():
    with pytest.raises(ValidationError):
        small_config(task=dict(m=3, M=4, n=2, d=2, T=10))
    with pytest.raises(ValidationError):
        small_config(trials=0)
    with pytest.raises(ValidationError):
        small_config(algos={"nope": {}})
    with pytest.raises(ValidationError):
        small_config(bogus=1)
    with pytest.raises(ValidationError):
        config_from_dict({"preset": None, "task": {"m": 3}})
    cfg = config_from_dict({"preset": "medium"})
    assert (cfg.m, cfg.n, cfg.d, cfg.T) == (20, 20, 10, 3000)


def test_shipped_presets_load():
    for name in ("easy", "medium", "hard"):
        cfg = harness.load_config(harness.preset_path(name))
        assert cfg.preset == name and cfg.env["regime"] == "lk_gp_draw"
        assert len(cfg.source_sha) == 40


def test_same_policy_twice_identical_traces():
    res = run_trial(small_config(algos={"a": {"algo": "lk_gp_ucb"}, "b": {"algo": "lk_gp_ucb"}}), 0)
    np.testing.assert_array_equal(res.traces[0].regret, res.traces[1].regret)


def test_oracle_all_zero():
    res = run_trial(small_config(algos={"oracle": {}}), 1)
    assert np.all(res.traces[0].regret == 0.0)


def test_adding_algorithm_keeps_environment_streams():
    a = run_trial(small_config(algos={"lk_gp_ucb": {}}), 0)
    b = run_trial(small_config(algos={"lk_gp_ucb": {}, "gp_ucb": {}}), 0)
    assert a.rounds_sha256 == b.rounds_sha256 and a.truth_sha256 == b.truth_sha256
    np.testing.assert_array_equal(a.traces[0].regret, b.traces[0].regret)


def test_graph_per_trial_flag():
    fixed = small_config(graph={"kind": "er", "p": 0.5}, task=dict(m=6, M=3, n=12, d=3, T=5))
    per = small_config(graph={"kind": "er", "p": 0.5}, task=dict(m=6, M=3, n=12, d=3, T=5),
                       graph_per_trial=True)
    assert np.array_equal(harness.build_graph(fixed, 0).weights, harness.build_graph(fixed, 1).weights)
    assert not np.array_equal(harness.build_graph(per, 0).weights, harness.build_graph(per, 1).weights)


def test_regimes_run():
    for regime in ("linear_gob", "lk_gp_draw", "lk_representer"):
        res = run_trial(small_config(env={"regime": regime}), 0)
        assert all(np.all(t.regret >= 0) for t in res.traces)
        assert all(np.all(np.diff(t.cumulative) >= 0) for t in res.traces)


def test_protocol_error_aborts(stubs):
    with pytest.raises(TrialAborted) as info:
        run_trial(small_config(algos={"broken_stub": {}}), 0)
    assert info.value.algo == "broken_stub" and info.value.t == 0


def test_pilot_single_element_grid_still_runs(caplog):
    cfg = small_config(algos={"lk_gp_ucb": {}}, tune={"grid": [2.0], "trials": 1, "T_pilot": 20})
    with caplog.at_level(logging.INFO, logger="lkbandit.harness"):
        out = pilot_tune(cfg)
    assert out["lk_gp_ucb"]["chosen"] == 2.0
    assert len(out["lk_gp_ucb"]["scores"]) == 1
    assert "pilot lk_gp_ucb" in caplog.text


def test_pilot_picks_oracle_scalar(stubs):
    cfg = small_config(algos={"scale_stub": {}}, tune={"grid": [0.5, 1, 2, 4], "trials": 2, "T_pilot": 30})
    out = pilot_tune(cfg)
    assert out["scale_stub"]["chosen"] == 2.0
    assert out["scale_stub"]["scores"][2] == 0.0


def test_pilot_scripted_argmin_and_ties():
    cfg = small_config(algos={"lk_gp_ucb": {}, "peruser_linucb": {}},
                       tune={"grid": [4, 0.5, 2, 1]})
    script = {"lk_gp_ucb": lambda s: (s - 1.7) ** 2, "peruser_linucb": lambda s: 3.0}
    calls = []

    def evaluate(label, s):
        calls.append((label, s))
        return script[label](s)

    out = pilot_tune(cfg, evaluate=evaluate)
    grid = [0.5, 1.0, 2.0, 4.0]
    assert out["lk_gp_ucb"]["chosen"] == min(grid, key=lambda s: (s - 1.7) ** 2)
    assert out["peruser_linucb"]["chosen"] == 0.5
    assert len(calls) == 8


def test_summarize_single_trial_flag():
    s, _ = summarize([RegretTrace("a", 0, 0, np.array([1.0, 0.5]))])
    assert s["a"] == {"mean": 1.5, "se": 0.0, "trials": 1, "se_undefined": True}


def test_summarize_two_trials_closed_form():
    a, b = 3.0, 7.0
    s, curves = summarize([RegretTrace("x", 0, 0, np.array([a])), RegretTrace("x", 1, 0, np.array([b]))])
    assert s["x"]["mean"] == pytest.approx((a + b) / 2)
    assert s["x"]["se"] == pytest.approx(abs(a - b) / 2)
    assert curves.splitlines()[0] == "t,algo,mean_cum_regret,se"


def test_summarize_twenty_traces():
    r = np.random.default_rng(0)
    regs = r.random((20, 15))
    s, curves = summarize([RegretTrace("z", i, 0, regs[i]) for i in range(20)])
    finals = regs.sum(axis=1)
    assert s["z"]["mean"] == pytest.approx(np.mean(finals))
    assert s["z"]["se"] == pytest.approx(np.std(finals, ddof=1) / np.sqrt(20))
    rows = [line.split(",") for line in curves.splitlines()[1:]]
    cum = np.cumsum(regs, axis=1)
    for t, row in enumerate(rows):
        assert float(row[2]) == pytest.approx(cum[:, t].mean())
        assert float(row[3]) == pytest.approx(cum[:, t].std(ddof=1) / np.sqrt(20))


def test_sublinearity_ratio():
    assert sublinearity_ratio([4, 4, 2, 2, 1, 1, 1, 1]) == pytest.approx(0.25)
    assert sublinearity_ratio([0, 0, 0, 0]) == 0.0


def test_run_outputs_and_determinism(tmp_path):
    cfg = small_config()
    a = harness.run(cfg, tmp_path / "a")
    b = harness.run(cfg, tmp_path / "b")
    for f in ("curves.csv", "summary.json", "per-trial/trial-0000.csv"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    manifest = json.loads((a / "manifest.json").read_text())
    assert [t["trial"] for t in manifest["trials"]] == [0, 1]
    assert all(len(t["rounds_sha256"]) == 64 for t in manifest["trials"])
    assert manifest["config"]["seed"] == 3


def test_run_dir_layout(tmp_path):
    cfg = small_config(out=str(tmp_path), trials=1)
    d1, d2 = harness.run(cfg), harness.run(cfg)
    assert d1.parent == d2.parent == tmp_path / "small" and d1 != d2


def test_workers_do_not_change_results(tmp_path):
    cfg = small_config(trials=3)
    a = harness.run(cfg, tmp_path / "a")
    b = harness.run(cfg.replace(workers=2), tmp_path / "b")
    assert (a / "curves.csv").read_bytes() == (b / "curves.csv").read_bytes()


def test_tune_records_choice(tmp_path):
    cfg = small_config(algos={"lk_gp_ucb": {}}, tune={"grid": [1.0, 2.0], "trials": 1, "T_pilot": 15})
    tuned, out = harness.tune(cfg, tmp_path / "t")
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["tuned"]["lk_gp_ucb"]["chosen"] == tuned["lk_gp_ucb"]["chosen"]
    cfg2 = small_config(algos={"lk_gp_ucb": {}}, trials=1,
                        tune={"grid": [1.0, 2.0], "trials": 1, "T_pilot": 15, "apply": True})
    run_dir = harness.run(cfg2, tmp_path / "r")
    assert json.loads((run_dir / "manifest.json").read_text())["tuned"]["lk_gp_ucb"]["chosen"] in (1.0, 2.0)


def test_lambda_schedule_reexport():
    assert harness.lambda_schedule(0.05, 1 / 3, 3000, 600) == pytest.approx(0.0138888888888889)
