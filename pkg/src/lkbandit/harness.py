"""Experiment orchestration: configs, the round loop, pilot tuning and result files.

Config files are TOML. Top-level keys::

    name, preset, trials, seed, out, workers, lambda_base, graph_per_trial
    [task]   m, M, n, d, T          (override the preset tuple)
    [env]    regime, rho, lengthscale, kernel, eta, noise_sigma
    [graph]  kind + generator parameters
    [algos.<label>]  algo = "<registry name>" (defaults to the label) + policy params
    [tune]   grid, T_pilot, trials

Seeds: every stream is ``SeedSequence(seed, spawn_key=(trial, crc32(tag)))``
with tags ``graph``, ``pool``, ``truth``, ``rounds`` and ``policy:<label>``.
The graph is trial-independent unless ``graph_per_trial`` is set. Pilot runs
use trial indices starting at ``PILOT_TRIAL_OFFSET`` so they never reuse the
streams of the reported trials.
"""
from __future__ import annotations

import copy
import csv
import datetime as _dt
import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import tomli

from . import rng as rngmod
from .env import (DEFAULT_NOISE, PRESETS, Environment, RoundSequence, generate_rounds,
                  make_gp_draw, make_linear_gob, make_pool, make_representer)
from .exceptions import ParameterError, ProtocolError, ValidationError
from .graph import UserGraph, build_laplacian, make_graph
from .kernel import MultiUserKernel, make_base_kernel
from .policy import POLICIES, make_policy
from .schedule import lambda_schedule  # noqa: F401  (re-exported)

log = logging.getLogger(__name__)

DEFAULT_GRID = (0.5, 1.0, 2.0, 4.0)
PILOT_HORIZON = {"easy": 1000, "medium": 1500, "hard": 1500, "hard_t3000": 1500}
PILOT_TRIAL_OFFSET = 1_000_000
REGIMES = ("linear_gob", "lk_gp_draw", "lk_representer")

DEFAULT_ENV = dict(regime="lk_gp_draw", rho=0.01, lengthscale=1.0, kernel="se", eta=1.0,
                   noise_sigma=DEFAULT_NOISE)
DEFAULT_GRAPH = {"kind": "er", "p": 0.2}
DEFAULT_ALGOS = {"lk_gp_ucb": {}, "lk_gp_ts": {}, "gp_ucb": {}, "peruser_linucb": {}}


class TrialAborted(RuntimeError):
    """A policy broke the round protocol; carries the diagnostics."""

    def __init__(self, trial, algo, t, reason):
        super().__init__(f"trial {trial}, {algo}, round {t}: {reason}")
        self.trial, self.algo, self.t, self.reason = trial, algo, t, reason


@dataclass
class RunConfig:
    name: str = "run"
    preset: Optional[str] = "easy"
    m: int = 10
    M: int = 5
    n: int = 20
    d: int = 5
    T: int = 1000
    env: dict = field(default_factory=lambda: dict(DEFAULT_ENV))
    graph: dict = field(default_factory=lambda: dict(DEFAULT_GRAPH))
    algos: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_ALGOS))
    lambda_base: float = 0.05
    trials: int = 1
    seed: int = 0
    out: str = "runs"
    workers: int = 1
    graph_per_trial: bool = False
    tune: dict = field(default_factory=dict)
    source_sha: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.T < 1 or self.trials < 1:
            raise ValidationError("need T >= 1 and trials >= 1")
        if not 1 <= self.M <= self.m:
            raise ValidationError(f"need 1 <= M <= m, got M={self.M}, m={self.m}")
        if self.n < 1 or self.d < 1:
            raise ValidationError("need n >= 1 and d >= 1")
        if self.env.get("regime") not in REGIMES:
            raise ValidationError(f"regime must be one of {REGIMES}, got {self.env.get('regime')!r}")
        for label, params in self.algos.items():
            algo = params.get("algo", label)
            if algo not in POLICIES:
                raise ValidationError(f"unknown algorithm {algo!r} in [algos.{label}]")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")

    def apply_preset(self, preset: str):
        if preset not in PRESETS:
            raise ParameterError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        self.preset = preset
        for k, v in PRESETS[preset].items():
            setattr(self, k, v)
        self.validate()

    def to_dict(self) -> dict:
        keys = ("name", "preset", "m", "M", "n", "d", "T", "env", "graph", "algos", "lambda_base",
                "trials", "seed", "graph_per_trial", "tune")
        return {k: copy.deepcopy(getattr(self, k)) for k in keys}

    def replace(self, **changes) -> "RunConfig":
        new = copy.deepcopy(self)
        for k, v in changes.items():
            setattr(new, k, v)
        new.validate()
        return new


def git_blob_sha(data: bytes) -> str:
    """Content hash in git's blob format."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def config_from_dict(doc: dict, name: str = "run", source: bytes = b"") -> RunConfig:
    doc = copy.deepcopy(doc)
    preset = doc.pop("preset", "easy")
    if preset and preset not in PRESETS:
        raise ParameterError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    task = dict(PRESETS[preset]) if preset else {}
    task.update(doc.pop("task", {}))
    env = {**DEFAULT_ENV, **doc.pop("env", {})}
    graph = doc.pop("graph", dict(DEFAULT_GRAPH))
    algos = doc.pop("algos", copy.deepcopy(DEFAULT_ALGOS))
    known = {"name", "trials", "seed", "out", "workers", "lambda_base", "graph_per_trial", "tune"}
    extra = set(doc) - known
    if extra:
        raise ValidationError(f"unknown config keys: {sorted(extra)}")
    missing = {"m", "M", "n", "d", "T"} - set(task)
    if missing:
        raise ValidationError(f"task is missing {sorted(missing)} (no preset given)")
    return RunConfig(name=doc.pop("name", name), preset=preset, env=env, graph=graph, algos=algos,
                     source_sha=git_blob_sha(source), **{k: task[k] for k in ("m", "M", "n", "d", "T")},
                     **doc)


def load_config(path) -> RunConfig:
    path = Path(path)
    data = path.read_bytes()
    try:
        doc = tomli.loads(data.decode("utf-8"))
    except tomli.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return config_from_dict(doc, name=path.stem, source=data)


def preset_path(name: str) -> Path:
    """Path of a shipped config (``easy``, ``medium``, ``hard``, ``rank_collapse``)."""
    p = resources.files("lkbandit") / "presets" / f"{name}.toml"
    if not p.is_file():
        raise ParameterError(f"no shipped config named {name!r}")
    return Path(str(p))


# -- building blocks ------------------------------------------------------------


def build_graph(config: RunConfig, trial: int = 0) -> UserGraph:
    rng = rngmod.stream(config.seed, rngmod.GRAPH, trial if config.graph_per_trial else None)
    return make_graph(config.graph, config.n, seed=rng)


def build_environment(config: RunConfig, graph: UserGraph, trial: int) -> Environment:
    env = config.env
    pool = make_pool(config.m, config.d, rngmod.stream(config.seed, rngmod.POOL, trial))
    truth_rng = rngmod.stream(config.seed, rngmod.TRUTH, trial)
    spectrum = build_laplacian(graph, env["rho"])
    regime = env["regime"]
    if regime == "linear_gob":
        out = make_linear_gob(pool, spectrum, env["eta"], truth_rng, env["noise_sigma"])
    else:
        base = make_base_kernel(env["kernel"], env["lengthscale"], pool=pool)
        kernel = MultiUserKernel(base, spectrum)
        if regime == "lk_gp_draw":
            out = make_gp_draw(pool, kernel, truth_rng)
        else:
            out = make_representer(pool, kernel, truth_rng, noise_sigma=env["noise_sigma"])
    out.graph = graph
    return out


def policy_params(config: RunConfig, label: str, scalar=None) -> tuple[str, dict]:
    params = dict(config.algos[label])
    algo = params.pop("algo", label)
    cls = POLICIES[algo]
    if "lambda_base" in cls().get_params() and "lambda_base" not in params:
        params["lambda_base"] = config.lambda_base
    if scalar is not None and cls.exploration_param:
        params[cls.exploration_param] = scalar
    return algo, params


@dataclass
class RegretTrace:
    algo: str
    trial: int
    seed: int
    regret: np.ndarray

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.regret)

    @property
    def final(self) -> float:
        return float(self.regret.sum())


@dataclass
class TrialResult:
    trial: int
    traces: list
    rounds_sha256: str
    truth_sha256: str
    graph_edges: int
    rebuilds: dict


def play(policy, env: Environment, rounds: RoundSequence, trial: int = 0, label: str = "") -> np.ndarray:
    """Replay ``rounds`` through one policy and return the instantaneous regrets."""
    regret = np.empty(len(rounds))
    for t in range(len(rounds)):
        rnd = rounds[t]
        try:
            pos = int(policy.select(rnd.user, rnd.candidates))
            if not 0 <= pos < len(rnd.candidates):
                raise ProtocolError(f"selected position {pos} outside 0..{len(rnd.candidates) - 1}")
            arm = int(rnd.candidates[pos])
            y, regret[t] = env.realize(rnd, arm)
            policy.update(rnd.user, arm, y)
        except ProtocolError as exc:
            raise TrialAborted(trial, label, t, str(exc)) from exc
    return regret


def run_trial(config: RunConfig, trial_index: int, labels=None, scalars=None,
              horizon: Optional[int] = None) -> TrialResult:
    """Build the trial's environment and round stream and replay it through every algorithm."""
    T = config.T if horizon is None else horizon
    labels = list(config.algos) if labels is None else list(labels)
    scalars = scalars or {}
    graph = build_graph(config, trial_index)
    env = build_environment(config, graph, trial_index)
    rounds = generate_rounds(env, T, config.M, rngmod.stream(config.seed, rngmod.ROUNDS, trial_index))
    spectrum = build_laplacian(graph, 1.0)
    traces, rebuilds = [], {}
    for label in labels:
        algo, params = policy_params(config, label, scalars.get(label))
        policy = make_policy(algo, **params)
        tag = f"policy:{label}"
        policy.initialize(env.pool, spectrum, T, rngmod.stream(config.seed, tag, trial_index))
        if policy.requires_truth:
            policy.attach_truth(env.truth)
        regret = play(policy, env, rounds, trial_index, label)
        traces.append(RegretTrace(label, trial_index, rngmod.stream_seed(config.seed, tag, trial_index),
                                  regret))
        rebuilds[label] = getattr(policy, "rebuilds_", 0)
    return TrialResult(trial_index, traces, rounds.sha256(), env.truth_hash(), graph.n_edges, rebuilds)


def _run_trial_job(args):
    return run_trial(*args)


def run_trials(config: RunConfig, trials, labels=None, scalars=None, horizon=None, workers=1):
    jobs = [(config, int(i), labels, scalars, horizon) for i in trials]
    if workers <= 1 or len(jobs) <= 1:
        return [_run_trial_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_trial_job, jobs))


# -- tuning ---------------------------------------------------------------------


def tune_grid(config: RunConfig, label: str) -> list:
    spec = config.tune.get("grids", {})
    grid = spec.get(label, config.tune.get("grid", DEFAULT_GRID))
    return sorted(float(g) for g in grid)


def pilot_horizon(config: RunConfig) -> int:
    if "T_pilot" in config.tune:
        return int(config.tune["T_pilot"])
    return min(config.T, PILOT_HORIZON.get(config.preset, 1500))


def pilot_tune(config: RunConfig, evaluate: Optional[Callable] = None, workers: int = 1) -> dict:
    """Grid-search each algorithm's exploration scalar on pilot runs.

    ``evaluate(label, scalar) -> mean pilot regret`` replaces the simulation
    (used for scripted checks). Returns ``{label: {"chosen", "grid", "scores"}}``;
    ties go to the smallest scalar.
    """
    R = int(config.tune.get("trials", 5))
    T_pilot = pilot_horizon(config)
    out = {}
    for label, params in config.algos.items():
        cls = POLICIES[params.get("algo", label)]
        if not cls.exploration_param:
            continue
        grid = tune_grid(config, label)
        if not grid:
            raise ParameterError(f"empty tuning grid for {label}")
        scores = []
        for s in grid:
            if evaluate is not None:
                score = float(evaluate(label, s))
            else:
                res = run_trials(config, range(PILOT_TRIAL_OFFSET, PILOT_TRIAL_OFFSET + R), [label],
                                 {label: s}, T_pilot, workers)
                score = float(np.mean([r.traces[0].final for r in res]))
            log.info("pilot %s %s=%g: mean regret %.6g", label, cls.exploration_param, s, score)
            scores.append(score)
        best = min(range(len(grid)), key=lambda i: (scores[i], grid[i]))
        out[label] = {"param": cls.exploration_param, "chosen": grid[best], "grid": grid,
                      "scores": scores, "T_pilot": T_pilot, "trials": R}
    return out


# -- aggregation ----------------------------------------------------------------


def _mean_se(values):
    values = np.asarray(values, dtype=float)
    if values.shape[0] < 2:
        return values.mean(axis=0), np.zeros_like(values[0]), True
    return values.mean(axis=0), values.std(axis=0, ddof=1) / np.sqrt(values.shape[0]), False


def summarize(traces) -> tuple[dict, str]:
    """Per-algorithm mean/SE of final regret and the mean cumulative-regret curves.

    Returns ``(summary, curves_csv)``.
    """
    by_algo: dict = {}
    for tr in traces:
        by_algo.setdefault(tr.algo, []).append(tr)
    if not by_algo:
        raise ValidationError("no traces to summarize")
    summary, buf = {}, io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "algo", "mean_cum_regret", "se"])
    for algo, trs in by_algo.items():
        cum = np.array([tr.cumulative for tr in trs])
        mean, se, single = _mean_se(cum)
        summary[algo] = {"mean": float(mean[-1]), "se": float(se[-1]), "trials": len(trs),
                         "se_undefined": single}
        for t in range(cum.shape[1]):
            w.writerow([t + 1, algo, repr(float(mean[t])), repr(float(se[t]))])
    return summary, buf.getvalue()


def pooled_se(a: dict, b: dict) -> float:
    return float(np.hypot(a["se"], b["se"]))


def sublinearity_ratio(regret) -> float:
    """Mean per-round regret over the last quarter divided by the first quarter."""
    regret = np.asarray(regret, dtype=float)
    q = max(1, regret.size // 4)
    first = regret[:q].mean()
    last = regret[-q:].mean()
    if first <= 0:
        return 0.0 if last <= 0 else float("inf")
    return float(last / first)


def trial_csv(result: TrialResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "algo", "regret", "cum_regret"])
    for tr in result.traces:
        for t, (r, c) in enumerate(zip(tr.regret, tr.cumulative)):
            w.writerow([t + 1, tr.algo, repr(float(r)), repr(float(c))])
    return buf.getvalue()


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def make_run_dir(out, name) -> Path:
    stamp = _dt.datetime.now().strftime("%Y%m%dT%H%M%S")
    base = Path(out) / name
    path, k = base / stamp, 1
    while path.exists():
        path, k = base / f"{stamp}-{k}", k + 1
    path.mkdir(parents=True)
    return path


def run(config: RunConfig, out_dir=None, tuned: Optional[dict] = None) -> Path:
    """Run all trials and write the output directory; returns its path."""
    out_dir = make_run_dir(config.out, config.name) if out_dir is None else Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if tuned is None and config.tune.get("apply", False):
        tuned = pilot_tune(config, workers=config.workers)
    scalars = {k: v["chosen"] for k, v in (tuned or {}).items()}
    results = run_trials(config, range(config.trials), scalars=scalars, workers=config.workers)
    summary, curves = summarize([tr for r in results for tr in r.traces])
    (out_dir / "summary.json").write_text(_dump_json(summary))
    (out_dir / "curves.csv").write_text(curves)
    per_trial = out_dir / "per-trial"
    per_trial.mkdir(exist_ok=True)
    for r in results:
        (per_trial / f"trial-{r.trial:04d}.csv").write_text(trial_csv(r))
    manifest = {
        "config": config.to_dict(),
        "config_sha": config.source_sha,
        "tuned": tuned or {},
        "trials": [{"trial": r.trial, "rounds_sha256": r.rounds_sha256, "truth_sha256": r.truth_sha256,
                    "graph_edges": r.graph_edges, "rebuilds": r.rebuilds} for r in results],
        "created": _dt.datetime.now().isoformat(timespec="seconds"),
    }
    (out_dir / "manifest.json").write_text(_dump_json(manifest))
    return out_dir


def tune(config: RunConfig, out_dir=None) -> tuple[dict, Path]:
    tuned = pilot_tune(config, workers=config.workers)
    out_dir = make_run_dir(config.out, config.name + "-tune") if out_dir is None else Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"config": config.to_dict(), "config_sha": config.source_sha, "tuned": tuned,
                "created": _dt.datetime.now().isoformat(timespec="seconds")}
    (out_dir / "manifest.json").write_text(_dump_json(manifest))
    return tuned, out_dir
