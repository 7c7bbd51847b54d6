"""Command-line entry point: ``run``, ``tune``, ``analyze``, ``dump-graph``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import tomli

from . import analysis, harness
from .exceptions import NumericalError, ParameterError, ValidationError
from .harness import TrialAborted


def _resolve(path: str) -> Path:
    p = Path(path)
    if p.exists() or p.suffix:
        return p
    return harness.preset_path(path)


def _load(args) -> harness.RunConfig:
    config = harness.load_config(_resolve(args.config))
    if args.preset:
        config.apply_preset(args.preset)
    changes = {k: v for k, v in (("seed", args.seed), ("trials", args.trials),
                                  ("out", args.out), ("workers", args.workers)) if v is not None}
    return config.replace(**changes)


def cmd_run(args) -> int:
    out = harness.run(_load(args))
    print(out)
    return 0


def cmd_tune(args) -> int:
    tuned, out = harness.tune(_load(args))
    for label, info in tuned.items():
        print(f"{label}: {info['param']}={info['chosen']:g}")
    print(out)
    return 0


def cmd_analyze(args) -> int:
    path = _resolve(args.config)
    doc = tomli.loads(path.read_text())
    sweep = dict(doc.get("sweep", doc))
    if args.seed is not None:
        sweep["seed"] = args.seed
    if args.trials is not None:
        sweep["seeds"] = args.trials
    rows = analysis.rank_collapse_sweep(sweep)
    out_dir = harness.make_run_dir(args.out or doc.get("out", "runs"), doc.get("name", path.stem))
    (out_dir / "sweep.csv").write_text(analysis.sweep_csv(rows))
    print(out_dir / "sweep.csv")
    return 0


def cmd_dump_graph(args) -> int:
    config = _load(args)
    text = harness.build_graph(config, 0).to_csv()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lkbandit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (("run", cmd_run, "run all trials of a config"),
                            ("tune", cmd_tune, "pilot-tune exploration scalars"),
                            ("analyze", cmd_analyze, "spectral sweep from a sweep config"),
                            ("dump-graph", cmd_dump_graph, "print the user graph as u,v,w CSV")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="TOML file or shipped config name")
        p.add_argument("--seed", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--out")
        p.add_argument("--workers", type=int)
        p.add_argument("--preset", choices=("easy", "medium", "hard"))
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrialAborted as exc:
        print(f"trial aborted: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, ParameterError, NumericalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
