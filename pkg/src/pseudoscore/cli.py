"""Command-line entry point: ``pseudoscore <subcommand> --config <path> [--out <dir>] [--seed <n>] [--threads <n>]``."""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

from . import data as data_mod
from .pipeline import ConfigError, Pipeline, StageError, configure_logging, load_config, render_report

log = logging.getLogger("pseudoscore")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

SUBCOMMANDS = ("synth", "build-net", "featurize", "train", "evaluate", "report", "run")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pseudoscore", description="Credit scoring with pseudo-social network features.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="TOML config file (defaults to a synthetic run)")
        s.add_argument("--out", help="output directory (overrides [output] dir)")
        s.add_argument("--seed", type=int, help="overrides the top-level seed")
        s.add_argument("--threads", type=int, default=1, help="parallel training jobs")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "synth":
            s.add_argument("--users", type=int, help="overrides [synth] n_users")
    return p


def _prepare(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "users", None) is not None:
        if cfg.synth is None:
            raise ConfigError("--users needs a [synth] config")
        cfg.synth.n_users = args.users
    cfg.validate()
    out = args.out or cfg.output.dir or "pseudoscore-run"
    cfg.output.dir = ""  # the output location is not part of the experiment
    return cfg, Path(out)


def _report(out: Path) -> int:
    path = out / "report.json"
    if not path.exists():
        log.error("no report in %s; run `pseudoscore evaluate` (or `run`) first", out)
        return EXIT_RUNTIME
    print(render_report(json.loads(path.read_text(encoding="utf-8"))))
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    configure_logging(logging.DEBUG if args.verbose else logging.INFO)
    try:
        cfg, out = _prepare(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    if args.command == "report":
        return _report(out)
    if args.threads < 1:
        log.error("config error: --threads must be positive")
        return EXIT_CONFIG
    pipe = Pipeline(cfg, out, threads=args.threads)
    try:
        if args.command == "synth":
            d = pipe.run_data()
            (out / "data").mkdir(parents=True, exist_ok=True)
            for name in data_mod.FILES:
                shutil.copyfile(d / f"{name}.csv", out / "data" / f"{name}.csv")
            log.info("dataset written to %s", out / "data")
        elif args.command == "build-net":
            pipe.run_network()
        elif args.command == "featurize":
            pipe.run_features()
        elif args.command == "train":
            pipe.run_train()
        elif args.command == "evaluate":
            pipe.run_evaluate()
            print(render_report(pipe.write_report()))
        else:
            print(render_report(pipe.run()))
    except StageError as exc:
        log.error("stage %s failed: %s", exc.stage, exc)
        return EXIT_RUNTIME
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
