"""Command line entry point: ``dbgfn run | sweep | oracle``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import DBGFNError
from .harness import _jsonable, oracle_report, run_experiment, sweep
from .policy import load_checkpoint

log = logging.getLogger("dbgfn")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="INI experiment config")
    p.add_argument("--out", help="output directory (default: run.out from the config)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config value; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dbgfn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one seed")
    _add_common(run)
    run.add_argument("--seed", type=int, help="override run.seed")

    sw = sub.add_parser("sweep", help="train several seeds and aggregate")
    _add_common(sw)
    sw.add_argument("--seeds", required=True, help="comma-separated seeds, e.g. 0,1,2")

    orc = sub.add_parser("oracle", help="exact-distribution report for a checkpoint")
    _add_common(orc)
    orc.add_argument("--checkpoint", required=True)
    orc.add_argument("--top", type=int, default=10)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        overrides = list(args.overrides)
        if getattr(args, "seed", None) is not None:
            overrides.append(f"run.seed={args.seed}")
        cfg = load_config(args.config, overrides)
        if args.command == "run":
            res = run_experiment(cfg, args.out)
            print(json.dumps(_jsonable({k: res.summary.get(k) for k in _HEADLINE}), sort_keys=True))
        elif args.command == "sweep":
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
            summary = sweep(cfg, seeds, args.out)
            print(json.dumps(_jsonable(summary["aggregate"]), indent=2, sort_keys=True))
        else:
            report = oracle_report(cfg, load_checkpoint(args.checkpoint), args.top)
            text = json.dumps(_jsonable(report), indent=2)
            if args.out:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                (Path(args.out) / "oracle.json").write_text(text, encoding="utf-8")
            print(text)
    except DBGFNError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


_HEADLINE = ("seed", "rounds_completed", "reward_calls", "modes", "accuracy_exact", "l1_to_target",
             "pearson_logp_reward_exact", "elapsed_seconds")
