"""Command line entry point: ``samdp {train,evaluate,sweep,verify,gen}``.

Exit codes: 0 success, 1 check failure, 2 usage or config error, 3 IO error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from ..core import ModelFormatError, save
from .checks import SCALES, run_battery
from .config import ENV_KEYS, ConfigError, ExperimentConfig, load_config, parse_config
from .runner import ArtifactError, run_evaluate, run_sweep, run_train

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="samdp", description="Tabular SA-MDP training, attacks and verification.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, needs_config=True):
        sp.add_argument("--config", required=needs_config, help="experiment INI file")
        sp.add_argument("--seed", type=int, help="run only this seed")
        sp.add_argument("--out", help="output directory (default: [experiment] out, else ./out)")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes")

    common(sub.add_parser("train", help="train every (method, seed) and save artifacts"))
    common(sub.add_parser("evaluate", help="attack saved policies; write results.csv and summary.md"))
    sw = sub.add_parser("sweep", help="train and evaluate over the [sweep] grid")
    common(sw)
    sw.add_argument("--force-grid", action="store_true", help="allow grids above 10^4 points")
    sw.add_argument("--plot", action="store_true", help="also write sweep.svg (needs matplotlib)")

    vf = sub.add_parser("verify", help="run the oracle battery")
    vf.add_argument("--seed", type=int, default=1)
    vf.add_argument("--scale", choices=sorted(SCALES), default="quick")
    vf.add_argument("--out", help="also write the report to OUT/verify.txt")
    vf.add_argument("--fault-gamma-scale", type=float, default=1.0, help=argparse.SUPPRESS)

    gen = sub.add_parser("gen", help="write an environment to a model file")
    gen.add_argument("--config", help="take [environment] from this file")
    gen.add_argument("--env", choices=sorted(set(ENV_KEYS) - {"file"}), help="generator name")
    gen.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="generator parameter")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="model file path")
    return p


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seeds=[args.seed])
    return cfg


def _out(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out or cfg.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = _load(args)
    for d in run_train(cfg, _out(args, cfg), args.jobs):
        print(d)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    out = _out(args, cfg)
    run_evaluate(cfg, out, args.jobs)
    print((out / "summary.md").read_text(), end="")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = _out(args, cfg)
    run_sweep(cfg, out, args.jobs, args.force_grid, args.plot)
    print((out / "sweep.md").read_text(), end="")
    return EXIT_OK


def cmd_verify(args) -> int:
    t = time.perf_counter()
    results = run_battery(args.scale, args.seed, args.fault_gamma_scale)
    lines = [f"verify scale={args.scale} seed={args.seed}"] + [r.line() for r in results]
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} checks passed")
    report = "\n".join(lines) + "\n"
    print(report, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.txt").write_text(report)
    print(f"elapsed {time.perf_counter() - t:.1f}s", file=sys.stderr)
    return EXIT_CHECK if n_fail else EXIT_OK


def cmd_gen(args) -> int:
    if args.config:
        text = Path(args.config).read_text()
        if "[experiment]" not in text:
            text = "[experiment]\nmethods = vanilla\nattacks = optimal\nseeds = 0\n" + text
        cfg = parse_config(text, Path(args.config).parent)
    else:
        if not args.env:
            raise ConfigError("gen needs --config or --env")
        body = [f"generator = {args.env}"]
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set {item!r}: expected KEY=VALUE")
            body.append(item)
        text = "[experiment]\nmethods = vanilla\nattacks = optimal\nseeds = 0\n[environment]\n" + "\n".join(body) + "\n"
        cfg = parse_config(text)
    mdp = cfg.build_env(args.seed)
    save(mdp, args.out)
    print(f"wrote {mdp.name} ({mdp.n_states} states, {mdp.n_actions} actions) to {args.out}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "sweep": cmd_sweep, "verify": cmd_verify, "gen": cmd_gen}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ModelFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArtifactError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
