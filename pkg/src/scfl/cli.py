"""Command line entry point: ``scfl run|sweep|privacy|verify|plot``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import parse_config
from .errors import ScflError
from .experiment import VERIFY_SUITES, run_experiment, run_privacy, run_sweep, run_verify, write_error


def _common(p):
    p.add_argument("--config", required=True, type=Path, help="experiment config file")
    p.add_argument("--seed", type=int, default=None, help="override experiment.seed")
    p.add_argument("--out", type=Path, default=None, help="output directory (default run.output_dir)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scfl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one strategy and write epochs.csv + summary.json")
    _common(p)
    p.add_argument("--plot", action="store_true", help="also render loss_vs_time.png")

    p = sub.add_parser("sweep", help="one run per value of a parameter, merged into sweep.csv")
    _common(p)
    p.add_argument("--axis", required=True,
                   help="sigma, target_epsilon, T, b_s, psi or c")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--plot", action="store_true", help="also render sweep.png")

    p = sub.add_parser("privacy", help="privacy budget of the coded data, no training")
    _common(p)

    p = sub.add_parser("verify", help="Monte Carlo checks of the analysis")
    _common(p)
    p.add_argument("--suite", default="all", choices=VERIFY_SUITES)

    p = sub.add_parser("plot", help="overlay the loss curves of finished runs")
    p.add_argument("runs", nargs="+", type=Path, help="run output directories")
    p.add_argument("--out", type=Path, required=True, help="image path")
    p.add_argument("--loss", action="store_true", help="plot raw loss instead of the gap")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "plot":
        from .plotting import plot_runs
        print(plot_runs(args.runs, args.out, relative_gap=not args.loss))
        return 0

    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    except (ScflError, OSError) as exc:
        out = args.out or Path("out")
        write_error(out, exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = args.out or Path(cfg.run.output_dir)

    if args.command == "run":
        code = run_experiment(cfg, out)
        if args.plot and (out / "epochs.csv").exists():
            from .plotting import plot_runs
            plot_runs([out], out / "loss_vs_time.png")
    elif args.command == "sweep":
        try:
            code = run_sweep(cfg, args.axis, args.values.split(","), out, jobs=args.jobs)
        except ScflError as exc:
            write_error(out, exc)
            print(f"error: {exc}", file=sys.stderr)
            return 2
        if args.plot:
            from .plotting import plot_sweep
            plot_sweep(out)
    elif args.command == "privacy":
        code = run_privacy(cfg, out)
    else:
        code = run_verify(cfg, args.suite, out)

    if code != 0 and (out / "error.json").exists():
        print((out / "error.json").read_text(encoding="utf-8"), file=sys.stderr, end="")
    return code


if __name__ == "__main__":
    sys.exit(main())
