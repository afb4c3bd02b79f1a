"""``bench`` command line: Monte Carlo sweeps written as CSV."""

from __future__ import annotations

import argparse
import logging
import sys

from .bench import METHODS, ExperimentSpec, run_experiment, write_csv
from .scenario import default_config, load_config

DEFAULT_VALUES = {
    "sweep-pilots": "4,8,12,16,20,24,28,32,36,40",
    "sweep-symbols": "1,2,3,4,5,6,7,8,9,10,11,12,13",
}


def _values(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty value list")
    return vals


def _methods(text: str) -> tuple[str, ...]:
    names = tuple(m.strip() for m in text.split(",") if m.strip())
    bad = [m for m in names if m not in METHODS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown methods {bad}; choose from {','.join(METHODS)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file of configuration overrides")
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--trials", type=int, default=200, help="Monte Carlo trials per point (default 200)")
    common.add_argument("--methods", type=_methods, default=METHODS, help="comma list of msnfce,somp,crb")
    common.add_argument("--out", help="CSV output path (default: stdout)")
    common.add_argument("--dump-tensor", help="write the first trial's received tensor to this file")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true", help="log per-trial failures")

    run = sub.add_parser("run", parents=[common], help="generic sweep")
    run.add_argument("--sweep", default="snr", choices=["snr", "pilots", "symbols"])
    run.add_argument("--values", type=_values, default=_values("0,5,10,15,20,25,30"))
    run.add_argument("--snr", type=float, default=20.0, help="SNR in dB when not sweeping it")

    for name, sweep in (("sweep-pilots", "pilots"), ("sweep-symbols", "symbols")):
        p = sub.add_parser(name, parents=[common], help=f"sweep {sweep} at fixed SNR")
        p.add_argument("--values", type=_values, default=_values(DEFAULT_VALUES[name]))
        p.add_argument("--snr", type=float, default=20.0)
        p.set_defaults(sweep=sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else default_config()
        spec = ExperimentSpec(sweep=args.sweep, values=args.values, n_trials=args.trials,
                              master_seed=args.seed, methods=args.methods, snr_db=args.snr,
                              out=args.out, dump_tensor=args.dump_tensor)
    except (OSError, ValueError, TypeError) as exc:
        print(f"bench: configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        rows = run_experiment(spec, cfg, jobs=args.jobs)
    except OSError as exc:
        print(f"bench: I/O error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"bench: invalid experiment: {exc}", file=sys.stderr)
        return 2
    if not args.out:
        sys.stdout.write(write_csv(rows))
    return 0


if __name__ == "__main__":
    sys.exit(main())
