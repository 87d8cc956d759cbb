"""Command-line front end.

    flashsim run --config slc-small --seed 1 --out results
    flashsim sweep --config exp.ini --param hardware.channels \
        --values 1,2,4 --seeds 2
    flashsim validate --config my.ini
    flashsim rederive --dir results/experiment/seed=1

--config accepts a file path or a shipped preset name. --out falls back
to $FLASHSIM_OUT, then ./out. Exit status: 0 success, 1 simulation or
audit failure, 2 bad config or usage.
"""

import argparse
import sys

from . import config as cfgmod
from . import experiments, rederive, sim
from .errors import ConfigError, SimulationError


def _build_parser():
    ap = argparse.ArgumentParser(
        prog="flashsim",
        description="Deterministic SSD IO-stack simulator.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="run one simulation, write artifacts")
    p.add_argument("--config", required=True,
                   help="config file path or preset name")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default=None,
                   help="output root (default: $FLASHSIM_OUT or ./out)")

    p = sub.add_parser("sweep", help="sweep one parameter across values")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--param", default=None,
                   help="dotted config key, overrides [experiment] param")
    p.add_argument("--values", default=None,
                   help="comma-separated list, overrides [experiment] values")
    p.add_argument("--seeds", type=int, default=None,
                   help="repetitions per value, overrides [experiment] seeds")

    p = sub.add_parser("validate", help="check a config and exit")
    p.add_argument("--config", required=True)

    p = sub.add_parser("rederive",
                       help="recompute metrics.csv from trace.csv and "
                            "compare bit for bit")
    p.add_argument("--dir", required=True,
                   help="a run directory holding trace.csv, metrics.csv "
                        "and config_resolved")
    return ap


def _cmd_run(args):
    cfg = cfgmod.load_config(args.config)
    out = (cfgmod.default_out_dir(args.out) / cfg["experiment"]["name"]
           / f"seed={args.seed}")
    res = experiments.run_single(cfg, args.seed, out)
    summary = experiments.summarize(res)
    print(f"wrote {out}")
    print(f"{summary['ios']} measured IOs, "
          f"throughput {summary['throughput_iops'] or 'n/a'} IO/s, "
          f"WA {summary['write_amplification'] or 'n/a'}")
    return 0


def _cmd_sweep(args):
    cfg = cfgmod.load_config(args.config)
    path = experiments.run_sweep(cfg, cfgmod.default_out_dir(args.out),
                                 param=args.param, values=args.values,
                                 seeds=args.seeds)
    print(f"wrote {path}")
    return 0


def _cmd_validate(args):
    cfg = cfgmod.load_config(args.config)
    infeasible = sim.feasibility_error(cfg)
    if infeasible:
        print(f"config error: {infeasible}", file=sys.stderr)
        return 2
    n = len(cfgmod.thread_specs(cfg))
    print(f"config ok ({n} workload thread{'s' if n != 1 else ''})")
    return 0


def _cmd_rederive(args):
    problems = rederive.check(f"{args.dir}/trace.csv",
                              f"{args.dir}/config_resolved",
                              f"{args.dir}/metrics.csv")
    if problems:
        for line in problems:
            print(line, file=sys.stderr)
        return 1
    print("metrics.csv matches the trace")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "validate": _cmd_validate,
    "rederive": _cmd_rederive,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.cmd](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing file: {exc.filename}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
