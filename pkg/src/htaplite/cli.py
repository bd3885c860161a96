"""Command line entry points: datagen, run, verify, simulate.

Every subcommand reads the same flat key=value configuration, and any
key can be overridden on the command line with --set. File outputs are
pure functions of the configuration and seed; wall-clock measurements
are printed to the console and never written to files.
"""

import argparse
import sys
import time
from pathlib import Path

from .config import ConfigError, EXPERIMENTS, load_config
from .experiments import (datagen, dump_tables, mix_workload, run_experiment,
                          sim_database, write_csv)
from .rde import S1, S2, S3_IS, S3_NI
from .simcost import ADAPTIVE, TRACE_COLUMNS, run_sequence
from .verify import CHECK_NAMES, FAULTS, REPORT_NAME, all_passed, run_checks, \
    write_report

POLICIES = {
    "adaptive": ADAPTIVE,
    "s1": S1,
    "s2": S2,
    "s3-is": S3_IS,
    "s3-ni": S3_NI,
}


def _add_config_flags(sub):
    sub.add_argument("--config", metavar="PATH",
                     help="key=value configuration file")
    sub.add_argument("--set", metavar="KEY=VALUE", action="append",
                     default=[], dest="overrides",
                     help="override one configuration key (repeatable)")
    sub.add_argument("--out", metavar="DIR",
                     help="output directory (default: the output_dir key)")
    sub.add_argument("--scale", type=float, metavar="X",
                     help="shorthand for --set scale_factor=X")
    sub.add_argument("--seed", type=int, metavar="N",
                     help="shorthand for --set seed=N")


def _load(args):
    overrides = list(args.overrides)
    if args.scale is not None:
        overrides.append("scale_factor=%r" % args.scale)
    if args.seed is not None:
        overrides.append("seed=%d" % args.seed)
    if args.out is not None:
        overrides.append("output_dir=%s" % args.out)
    return load_config(args.config, overrides)


def _out_dir(cfg):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_datagen(args):
    cfg = _load(args)
    cfg.check()
    out = _out_dir(cfg)
    started = time.monotonic()
    rig = datagen(cfg)
    files = dump_tables(rig.db, out)
    for name, store in rig.db.tables.items():
        print("datagen: %-10s %8d rows" % (name, store.committed_rows))
    print("datagen: freshness rate %.1f, %d files in %s (%.2fs)"
          % (rig.ctl.freshness().freshness_rate, len(files), out,
             time.monotonic() - started))
    return 0


def _cmd_run(args):
    cfg = _load(args)
    cfg.check()
    out = _out_dir(cfg)
    started = time.monotonic()
    files = run_experiment(args.experiment, cfg, out_dir=out, echo=print)
    print("run: %s wrote %d files to %s (%.2fs)"
          % (args.experiment, len(files), out, time.monotonic() - started))
    return 0


def _cmd_verify(args):
    cfg = _load(args)
    out = _out_dir(cfg)
    names = args.checks if args.checks else None
    faults = frozenset(args.faults)
    results = run_checks(cfg, faults=faults, names=names, echo=print)
    report = write_report(results, out / REPORT_NAME)
    failed = sum(1 for r in results if not r.ok)
    print("verify: %d checks, %d failed; report %s"
          % (len(results), failed, report))
    return 0 if all_passed(results) else 1


def _cmd_simulate(args):
    cfg = _load(args)
    cfg.check()
    out = _out_dir(cfg)
    policy = POLICIES[args.policy]
    workload = mix_workload(cfg.sim_steps, cfg.sim_txns_per_step)
    trace = run_sequence(workload, policy, cfg.scheduler_config(),
                         cfg.cost_params(),
                         simdb=sim_database(cfg.scale_factor),
                         topology=cfg.topology(),
                         elastic_grant=cfg.elastic_grant_cpus)
    path = write_csv(out / "sim_trace.csv", "simulated sequence",
                     TRACE_COLUMNS, trace.rows())
    tps = [e.oltp_tps for e in trace.events]
    print("simulate: %s over %d queries at %d txns/step: %.3fs analytical, "
          "mean %.0f tps" % (args.policy, len(trace.events),
                             cfg.sim_txns_per_step,
                             trace.cumulative_olap_seconds,
                             sum(tps) / len(tps) if tps else 0.0))
    print("simulate: trace written to %s" % path)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="htap",
        description="Desk-scale hybrid transactional and analytical engine.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("datagen",
                        help="load the engine and dump every table as CSV")
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_datagen)

    p = subs.add_parser("run", help="run one named experiment")
    p.add_argument("experiment", choices=EXPERIMENTS)
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_run)

    p = subs.add_parser("verify",
                        help="run self-checks and write a pass/fail report")
    _add_config_flags(p)
    p.add_argument("--check", action="append", default=[], dest="checks",
                   choices=CHECK_NAMES, metavar="NAME",
                   help="run only this check (repeatable); default is all: "
                        + ", ".join(CHECK_NAMES))
    p.add_argument("--inject-fault", action="append", default=[],
                   dest="faults", choices=FAULTS, metavar="NAME",
                   help="sabotage one mechanism to prove the checks catch "
                        "it; choices: " + ", ".join(FAULTS))
    p.set_defaults(fn=_cmd_verify)

    p = subs.add_parser("simulate",
                        help="run the cost simulator over a query sequence")
    _add_config_flags(p)
    p.add_argument("--policy", default="adaptive", type=str.lower,
                   choices=sorted(POLICIES),
                   help="scheduling policy (default adaptive)")
    p.add_argument("--steps", type=int, metavar="N",
                   help="shorthand for --set sim_steps=N")
    p.add_argument("--txns-per-step", type=int, metavar="N",
                   help="shorthand for --set sim_txns_per_step=N")
    p.set_defaults(fn=_cmd_simulate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "steps", None) is not None:
        args.overrides.append("sim_steps=%d" % args.steps)
    if getattr(args, "txns_per_step", None) is not None:
        args.overrides.append("sim_txns_per_step=%d" % args.txns_per_step)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print("configuration error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
