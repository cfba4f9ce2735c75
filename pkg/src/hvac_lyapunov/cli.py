"""
Command-line entry point.

    hvac-lyapunov simulate --config run.json --controller cdra --seed 7 --out results/
    hvac-lyapunov tune     --config run.json
    hvac-lyapunov sweep    --config run.json --param tmax --values 24 26 28 --out sweep/
    hvac-lyapunov validate --config run.json

Exit status: 0 on success, 2 when the inputs fail validation (config,
traces, controllability, tuning), 1 on any other runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import (
    ConfigError,
    ControllabilityError,
    HvacError,
    InvalidModelError,
    TraceFormatError,
    TuningError,
)
from .simulation import (
    CONTROLLERS,
    SWEEP_PARAMS,
    emit_report,
    load_config,
    prepare,
    run_simulation,
    sweep,
    write_sweep,
)
from .solver import compute_envelope
from .thermal import validate_controllability

log = logging.getLogger("hvac_lyapunov")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2
_VALIDATION_ERRORS = (ConfigError, ControllabilityError, InvalidModelError, TraceFormatError,
                      TuningError)


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _values(items: list[str]) -> list[float]:
    out = []
    for item in items:
        out += [float(x) for x in item.split(",") if x.strip()]
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hvac-lyapunov", description=__doc__.split("\n\n")[0].strip())
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one controller over the horizon")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--controller", choices=CONTROLLERS)
    s.add_argument("--seed", type=_u64)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--format", choices=("csv", "json", "both"), default="both")
    s.add_argument("--override-controllability", action="store_true")
    s.add_argument("--distributed", action="store_true",
                   help="solve each slot with the EMS/agent message protocol")
    s.add_argument("--no-plot", action="store_true")

    t = sub.add_parser("tune", help="print the tuning bundle")
    t.add_argument("--config", required=True, type=Path)
    t.add_argument("--override-controllability", action="store_true")

    w = sub.add_parser("sweep", help="re-run controllers across T_max or phi")
    w.add_argument("--config", required=True, type=Path)
    w.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    w.add_argument("--values", required=True, nargs="+")
    w.add_argument("--controllers", nargs="+", choices=CONTROLLERS, default=list(CONTROLLERS))
    w.add_argument("--seeds", nargs="+", type=_u64)
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--out", type=Path, default=Path("sweep"))
    w.add_argument("--override-controllability", action="store_true")
    w.add_argument("--no-plot", action="store_true")

    v = sub.add_parser("validate", help="evaluate the controllability inequalities")
    v.add_argument("--config", required=True, type=Path)
    return p


def _load(args):
    config = load_config(args.config)
    if getattr(args, "override_controllability", False):
        config = config.with_overrides(override_controllability=True)
    return config


def cmd_simulate(args) -> int:
    config = _load(args)
    over = {}
    if args.controller:
        over["controller"] = args.controller
    if args.seed is not None:
        over["seed"] = args.seed
    if args.distributed:
        over["distributed"] = True
    config = config.with_overrides(**over)
    report = run_simulation(config, record=args.format in ("csv", "both") or not args.no_plot)
    paths = emit_report(report, args.format, args.out)
    if not args.no_plot:
        from .plotting import plot_run
        paths.append(plot_run(report, args.out / "run.png"))
    agg = report.aggregates
    print(f"{report.controller} seed={report.seed} slots={agg['slots']} "
          f"avg_total={agg['avg_total_cost']:.6g} avg_energy={agg['avg_energy_cost']:.6g} "
          f"atd={agg['atd']:.4f} violations={report.diagnostics['band_violations']} "
          f"({report.wall_clock:.1f}s)")
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_tune(args) -> int:
    setup = prepare(_load(args))
    if setup.tuning is None:
        raise TuningError("no tuning could be derived for this configuration")
    doc = {"tuning": setup.tuning.to_dict(), "envelope": setup.envelope.to_dict()}
    print(json.dumps(doc, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _load(args)
    rows = sweep(config, args.param, _values(args.values), controllers=args.controllers,
                 seeds=args.seeds, workers=args.workers)
    paths = write_sweep(rows, args.out)
    if not args.no_plot:
        from .plotting import plot_sweep
        paths.append(plot_sweep(rows, args.out / "sweep.png"))
    for r in rows:
        print(f"{r['param']}={r['value']:g} {r['controller']:5s} seed={r['seed']} "
              f"energy={r['avg_energy_cost']:.6g} total={r['avg_total_cost']:.6g} atd={r['atd']:.4f}")
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_validate(args) -> int:
    config = load_config(args.config)
    traces = config.traces()
    env = compute_envelope(traces.slot_price, traces.slot_t_out, config.building,
                           q_support=config.q_range, t_ref_support=config.t_ref_values)
    report = validate_controllability(config.building, env)
    print(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    return EXIT_OK if report.passed else EXIT_INVALID


COMMANDS = {"simulate": cmd_simulate, "tune": cmd_tune, "sweep": cmd_sweep, "validate": cmd_validate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (HvacError, OSError, ValueError) as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
