"""Command-line entry points: simulate, sweep, serve, verify-bench, calibrate."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from typing import List, Optional, Sequence

from .simulation.config import SCENARIOS, ConfigError, load_config
from .simulation.engine import ABLATIONS, MODES, Simulator
from .simulation.metrics import aggregate
from .simulation.sweep import EXPERIMENTS, sweep, to_csv


def _ints(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _clean(obj):
    """JSON-safe copy: NaN and infinities become null."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _write(text: str, path: Optional[str]) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    ablations = sorted({a for a in args.ablate if a != "none"})
    overrides = {"num_devices": args.devices, "duration_hours": args.hours}
    if args.hours is not None and args.warmup is None:
        # keep the preset's warm-up share of the run
        base = cfg.workload(args.scenario)
        overrides["warmup_hours"] = base.warmup_hours * args.hours / base.duration_hours
    if args.warmup is not None:
        overrides["warmup_hours"] = args.warmup
    wl = cfg.workload(args.scenario, **overrides)
    reports = []
    log_lines = []
    for s in args.seeds:
        sim = Simulator(cfg.system, wl, args.mode, ablations, seed=s,
                        event_log=args.event_log is not None)
        reports.append(sim.run())
        log_lines.extend(sim.event_log_lines())
    doc = {
        "scenario": args.scenario,
        "mode": args.mode,
        "ablations": ablations,
        "seeds": args.seeds,
        "reports": [r.to_dict() for r in reports],
        "aggregate": aggregate(reports),
    }
    _write(dumps(doc), args.out)
    if args.event_log is not None:
        with open(args.event_log, "w") as fh:
            fh.writelines(line + "\n" for line in log_lines)
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    points = sweep(args.experiment, cfg, grid=args.grid, seeds=args.seeds, modes=args.modes)
    _write(to_csv(points), args.out)
    return 0


def cmd_serve(args) -> int:
    from .service.server import serve
    cfg = load_config(args.config)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(message)s",
                        stream=sys.stderr)
    try:
        serve(cfg, args.listen)
    except KeyboardInterrupt:
        pass
    return 0


def cmd_verify_bench(args) -> int:
    from .verification import VerificationConfig, drift_benchmark
    cfg = load_config(args.config)
    s = cfg.system
    m = s.model
    magnitude = s.drift_magnitude if args.drift is None else args.drift
    vcfg = VerificationConfig(s.verification_n, s.verification_threshold, s.perturbation_scale)
    reports = [drift_benchmark(magnitude, seed, args.models, args.points,
                               cfg.workload("mqc").input_dim, m.kind, m.num_classes,
                               m.hidden, m.scale, cfg=vcfg)
               for seed in args.seeds]
    doc = {
        "drift": magnitude,
        "seeds": args.seeds,
        "reports": [r.to_dict() for r in reports],
        "mean_detection": sum(r.detection for r in reports) / len(reports),
        "mean_false_positive": sum(r.false_positive for r in reports) / len(reports),
        "cost_ratio": reports[0].cost_ratio,
    }
    _write(dumps(doc), args.out)
    return 0


def cmd_calibrate(args) -> int:
    from .simulation.calibration import calibrate_revisit
    cfg = load_config(args.config)
    doc = {sc: calibrate_revisit(cfg, sc, args.grid, args.seeds) for sc in args.scenario}
    _write(dumps(doc), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xaas", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="JSON config (defaults built in)")
        sp.add_argument("--out", default=None, help="output path (default stdout)")

    sp = sub.add_parser("simulate", help="run the simulator for one mode over seeds")
    common(sp)
    sp.add_argument("--scenario", choices=SCENARIOS, default="mqc")
    sp.add_argument("--devices", type=int, default=None)
    sp.add_argument("--hours", type=float, default=None)
    sp.add_argument("--warmup", type=float, default=None, help="warm-up hours")
    sp.add_argument("--seeds", type=_ints, default=[0])
    sp.add_argument("--mode", choices=MODES, default="xaas")
    sp.add_argument("--ablate", action="append", choices=("none",) + ABLATIONS, default=[])
    sp.add_argument("--event-log", default=None, help="write the NDJSON event log here")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="one simulation per grid point, CSV output")
    common(sp)
    sp.add_argument("--experiment", choices=EXPERIMENTS, required=True)
    sp.add_argument("--grid", type=_floats, default=None)
    sp.add_argument("--seeds", type=_ints, default=None)
    sp.add_argument("--modes", type=lambda t: t.split(","), default=None)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("serve", help="run the NDJSON explanation service")
    sp.add_argument("--config", default=None)
    sp.add_argument("--listen", default=None, help="host:port")
    sp.add_argument("--log-level", default="INFO",
                    choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("verify-bench", help="drift detection benchmark")
    common(sp)
    sp.add_argument("--drift", type=float, default=None)
    sp.add_argument("--seeds", type=_ints, default=[0, 1, 2, 3, 4])
    sp.add_argument("--models", type=int, default=10)
    sp.add_argument("--points", type=int, default=20)
    sp.set_defaults(func=cmd_verify_bench)

    sp = sub.add_parser("calibrate", help="revisit-probability sweep per scenario")
    common(sp)
    sp.add_argument("--scenario", choices=SCENARIOS, action="append", default=None)
    sp.add_argument("--grid", type=_floats, default=None)
    sp.add_argument("--seeds", type=_ints, default=[0])
    sp.set_defaults(func=cmd_calibrate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "scenario", ()) is None and args.command == "calibrate":
        args.scenario = list(SCENARIOS)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"xaas {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
