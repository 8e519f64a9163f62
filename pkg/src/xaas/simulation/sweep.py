"""Parameter sweeps: one simulation per (grid point, mode, seed), CSV output.

Each experiment varies one knob over a grid while every other setting and
the seed list stay shared across grid points.  Presets live in the
``sweeps`` section of the config file; a preset names the scenario, the
modes to run, the default grid and any workload overrides.
"""

from __future__ import annotations

import csv
import dataclasses
import io
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence

from .config import Config, ConfigError, SystemConfig, WorkloadConfig
from .engine import Simulator
from .metrics import SCALAR_METRICS, MetricsReport

EXPERIMENTS = ("cache_size", "device_scale", "load_scale", "heterogeneity", "eps_sim")

CSV_COLUMNS = ("experiment", "grid_value", "seed", "mode") + SCALAR_METRICS + (
    "requests", "verifications", "verification_failures", "config_hash")


@dataclass(frozen=True)
class SweepPoint:
    experiment: str
    grid_value: float
    seed: int
    mode: str
    report: MetricsReport

    def row(self) -> Dict[str, Any]:
        r = self.report
        out = {"experiment": self.experiment, "grid_value": self.grid_value,
               "seed": self.seed, "mode": self.mode}
        for k in SCALAR_METRICS + ("requests", "verifications", "verification_failures",
                                   "config_hash"):
            out[k] = getattr(r, k)
        return out


def apply_point(experiment: str, value: float, system: SystemConfig, wl: WorkloadConfig,
                preset: Mapping[str, Any]):
    """System and workload configs for one grid point of ``experiment``."""
    if experiment == "cache_size":
        system = dataclasses.replace(system, local_cache_capacity=int(value))
    elif experiment == "eps_sim":
        # a fixed threshold: the adapter would otherwise move it
        lo, hi = system.eps_band
        system = dataclasses.replace(system, eps_sim=float(value), adapt_threshold=False,
                                     eps_band=(min(lo, value), max(hi, value)))
    elif experiment == "heterogeneity":
        low = float(value)
        if not 0.0 <= low <= 1.0:
            raise ConfigError("low-tier fraction must be in [0, 1]")
        rest = (1.0 - low) / 2.0
        wl = dataclasses.replace(wl, tier_mix=(low, rest, rest))
    elif experiment == "device_scale":
        # fixed per-device rate; the horizon keeps the expected request count equal
        n = int(value)
        rate = n * float(preset.get("per_device_rate", 0.3))
        hours = float(preset.get("requests_per_point", 10000)) / rate / 3600.0
        wl = dataclasses.replace(wl, num_devices=n, arrival_rate=rate, duration_hours=hours,
                                 warmup_hours=hours * float(preset.get("warmup_fraction", 0.1)))
    elif experiment == "load_scale":
        wl = dataclasses.replace(wl, arrival_rate=float(value))
    else:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    return system, wl


def sweep(experiment: str, config: Config, grid: Optional[Sequence[float]] = None,
          seeds: Optional[Sequence[int]] = None, modes: Optional[Sequence[str]] = None,
          **workload_overrides) -> List[SweepPoint]:
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    preset = dict(config.sweeps.get(experiment, {}))
    grid = list(grid if grid is not None else preset.get("grid", ()))
    if not grid:
        raise ConfigError(f"experiment {experiment!r} needs a grid")
    seeds = list(seeds if seeds is not None else preset.get("seeds", [0]))
    modes = list(modes if modes is not None else preset.get("modes", ["xaas"]))
    overrides = dict(preset.get("workload", {}))
    overrides.update(workload_overrides)
    base_wl = config.workload(preset.get("scenario", "mqc"), **overrides)
    points = []
    for value in grid:
        system, wl = apply_point(experiment, value, config.system, base_wl, preset)
        for mode in modes:
            for seed in seeds:
                report = Simulator(system, wl, mode, seed=seed).run()
                points.append(SweepPoint(experiment, value, int(seed), mode, report))
    return points


def to_csv(points: Sequence[SweepPoint]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for p in points:
        row = p.row()
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()
