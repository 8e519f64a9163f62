"""Per-request records, run summaries and cross-seed aggregation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

SOURCES = ("cache_local", "cache_global", "generated", "failed")

SCALAR_METRICS = ("mean_latency_ms", "p50_latency_ms", "p95_latency_ms", "hit_rate_local",
                  "hit_rate_global", "hit_rate", "throughput", "offered_rate",
                  "success_rate", "mean_fidelity")


@dataclass
class RequestRecord:
    index: int
    request_id: str
    device_id: str
    tier: str
    edge: int
    issued_at: float
    latency_ms: float = math.nan
    source: str = "failed"
    method: Optional[str] = None
    location: Optional[str] = None
    fidelity: float = math.nan
    verified: bool = False
    feasible: bool = False
    rho_fid: float = 0.0
    rho_lat: float = 0.0
    model_version: int = 0

    @property
    def success(self) -> bool:
        return bool(self.source != "failed" and self.latency_ms <= self.rho_lat
                    and self.fidelity >= self.rho_fid)

    def to_dict(self) -> dict:
        # numpy scalars leak in from the cost model; keep the log plain JSON
        d = {k: v.item() if isinstance(v, np.generic) else v for k, v in asdict(self).items()}
        d["success"] = self.success
        return d


@dataclass
class MetricsReport:
    mode: str
    ablations: List[str]
    scenario: str
    seed: int
    config_hash: str
    requests: int
    offered_rate: float
    mean_latency_ms: float
    p50_latency_ms: float
    p95_latency_ms: float
    hit_rate_local: float
    hit_rate_global: float
    hit_rate: float
    throughput: float
    success_rate: float
    mean_fidelity: float
    counts: Dict[str, int] = field(default_factory=dict)
    verifications: int = 0
    verification_failures: int = 0
    model_updates: int = 0
    eps_final: float = math.nan
    time_series: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _mean(values) -> float:
    return float(np.mean(values)) if len(values) else math.nan


def _window_stats(recs: Sequence[RequestRecord], seconds: float) -> dict:
    n = len(recs)
    served = [r for r in recs if r.source != "failed"]
    lat = np.array([r.latency_ms for r in served])
    local = sum(r.source == "cache_local" for r in recs)
    glob = sum(r.source == "cache_global" for r in recs)
    good = sum(r.success for r in recs)
    return {
        "requests": n,
        "offered_rate": n / seconds if seconds > 0 else math.nan,
        "mean_latency_ms": _mean(lat),
        "p50_latency_ms": float(np.percentile(lat, 50)) if lat.size else math.nan,
        "p95_latency_ms": float(np.percentile(lat, 95)) if lat.size else math.nan,
        "hit_rate_local": local / n if n else math.nan,
        "hit_rate_global": glob / n if n else math.nan,
        "hit_rate": (local + glob) / n if n else math.nan,
        "throughput": good / seconds if seconds > 0 else math.nan,
        "success_rate": good / n if n else math.nan,
        "mean_fidelity": _mean([r.fidelity for r in served]),
    }


def summarize(records: Sequence[RequestRecord], *, mode: str, ablations: Sequence[str],
              scenario: str, seed: int, config_hash: str, warmup_ms: float,
              duration_ms: float, window_ms: float = 3.6e6, **extra) -> MetricsReport:
    """Steady-state report over requests issued after the warm-up."""
    steady = [r for r in records if warmup_ms <= r.issued_at < duration_ms]
    overall = _window_stats(steady, (duration_ms - warmup_ms) / 1000.0)
    counts = {s: 0 for s in SOURCES}
    for r in records:
        counts[r.source] += 1
    counts = {"issued": len(records), "hits": counts["cache_local"] + counts["cache_global"],
              "generated": counts["generated"], "failed": counts["failed"]}
    series = []
    n_windows = int(math.ceil(duration_ms / window_ms))
    buckets: List[List[RequestRecord]] = [[] for _ in range(n_windows)]
    for r in records:
        buckets[min(int(r.issued_at // window_ms), n_windows - 1)].append(r)
    for w, recs in enumerate(buckets):
        start = w * window_ms
        span = (min(duration_ms, start + window_ms) - start) / 1000.0
        row = {"window": w, "start_ms": start}
        row.update(_window_stats(recs, span))
        series.append(row)
    return MetricsReport(mode=mode, ablations=sorted(ablations), scenario=scenario, seed=seed,
                         config_hash=config_hash, counts=counts, time_series=series,
                         **overall, **extra)


def confidence_interval(values: Sequence[float], level: float = 0.95) -> Dict[str, float]:
    """Student-t interval for the mean; degenerate for fewer than two values."""
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=np.float64)
    if v.size == 0:
        return {"mean": math.nan, "ci_low": math.nan, "ci_high": math.nan, "n": 0}
    m = float(v.mean())
    if v.size < 2:
        return {"mean": m, "ci_low": m, "ci_high": m, "n": int(v.size)}
    half = float(stats.t.ppf(0.5 + level / 2, v.size - 1) * v.std(ddof=1) / math.sqrt(v.size))
    return {"mean": m, "ci_low": m - half, "ci_high": m + half, "n": int(v.size)}


def aggregate(reports: Sequence[MetricsReport]) -> Dict[str, Dict[str, float]]:
    return {k: confidence_interval([getattr(r, k) for r in reports]) for k in SCALAR_METRICS}
