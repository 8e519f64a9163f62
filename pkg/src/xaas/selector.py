"""Method and execution-location selection under the weighted cost model.

Estimated cost of running method ``m`` at location ``l`` for device ``d``::

    total = alpha * t_compute + beta * t_comm
    t_compute = base_cost / capacity + queue_delay
    t_comm    = 0 on the device itself, else payload / bandwidth + rtt

Selection is greedy over methods in descending fidelity prior (ties: cheaper
first).  The first applicable method meeting the fidelity requirement that
has a location within the latency bound wins, at its cheapest feasible
location.  With nothing feasible the best-effort pair is the highest-prior
method at its cheapest location.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .explainers import MethodProfile

DEVICE, EDGE, CLOUD = "device", "edge", "cloud"


@dataclass(frozen=True)
class Location:
    kind: str
    id: str
    capacity: float                 # model evaluations per ms
    queue_delay_ms: float = 0.0
    rtt_ms: float = 0.0

    def __post_init__(self):
        if self.capacity <= 0:
            raise ValueError("location capacity must be > 0")
        if self.kind not in (DEVICE, EDGE, CLOUD):
            raise ValueError(f"unknown location kind {self.kind!r}")


@dataclass(frozen=True)
class CostWeights:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ValueError("weights must be >= 0 with alpha + beta > 0")


@dataclass(frozen=True)
class Payload:
    """Wire sizes in bytes: request = d*8 + 64, explanation = 2*d*8 + 128."""
    bytes_per_feature: int = 8
    request_overhead: int = 64
    response_overhead: int = 128

    def bytes(self, input_dim: int) -> int:
        req = input_dim * self.bytes_per_feature + self.request_overhead
        resp = 2 * input_dim * self.bytes_per_feature + self.response_overhead
        return req + resp


@dataclass(frozen=True)
class DeviceInfo:
    """What the selector needs to know about the requesting device."""
    id: str
    bandwidth_kb_per_ms: float
    input_dim: int = 8


@dataclass(frozen=True)
class LatencyEstimate:
    t_compute_ms: float
    t_comm_ms: float
    total_ms: float


def estimate_cost(method: MethodProfile, loc: Location, device: DeviceInfo,
                  weights: CostWeights = CostWeights(),
                  payload: Payload = Payload()) -> LatencyEstimate:
    t_compute = method.base_cost / loc.capacity + loc.queue_delay_ms
    if loc.kind == DEVICE:
        t_comm = 0.0
    else:
        t_comm = payload.bytes(device.input_dim) / (device.bandwidth_kb_per_ms * 1000.0) + loc.rtt_ms
    return LatencyEstimate(t_compute, t_comm, weights.alpha * t_compute + weights.beta * t_comm)


@dataclass
class Selection:
    method: MethodProfile
    location: Location
    estimate: LatencyEstimate
    feasible: bool
    evaluations: int = 0

    @property
    def sla_missed(self) -> bool:
        return not self.feasible


def method_order(methods: Sequence[MethodProfile]) -> List[MethodProfile]:
    return sorted(methods, key=lambda m: (-m.fidelity_prior, m.base_cost, m.method_id))


def select(rho_fid: float, rho_lat: float, device: DeviceInfo, locations: Sequence[Location],
           methods: Sequence[MethodProfile], model_kind: str,
           weights: CostWeights = CostWeights(), payload: Payload = Payload()
           ) -> Optional[Selection]:
    """Greedy fidelity-first selection; ``None`` only if no method applies."""
    if not methods or not locations:
        raise ValueError("select needs at least one method and one location")
    evaluations = 0
    best_effort: Optional[Tuple[MethodProfile, Location, LatencyEstimate]] = None
    ordered = [m for m in method_order(methods) if m.applicable(model_kind)]
    for method in ordered:
        if method.fidelity_prior < rho_fid:
            continue
        best: Optional[Tuple[Location, LatencyEstimate]] = None
        for loc in locations:
            est = estimate_cost(method, loc, device, weights, payload)
            evaluations += 1
            if best is None or est.total_ms < best[1].total_ms:
                best = (loc, est)
        if best_effort is None:
            best_effort = (method, best[0], best[1])
        if best[1].total_ms <= rho_lat:
            return Selection(method, best[0], best[1], True, evaluations)
    if best_effort is None and ordered:
        # nothing meets the fidelity requirement: fall back to the top method
        method = ordered[0]
        best = None
        for loc in locations:
            est = estimate_cost(method, loc, device, weights, payload)
            evaluations += 1
            if best is None or est.total_ms < best[1].total_ms:
                best = (loc, est)
        best_effort = (method, best[0], best[1])
    if best_effort is None:
        return None
    return Selection(*best_effort, feasible=False, evaluations=evaluations)
