"""Devices, servers, FIFO compute stations and the network jitter model."""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from ..cache import CacheTier


@dataclass(frozen=True)
class DeviceProfile:
    id: str
    tier: str
    capacity: float                 # evals/ms
    bandwidth_kb_per_ms: float
    latency_tolerance_ms: float
    home_edge_server: int

    def __post_init__(self):
        if self.capacity <= 0 or self.bandwidth_kb_per_ms <= 0:
            raise ValueError("device capacity and bandwidth must be > 0")


@dataclass
class ServerProfile:
    id: str
    capacity: float                 # evals/ms per worker
    workers: int
    rtt_to_devices_ms: float
    rtt_to_cloud_ms: float
    cache: Optional[CacheTier] = None

    def __post_init__(self):
        if self.capacity <= 0 or self.workers < 1:
            raise ValueError("server capacity must be > 0 with at least one worker")


class Station:
    """One FIFO queue served by ``workers`` identical workers.

    Jobs must be submitted in non-decreasing arrival time (the event loop
    guarantees this), so the earliest-free worker always takes the next job.
    """

    def __init__(self, name: str, capacity: float, workers: int = 1):
        if capacity <= 0 or workers < 1:
            raise ValueError("station needs capacity > 0 and at least one worker")
        self.name = name
        self.capacity = capacity
        self.workers = workers
        self._free: List[float] = [0.0] * workers
        self.busy_ms = 0.0
        self.jobs = 0

    def queue_delay(self, now: float) -> float:
        return max(0.0, self._free[0] - now)

    def service_ms(self, evals: float) -> float:
        return evals / self.capacity

    def submit(self, now: float, evals: float) -> Tuple[float, float]:
        """Enqueue a job arriving at ``now``; returns (start, finish)."""
        start = max(now, heapq.heappop(self._free))
        finish = start + self.service_ms(evals)
        heapq.heappush(self._free, finish)
        self.busy_ms += finish - start
        self.jobs += 1
        return start, finish


def jitter_factor(u, jitter_frac: float):
    """Map uniform draws in [0, 1) to multiplicative factors in [1-j, 1+j]."""
    return 1.0 + jitter_frac * (2.0 * np.asarray(u) - 1.0)


def network_jitter(base_rtt: float, jitter_frac: float = 0.3, seed=0,
                   size: Optional[int] = None):
    """Seeded round-trip time drawn uniformly in ``base*(1-j) .. base*(1+j)``."""
    if base_rtt < 0 or not 0.0 <= jitter_frac < 1.0:
        raise ValueError("base_rtt must be >= 0 and jitter_frac in [0, 1)")
    u = np.random.default_rng(seed).random(size)
    out = base_rtt * jitter_factor(u, jitter_frac)
    return float(out) if size is None else out
