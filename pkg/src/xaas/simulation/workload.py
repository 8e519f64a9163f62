"""Synthetic request streams with tunable locality.

A seeded pool of ``cluster_count`` centers stands for the recurring input
patterns of a deployment; center ``k`` (0-based) has Zipf popularity
proportional to ``(k + 1) ** -zipf_s``.  With probability ``revisit_prob``
a request samples a center by popularity and perturbs it with small
Gaussian noise, so it embeds within the cache's similarity band of every
earlier request on that center.  Otherwise the request is a one-off input,
uniform over the input box, that belongs to no cluster.

Popularity is fleet-wide while local cache tiers are per edge region, so
each region has to meet a center once before serving it locally; coverage
of the popularity mass, and with it the hit rate, climbs over the first
hours of a run.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterator, List, Optional

import numpy as np

from ..embedding import Encoder, EncoderConfig
from .config import TIERS, SystemConfig, WorkloadConfig
from .profiles import DeviceProfile

MIN_CENTER_NORM_FRAC = 0.65     # of the typical norm sqrt(d/3) of a uniform point


@dataclass(frozen=True)
class ExplanationRequest:
    request_id: str
    x: np.ndarray
    model_id: str
    device_id: str
    prediction: Optional[int]
    rho_fid: float
    rho_lat: float
    issued_at: float                # simulated ms
    index: int = 0
    cluster: int = -1               # -1 for one-off inputs


def make_devices(system: SystemConfig, wl: WorkloadConfig) -> List[DeviceProfile]:
    """Seeded fleet; tier counts follow ``tier_mix``, home servers round-robin.

    Counts use largest-remainder rounding and the order is a seeded shuffle,
    so a small fleet has the same composition as a large one.
    """
    rng = np.random.default_rng([wl.seed, 0xDE71CE])
    tiers = rng.permutation(tier_counts(wl.tier_mix, wl.num_devices))
    tol = wl.rho_lat * (1.0 + wl.latency_spread * (2.0 * rng.random(wl.num_devices) - 1.0))
    return [DeviceProfile(f"dev-{i}", TIERS[t], float(system.device_capacity[TIERS[t]]),
                          float(system.device_bandwidth_kb_per_ms[TIERS[t]]), float(tol[i]),
                          i % system.edge_servers)
            for i, t in enumerate(tiers)]


def tier_counts(mix, n: int) -> np.ndarray:
    """Tier index per device before shuffling, ``round(n * mix)`` summing to ``n``."""
    share = n * np.asarray(mix, dtype=float)
    counts = np.floor(share).astype(int)
    # ties go to the lower tier index
    order = np.argsort(-(share - counts), kind="stable")
    counts[order[:n - counts.sum()]] += 1
    return np.repeat(np.arange(len(counts)), counts)


@lru_cache(maxsize=16)
def _centers(seed: int, count: int, dim: int, separation: float,
             encoder_seed: int, embedding_dim: int) -> np.ndarray:
    encoder = Encoder(EncoderConfig(encoder_seed, dim, embedding_dim))
    rng = np.random.default_rng([seed, 0xC1057])
    min_norm = MIN_CENTER_NORM_FRAC * np.sqrt(dim / 3.0)
    kept = np.empty((count, dim))
    emb = np.empty((count, embedding_dim))
    n = tries = 0
    while n < count:
        tries += 1
        if tries > 200 * count + 1000:
            raise ValueError(f"cannot place {count} centers {separation} apart; "
                             "lower cluster_count or center_separation")
        c = rng.uniform(-1.0, 1.0, dim)
        if np.linalg.norm(c) < min_norm:
            continue
        e = encoder(c)
        if n and np.min(np.sum((emb[:n] - e) ** 2, axis=1)) < separation**2:
            continue
        kept[n], emb[n] = c, e
        n += 1
    kept.setflags(write=False)
    return kept


def cluster_centers(wl: WorkloadConfig, system: SystemConfig) -> np.ndarray:
    """The seeded center pool, pairwise at least ``center_separation`` apart in embedding space."""
    return _centers(wl.seed, wl.cluster_count, wl.input_dim, wl.center_separation,
                    system.encoder_seed, system.embedding_dim)


def generate_workload(wl: WorkloadConfig, system: SystemConfig,
                      devices: Optional[List[DeviceProfile]] = None,
                      model_at: Optional[Callable[[float], object]] = None,
                      model_id: Optional[str] = None) -> Iterator[ExplanationRequest]:
    """Time-ordered request stream for one run.

    ``model_at(t)`` returns the model deployed at simulated time ``t``; when
    given, each request carries that model's prediction for its input.
    """
    wl.validate()
    devices = devices if devices is not None else make_devices(system, wl)
    centers = cluster_centers(wl, system)
    ranks = np.arange(1, wl.cluster_count + 1, dtype=np.float64)
    cum = np.cumsum(ranks ** -wl.zipf_s)
    last = wl.cluster_count - 1
    model_id = model_id or f"{wl.scenario}-model"
    rng = np.random.default_rng([wl.seed, 0x3012C])
    horizon = wl.duration_hours * 3.6e6
    mean_gap = 1000.0 / wl.arrival_rate
    t = 0.0
    index = 0
    block = 2048
    while True:
        gaps = rng.exponential(mean_gap, block)
        dev_idx = rng.integers(0, len(devices), block)
        u_revisit = rng.random(block)
        u_rank = rng.random(block)
        noise = rng.standard_normal((block, wl.input_dim))
        fresh = rng.uniform(-1.0, 1.0, (block, wl.input_dim))
        for b in range(block):
            t += gaps[b]
            if t >= horizon:
                return
            dev = devices[dev_idx[b]]
            if u_revisit[b] < wl.revisit_prob:
                r = int(np.searchsorted(cum, u_rank[b] * cum[-1], side="right"))
                cluster = min(r, last)
            else:
                cluster = -1
            if cluster >= 0:
                x = np.clip(centers[cluster] + wl.cluster_spread * noise[b], -1.0, 1.0)
            else:
                x = fresh[b]
            pred = None
            if model_at is not None:
                pred = int(np.argmax(model_at(t).proba(x[None, :])[0]))
            yield ExplanationRequest(f"{wl.scenario}-{wl.seed}-{index}", x, model_id, dev.id,
                                     pred, wl.rho_fid, dev.latency_tolerance_ms, t, index,
                                     cluster)
            index += 1
