"""Request-path logic shared by the simulator and the network service.

Lookup, verification, method/location planning, generation and cache
insertion live here; callers only supply a clock, the model snapshot and
the candidate execution locations.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .cache import (CacheConfig, CacheEntry, LookupResult, ThresholdAdapter, TwoTierCache,
                    lookup)
from .embedding import Encoder, EncoderConfig
from .explainers import Explanation, MethodProfile, generate
from .selector import CostWeights, DeviceInfo, Location, Payload, Selection, select
from .verification import VerificationConfig, verify


def request_seed(request_id: str) -> int:
    """Stable 63-bit seed derived from a request id."""
    digest = hashlib.sha256(str(request_id).encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass
class Plan:
    """Outcome of planning a miss: the selection plus whether to try the global tier."""
    selection: Optional[Selection]
    consult_global: bool


class Orchestrator:
    def __init__(self, profiles: Dict[str, MethodProfile], cache_cfg: CacheConfig,
                 verification: VerificationConfig = VerificationConfig(),
                 encoder: Optional[Encoder] = None,
                 weights: CostWeights = CostWeights(), payload: Payload = Payload(),
                 global_policy: str = "cost_aware",
                 global_latency_ms: Sequence[float] = (50.0, 100.0),
                 adapt: bool = True):
        if not profiles:
            raise ValueError("orchestrator needs at least one method profile")
        self.profiles = dict(profiles)
        self.cache_cfg = cache_cfg
        self.verification = verification
        self.encoder = encoder or Encoder(EncoderConfig())
        self.weights = weights
        self.payload = payload
        self.global_policy = global_policy
        self.expected_global_ms = float(np.mean(global_latency_ms))
        self.adapter = ThresholdAdapter(cache_cfg) if adapt else None

    # -- cache path --------------------------------------------------------

    def embed(self, x) -> np.ndarray:
        return self.encoder(x)

    def make_verifier(self, seed: int, threshold: Optional[float] = None):
        """Verifier whose k-th call in this request uses the sub-seed ``[seed, k]``."""
        calls = [0]
        cfg = self.verification

        def verifier(entry: CacheEntry, x_q, model):
            k = calls[0]
            calls[0] += 1
            return verify(entry.explanation, x_q, model, cfg, seed=[seed, k],
                          threshold=threshold)
        return verifier

    def lookup(self, cache: TwoTierCache, x, e_q, prediction: int, model, rho_fid: float,
               seed: int, now: float, tiers: Iterable[str] = ("local", "global"),
               verify_stale: bool = True) -> LookupResult:
        verifier = self.make_verifier(seed) if verify_stale else None
        return lookup(x, prediction, model, rho_fid, cache, verifier, e_q=e_q, now=now,
                      tiers=tuple(tiers))

    def record(self, hit: bool, result: Optional[LookupResult] = None) -> None:
        """Feed one request outcome to the similarity-threshold adapter."""
        if self.adapter is not None:
            v = result.verifications if result else 0
            f = result.verification_failures if result else 0
            self.adapter.record(hit, v, f)

    # -- miss path ---------------------------------------------------------

    def methods_for(self, kind: str) -> List[MethodProfile]:
        return [p for p in self.profiles.values() if p.applicable(kind)]

    def plan(self, rho_fid: float, budget_ms: float, device: DeviceInfo,
             locations: Sequence[Location], model_kind: str,
             global_available: bool = False) -> Plan:
        sel = select(rho_fid, budget_ms, device, locations, self.methods_for(model_kind),
                     model_kind, self.weights, self.payload)
        consult = False
        if global_available and sel is not None:
            if self.global_policy == "always":
                consult = True
            elif self.global_policy == "cost_aware":
                # the global tier only pays off if it is expected to beat generation
                consult = sel.estimate.total_ms > self.expected_global_ms
        return Plan(sel, consult)

    def generate(self, method_id: str, model, x, seed: int,
                 label: Optional[int] = None) -> Explanation:
        return generate(method_id, model, x, seed=seed,
                        base_cost=self.profiles[method_id].base_cost, label=label)

    def store(self, cache: TwoTierCache, e_q, expl: Explanation, now: float) -> CacheEntry:
        entry = CacheEntry.from_explanation(e_q, expl, now)
        cache.insert(entry)
        return entry
