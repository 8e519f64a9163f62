"""Deterministic discrete-event simulator of the explanation service.

Time is simulated milliseconds.  Arrivals, job dispatches at compute
stations, cache insertions and model updates are processed from one heap in
time order (ties by insertion sequence), so a run is a pure function of its
configuration and seed.

Request paths by mode:

* ``xaas``: home-edge local lookup (with verification of stale entries);
  on a miss, plan a method and location over device, every edge server and
  the cloud; consult the global tier first when it is expected to beat
  generation; generate, respond, and insert into both tiers.
* ``edgexai``: the top method at the home edge server, no cache.
* ``cloudxai``: the top method in the cloud, no cache.
* ``localgen``: on-device generation, method chosen by the selector with
  the device as the only location, no cache.

Ablations (xaas only): ``no_cache`` skips lookup and insertion,
``no_verify`` serves stale entries unverified, ``no_adaptive`` always runs
the top method at the home edge server.
"""

from __future__ import annotations

import bisect
import dataclasses
import heapq
import itertools
import json
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..cache import CacheConfig, CacheTier, TwoTierCache, invalidate_stale
from ..embedding import Encoder, EncoderConfig, distance
from ..explainers import DEFAULT_BASE_COST, MethodProfile, default_profiles
from ..models import random_model, update_model
from ..orchestrator import Orchestrator
from ..selector import (CLOUD, DEVICE, EDGE, CostWeights, DeviceInfo, Location, Payload,
                        Selection, estimate_cost, method_order, select)
from ..verification import VerificationConfig, true_fidelity
from .config import ConfigError, SystemConfig, WorkloadConfig, config_hash
from .metrics import MetricsReport, RequestRecord, aggregate, summarize
from .profiles import DeviceProfile, Station, jitter_factor
from .workload import ExplanationRequest, generate_workload, make_devices

MODES = ("xaas", "localgen", "cloudxai", "edgexai")
ABLATIONS = ("no_cache", "no_verify", "no_adaptive")

_ARRIVAL, _DISPATCH, _INSERT, _UPDATE = 0, 1, 2, 3


@dataclass(frozen=True)
class ModelUpdate:
    t_ms: float
    seed: int
    magnitude: float


def drift_schedule(duration_hours: float, period_hours: float = 6.0, magnitude: float = 0.3,
                   seed: int = 0) -> List[ModelUpdate]:
    """Model updates at every whole multiple of the period up to the horizon."""
    if period_hours <= 0 or magnitude < 0:
        raise ValueError("period must be > 0 and magnitude >= 0")
    n = int(math.floor(duration_hours / period_hours + 1e-9))
    return [ModelUpdate(k * period_hours * 3.6e6, int(seed) * 1000 + k, magnitude)
            for k in range(1, n + 1)]


def build_profiles(system: SystemConfig) -> Dict[str, MethodProfile]:
    priors = {m: s.fidelity_prior for m, s in system.methods.items()}
    costs = {m: s.base_cost for m, s in system.methods.items()}
    for m in DEFAULT_BASE_COST:
        priors.setdefault(m, 0.0)
    profiles = default_profiles(priors, costs)
    return {m: profiles[m] for m in system.enabled_methods}


@dataclass
class _Job:
    request: ExplanationRequest
    record: RequestRecord
    station: Station
    evals: int
    down_ms: float
    explanation: object
    e_q: Optional[np.ndarray]
    cache: Optional[TwoTierCache]


class Simulator:
    def __init__(self, system: SystemConfig, workload: WorkloadConfig, mode: str = "xaas",
                 ablations: Sequence[str] = (), seed: Optional[int] = None,
                 event_log: bool = False, check_invariants: bool = False,
                 edgexai_adaptive: bool = False):
        system.validate()
        workload.validate()
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}")
        ablations = tuple(sorted(set(a for a in ablations if a != "none")))
        for a in ablations:
            if a not in ABLATIONS:
                raise ConfigError(f"unknown ablation {a!r}")
        if ablations and mode != "xaas":
            raise ConfigError("ablations apply to xaas mode only")
        if system.model.kind == "tree" and workload.input_dim < 1:
            raise ConfigError("tree model needs input_dim >= 1")
        if seed is not None:
            workload = dataclasses.replace(workload, seed=int(seed))
        self.system = system
        self.workload = workload
        self.mode = mode
        self.ablations = ablations
        self.seed = workload.seed
        self.edgexai_adaptive = edgexai_adaptive
        self.check_invariants = check_invariants
        self.keep_log = event_log
        self.events: List[dict] = []
        self.config_hash = config_hash(system, workload, mode, list(ablations),
                                       edgexai_adaptive)

        spec = system.model
        d = workload.input_dim
        base = random_model(spec.kind, d, spec.num_classes, seed=spec.seed,
                            model_id=f"{workload.scenario}-model", hidden=spec.hidden,
                            scale=spec.scale, depth=spec.depth)
        self.updates = drift_schedule(workload.duration_hours, system.drift_period_hours,
                                      system.drift_magnitude, seed=spec.seed)
        self.models = [base]
        for up in self.updates:
            self.models.append(update_model(self.models[-1], up.seed, up.magnitude))
        self._update_times = [u.t_ms for u in self.updates]
        self.model = base

        self.profiles = build_profiles(system)
        if not any(p.applicable(base.kind) for p in self.profiles.values()):
            raise ConfigError(f"no enabled method applies to {base.kind} models")
        self.top_method = method_order(
            [p for p in self.profiles.values() if p.applicable(base.kind)])[0]
        self.weights = CostWeights(system.alpha, system.beta)
        self.payload = Payload()
        self.cache_cfg = CacheConfig(eps_sim=system.eps_sim, eps_band=tuple(system.eps_band),
                                     eps_step=system.eps_step, k_candidates=system.k_candidates,
                                     window=system.adapt_window, target_hit=system.target_hit,
                                     max_stale_accept=system.max_stale_accept)
        self.verification = VerificationConfig(system.verification_n,
                                               system.verification_threshold,
                                               system.perturbation_scale)
        self.encoder = Encoder(EncoderConfig(system.encoder_seed, d, system.embedding_dim))
        self.orch = Orchestrator(self.profiles, self.cache_cfg, self.verification, self.encoder,
                                 self.weights, self.payload, system.global_lookup,
                                 system.global_latency_ms, adapt=system.adapt_threshold)

        self.devices: List[DeviceProfile] = make_devices(system, workload)
        self._device_index = {dv.id: i for i, dv in enumerate(self.devices)}
        self._device_info = [DeviceInfo(dv.id, dv.bandwidth_kb_per_ms, d) for dv in self.devices]
        self._device_station: Dict[int, Station] = {}
        self.edges = [Station(f"edge-{j}", system.edge_capacity, system.edge_workers)
                      for j in range(system.edge_servers)]
        self.cloud = Station("cloud", system.cloud_capacity, system.cloud_workers)

        self.caching = mode == "xaas" and "no_cache" not in ablations
        self.caches: List[TwoTierCache] = []
        self.global_tier: Optional[CacheTier] = None
        if self.caching:
            self.global_tier = CacheTier("global", system.global_cache_capacity,
                                         system.embedding_dim, tuple(system.global_latency_ms))
            for j in range(system.edge_servers):
                local = CacheTier(f"local-{j}", system.local_cache_capacity,
                                  system.embedding_dim, tuple(system.local_latency_ms))
                self.caches.append(TwoTierCache(local, self.global_tier, self.cache_cfg))

        self.req_bytes = d * self.payload.bytes_per_feature + self.payload.request_overhead
        self.resp_bytes = 2 * d * self.payload.bytes_per_feature + self.payload.response_overhead
        self.records: List[RequestRecord] = []
        self.verifications = 0
        self.verification_failures = 0
        self.invariant_violations = 0

    # -- helpers -----------------------------------------------------------

    def _model_at(self, t: float):
        return self.models[bisect.bisect_right(self._update_times, t)]

    def _station_for_device(self, i: int) -> Station:
        st = self._device_station.get(i)
        if st is None:
            st = self._device_station[i] = Station(f"dev-{i}", self.devices[i].capacity, 1)
        return st

    def _locations(self, dev_i: int, now: float, kinds=(DEVICE, EDGE, CLOUD),
                   home_only: bool = False) -> List[Location]:
        s = self.system
        dev = self.devices[dev_i]
        locs = []
        if DEVICE in kinds:
            st = self._station_for_device(dev_i)
            locs.append(Location(DEVICE, "device", dev.capacity, st.queue_delay(now), 0.0))
        if EDGE in kinds:
            for j, st in enumerate(self.edges):
                if home_only and j != dev.home_edge_server:
                    continue
                rtt = s.rtt_device_edge_ms + (0.0 if j == dev.home_edge_server
                                              else s.rtt_edge_edge_ms)
                locs.append(Location(EDGE, f"edge-{j}", s.edge_capacity,
                                     st.queue_delay(now), rtt))
        if CLOUD in kinds:
            locs.append(Location(CLOUD, "cloud", s.cloud_capacity, self.cloud.queue_delay(now),
                                 s.rtt_device_edge_ms + s.rtt_edge_cloud_ms))
        return locs

    def _fixed(self, method: MethodProfile, loc: Location, dev_i: int, budget: float) -> Selection:
        est = estimate_cost(method, loc, self._device_info[dev_i], self.weights, self.payload)
        return Selection(method, loc, est, est.total_ms <= budget, 1)

    def _localgen_selection(self, req: ExplanationRequest, dev_i: int, now: float) -> Selection:
        # the same fidelity-first selector, restricted to the device itself
        locs = self._locations(dev_i, now, kinds=(DEVICE,))
        return self._plan(req, dev_i, locs, req.rho_lat).selection

    def _station(self, loc: Location, dev_i: int) -> Station:
        if loc.kind == DEVICE:
            return self._station_for_device(dev_i)
        if loc.kind == CLOUD:
            return self.cloud
        return self.edges[int(loc.id.split("-")[1])]

    # -- event handlers ----------------------------------------------------

    def _arrival(self, t: float, req: ExplanationRequest, heap, seq) -> None:
        s = self.system
        dev_i = self._device_index[req.device_id]
        dev = self.devices[dev_i]
        home = dev.home_edge_server
        rng = np.random.default_rng([self.seed, 0x5EED, req.index])
        u = rng.random(6)
        J = jitter_factor(u, s.jitter_frac)
        B = dev.bandwidth_kb_per_ms * 1000.0
        rtt_de_up = s.rtt_device_edge_ms * J[0] / 2
        rtt_de_down = s.rtt_device_edge_ms * J[1] / 2
        local_ms = s.local_latency_ms[0] + u[2] * (s.local_latency_ms[1] - s.local_latency_ms[0])
        global_ms = (s.global_latency_ms[0]
                     + u[3] * (s.global_latency_ms[1] - s.global_latency_ms[0]))
        rtt_far = J[4]
        gen_seed = int(np.random.SeedSequence([self.seed, 0x6E4, req.index]).generate_state(1)[0])
        model = self.model
        rec = RequestRecord(req.index, req.request_id, req.device_id, dev.tier, home,
                            req.issued_at, rho_fid=req.rho_fid, rho_lat=req.rho_lat,
                            model_version=model.version)
        self.records.append(rec)
        label = req.prediction

        if self.mode == "localgen":
            sel = self._localgen_selection(req, dev_i, t)
            if sel is None:
                if self.keep_log:
                    self._log_request(rec)
                return
            self._launch(t, t, req, rec, sel, dev_i, 0.0, gen_seed, label, None, None, heap, seq)
            return

        if self.mode == "cloudxai":
            up = (s.rtt_device_edge_ms * J[0] + s.rtt_edge_cloud_ms * rtt_far) / 2
            down = (s.rtt_device_edge_ms * J[1] + s.rtt_edge_cloud_ms * rtt_far) / 2
            loc = self._locations(dev_i, t, kinds=(CLOUD,))[0]
            sel = self._fixed(self.top_method, loc, dev_i, req.rho_lat)
            self._launch(t, t + up + self.req_bytes / B, req, rec, sel, dev_i,
                         down + self.resp_bytes / B, gen_seed, label, None, None, heap, seq)
            return

        elapsed = rtt_de_up + self.req_bytes / B
        down = rtt_de_down + self.resp_bytes / B
        if self.mode == "edgexai":
            locs = self._locations(dev_i, t, kinds=(EDGE,), home_only=True)
            if self.edgexai_adaptive:
                sel = self._plan(req, dev_i, locs, req.rho_lat - elapsed).selection
            else:
                sel = self._fixed(self.top_method, locs[0], dev_i, req.rho_lat - elapsed)
            self._dispatch_plan(t, elapsed, down, req, rec, sel, dev_i, J, gen_seed, label,
                                None, None, heap, seq)
            return

        # xaas
        cache = self.caches[home] if self.caching else None
        e_q = None
        result = None
        if cache is not None:
            e_q = self.encoder(req.x)
            elapsed += local_ms
            verify = "no_verify" not in self.ablations
            result = self.orch.lookup(cache, req.x, e_q, label, model, req.rho_fid,
                                      gen_seed, t, tiers=("local",), verify_stale=verify)
            elapsed += result.verification_evals / s.edge_capacity
            if result.hit:
                self._serve_hit(rec, req, result, "cache_local", elapsed + down, model, gen_seed,
                                e_q)
                self._tally(True, result)
                return
        budget = req.rho_lat - elapsed
        if "no_adaptive" in self.ablations:
            locs = self._locations(dev_i, t, kinds=(EDGE,), home_only=True)
            sel = self._fixed(self.top_method, locs[0], dev_i, budget)
            consult = cache is not None and self._wants_global(sel)
        else:
            plan = self._plan(req, dev_i, self._locations(dev_i, t), budget,
                              global_available=cache is not None)
            sel, consult = plan.selection, plan.consult_global
        if consult:
            elapsed += global_ms
            g = self.orch.lookup(cache, req.x, e_q, label, model, req.rho_fid, gen_seed + 1,
                                 t, tiers=("global",),
                                 verify_stale="no_verify" not in self.ablations)
            elapsed += g.verification_evals / s.edge_capacity
            result.verifications += g.verifications
            result.verification_failures += g.verification_failures
            result.verification_evals += g.verification_evals
            if g.hit:
                self._serve_hit(rec, req, g, "cache_global", elapsed + down, model, gen_seed,
                                e_q)
                self._tally(True, result)
                return
            if "no_adaptive" not in self.ablations:
                sel = self._plan(req, dev_i, self._locations(dev_i, t),
                                 req.rho_lat - elapsed).selection
        if cache is not None:
            self._tally(False, result)
        self._dispatch_plan(t, elapsed, down, req, rec, sel, dev_i, J, gen_seed, label,
                            e_q, cache, heap, seq)

    def _tally(self, hit: bool, result) -> None:
        self.verifications += result.verifications
        self.verification_failures += result.verification_failures
        self.orch.record(hit, result)

    def _wants_global(self, sel: Selection) -> bool:
        pol = self.system.global_lookup
        if pol == "always":
            return True
        if pol == "never":
            return False
        return sel.estimate.total_ms > self.orch.expected_global_ms

    def _plan(self, req, dev_i, locs, budget, global_available=False):
        return self.orch.plan(req.rho_fid, budget, self._device_info[dev_i], locs,
                              self.model.kind, global_available=global_available)

    def _serve_hit(self, rec: RequestRecord, req, result, source: str, latency: float,
                   model, seed: int, e_q) -> None:
        entry = result.entry
        rec.source = source
        rec.latency_ms = latency
        rec.method = entry.explanation.method_id
        rec.location = "cache"
        rec.verified = result.verified
        rec.feasible = True
        rec.fidelity = true_fidelity(entry.explanation, req.x, model, seed,
                                     n_probe=self.system.fidelity_probe,
                                     scale=self.system.perturbation_scale)
        if self.check_invariants:
            ok = (distance(e_q, entry.embedding) < self.cache_cfg.eps_sim + 1e-12
                  and entry.cached_prediction == req.prediction
                  and entry.fidelity >= req.rho_fid
                  and (entry.model_version == model.version or "no_verify" in self.ablations))
            if not ok:
                self.invariant_violations += 1
        if self.keep_log:
            self._log_request(rec)

    def _dispatch_plan(self, t, elapsed, down, req, rec, sel, dev_i, J, gen_seed, label,
                       e_q, cache, heap, seq) -> None:
        s = self.system
        if sel is None:
            if self.keep_log:
                self._log_request(rec)
            return
        loc = sel.location
        home = self.devices[dev_i].home_edge_server
        if loc.kind == DEVICE:
            arrive = t + elapsed + s.rtt_device_edge_ms * J[1] / 2
            back = 0.0
        elif loc.kind == CLOUD:
            hop = s.rtt_edge_cloud_ms * J[4] / 2
            arrive, back = t + elapsed + hop, hop + down
        elif loc.id != f"edge-{home}":
            hop = s.rtt_edge_edge_ms * J[4] / 2
            arrive, back = t + elapsed + hop, hop + down
        else:
            arrive, back = t + elapsed, down
        self._launch(t, arrive, req, rec, sel, dev_i, back, gen_seed, label, e_q, cache,
                     heap, seq)

    def _launch(self, t, arrive, req, rec, sel, dev_i, back, gen_seed, label, e_q, cache,
                heap, seq) -> None:
        # content is fixed at issue time against the model the device used
        expl = self.orch.generate(sel.method.method_id, self.model, req.x, gen_seed, label)
        rec.method = sel.method.method_id
        rec.location = sel.location.kind
        rec.feasible = sel.feasible
        rec.fidelity = expl.fidelity_estimate
        job = _Job(req, rec, self._station(sel.location, dev_i), sel.method.base_cost, back,
                   expl, e_q, cache)
        heapq.heappush(heap, (arrive, next(seq), _DISPATCH, job))

    def _dispatch(self, t: float, job: _Job, heap, seq) -> None:
        _, finish = job.station.submit(t, job.evals)
        rec = job.record
        rec.source = "generated"
        rec.latency_ms = finish + job.down_ms - job.request.issued_at
        if job.cache is not None:
            heapq.heappush(heap, (finish, next(seq), _INSERT, job))
        if self.keep_log:
            self._log_request(rec)

    def _log_request(self, rec: RequestRecord) -> None:
        self.events.append(dict(rec.to_dict(), event="request"))

    # -- main loop ---------------------------------------------------------

    def run(self) -> MetricsReport:
        seq = itertools.count()
        heap: List[Tuple[float, int, int, object]] = []
        for k, up in enumerate(self.updates):
            heapq.heappush(heap, (up.t_ms, next(seq), _UPDATE, k))
        stream = generate_workload(self.workload, self.system, self.devices, self._model_at,
                                   model_id=self.model.model_id)
        nxt = next(stream, None)
        while heap or nxt is not None:
            if nxt is not None and (not heap or nxt.issued_at <= heap[0][0]):
                req, nxt = nxt, next(stream, None)
                self._arrival(req.issued_at, req, heap, seq)
                continue
            t, _, kind, payload = heapq.heappop(heap)
            if kind == _DISPATCH:
                self._dispatch(t, payload, heap, seq)
            elif kind == _INSERT:
                self.orch.store(payload.cache, payload.e_q, payload.explanation, t)
            else:
                self.model = self.models[payload + 1]
                if self.caching and self.system.invalidation == "eager":
                    for c in self.caches:
                        invalidate_stale(c, self.model.model_id, self.model.version, "eager")
                if self.keep_log:
                    self.events.append({"event": "model_update", "t_ms": t,
                                        "version": self.model.version})
        wl = self.workload
        return summarize(self.records, mode=self.mode, ablations=self.ablations,
                         scenario=wl.scenario, seed=self.seed, config_hash=self.config_hash,
                         warmup_ms=wl.warmup_hours * 3.6e6,
                         duration_ms=wl.duration_hours * 3.6e6,
                         verifications=self.verifications,
                         verification_failures=self.verification_failures,
                         model_updates=len(self.updates),
                         eps_final=self.cache_cfg.eps_sim)

    def event_log_lines(self) -> List[str]:
        return [json.dumps(e, sort_keys=True) for e in self.events]


def run_simulation(system: SystemConfig, workload: WorkloadConfig, mode: str = "xaas",
                   ablations: Sequence[str] = (), seeds: Sequence[int] = (0,),
                   **kwargs) -> Tuple[List[MetricsReport], Dict[str, Dict[str, float]]]:
    """One report per seed plus the cross-seed mean and 95% confidence intervals."""
    if not seeds:
        raise ConfigError("at least one seed is required")
    reports = [Simulator(system, workload, mode, ablations, seed=s, **kwargs).run()
               for s in seeds]
    return reports, aggregate(reports)
