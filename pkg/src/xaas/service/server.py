"""The orchestrator behind a newline-delimited JSON TCP endpoint.

``ExplanationService`` is the synchronous, thread-safe core: model
registry, two-tier cache and the shared orchestrator path.  ``serve``
wraps it in an asyncio server that hands every request to a bounded
thread pool, so the event loop never waits on explanation generation.
"""

from __future__ import annotations

import asyncio
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

import numpy as np

from ..cache import CacheConfig, CacheTier, TwoTierCache
from ..embedding import Encoder, EncoderConfig
from ..explainers import FIDELITY_PROBES
from ..models import ModelHandle, model_from_dict, random_model, update_model
from ..orchestrator import Orchestrator, request_seed
from ..selector import EDGE, CostWeights, DeviceInfo, Location, Payload
from ..simulation.config import Config, SystemConfig
from ..simulation.engine import build_profiles
from ..verification import VerificationConfig, true_fidelity
from . import protocol
from .protocol import (BumpModel, ErrorResponse, ModelAck, ProtocolError, RegisterModel,
                       WireRequest, WireResponse)

log = logging.getLogger("xaas.service")


class ModelRegistry:
    """Model snapshots by id; reads are atomic, version swaps exclusive."""

    def __init__(self):
        self._lock = threading.Lock()
        self._models: Dict[str, ModelHandle] = {}

    def get(self, model_id: str) -> ModelHandle:
        with self._lock:
            model = self._models.get(model_id)
        if model is None:
            raise ProtocolError(f"model {model_id!r} is not registered", protocol.UNKNOWN_MODEL)
        return model

    def register(self, model: ModelHandle) -> ModelHandle:
        with self._lock:
            if model.model_id in self._models:
                raise ProtocolError(f"model {model.model_id!r} already registered",
                                    protocol.DUPLICATE_MODEL)
            self._models[model.model_id] = model
        return model

    def bump(self, model_id: str, magnitude: float, seed: int) -> ModelHandle:
        while True:
            current = self.get(model_id)
            # the drifted copy is built outside the lock, then swapped in if
            # nobody bumped in between
            new = update_model(current, seed, magnitude)
            with self._lock:
                if self._models[model_id] is current:
                    self._models[model_id] = new
                    return new

    def ids(self):
        with self._lock:
            return sorted(self._models)


def _cache_config(system: SystemConfig) -> CacheConfig:
    return CacheConfig(eps_sim=system.eps_sim, eps_band=tuple(system.eps_band),
                       eps_step=system.eps_step, k_candidates=system.k_candidates,
                       window=system.adapt_window, target_hit=system.target_hit,
                       max_stale_accept=system.max_stale_accept)


def default_models(system: SystemConfig, specs) -> list:
    """Seeded toy models named in the service config."""
    out = []
    for doc in specs:
        spec = system.model
        out.append(random_model(doc.get("kind", spec.kind), int(doc["input_dim"]),
                                int(doc.get("num_classes", spec.num_classes)),
                                seed=int(doc.get("seed", spec.seed)), model_id=doc["model_id"],
                                hidden=int(doc.get("hidden", spec.hidden)),
                                scale=float(doc.get("scale", spec.scale)),
                                depth=int(doc.get("depth", spec.depth))))
    return out


class ExplanationService:
    """Thread-safe request handling shared by the TCP server and tests.

    Only one location exists live: this process, described to the selector
    as an edge server whose queue delay is the outstanding work divided by
    the worker pool's throughput.
    """

    def __init__(self, system: SystemConfig = SystemConfig(),
                 service: Optional[Mapping[str, Any]] = None,
                 clock: Callable[[], float] = time.perf_counter):
        service = dict(service or {})
        self.system = system
        self.clock = clock
        self.workers = int(service.get("workers", 4))
        self.cache_cfg = _cache_config(system)
        self.orch = Orchestrator(
            build_profiles(system), self.cache_cfg,
            VerificationConfig(system.verification_n, system.verification_threshold,
                               system.perturbation_scale),
            weights=CostWeights(system.alpha, system.beta), payload=Payload(),
            global_policy=system.global_lookup, global_latency_ms=system.global_latency_ms,
            adapt=system.adapt_threshold)
        local_cap = int(service.get("local_cache_capacity", system.local_cache_capacity))
        global_cap = int(service.get("global_cache_capacity", system.global_cache_capacity))
        self.cache = TwoTierCache(
            CacheTier("local", local_cap, system.embedding_dim, tuple(system.local_latency_ms)),
            CacheTier("global", global_cap, system.embedding_dim,
                      tuple(system.global_latency_ms)),
            self.cache_cfg)
        self.registry = ModelRegistry()
        for m in default_models(system, service.get("models", [])):
            self.registry.register(m)
        self._encoders: Dict[int, Encoder] = {}
        # lookups mutate entries (verification refresh, LRU, promotion)
        self._cache_lock = threading.Lock()
        self._pending_lock = threading.Lock()
        self._pending_evals = 0.0

    # -- helpers -----------------------------------------------------------

    def encoder(self, input_dim: int) -> Encoder:
        with self._pending_lock:
            enc = self._encoders.get(input_dim)
            if enc is None:
                enc = self._encoders[input_dim] = Encoder(
                    EncoderConfig(self.system.encoder_seed, input_dim, self.system.embedding_dim))
            return enc

    def _location(self) -> Location:
        cap = self.system.edge_capacity
        with self._pending_lock:
            pending = self._pending_evals
        return Location(EDGE, "local", cap, pending / (cap * self.workers), 0.0)

    def _work(self, evals: float) -> None:
        with self._pending_lock:
            self._pending_evals = max(0.0, self._pending_evals + evals)

    # -- operations --------------------------------------------------------

    def handle(self, msg) -> protocol.Message:
        """Dispatch one decoded message; protocol failures become error responses."""
        try:
            if isinstance(msg, WireRequest):
                return self.explain(msg)
            if isinstance(msg, RegisterModel):
                return self.register_model(msg)
            if isinstance(msg, BumpModel):
                return self.bump_model(msg)
            raise ProtocolError(f"{type(msg).__name__} is not a request")
        except ProtocolError as exc:
            rid = exc.request_id or getattr(msg, "request_id", None)
            return ErrorResponse(rid, exc.code, str(exc))

    def register_model(self, msg: RegisterModel) -> ModelAck:
        try:
            model = model_from_dict(msg.model)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"invalid model definition: {exc}",
                                request_id=msg.request_id) from None
        self.registry.register(model)
        return ModelAck(msg.request_id, model.model_id, model.version)

    def bump_model(self, msg: BumpModel) -> ModelAck:
        model = self.registry.bump(msg.model_id, msg.magnitude, msg.seed)
        return ModelAck(msg.request_id, model.model_id, model.version)

    def explain(self, req: WireRequest) -> WireResponse:
        t0 = self.clock()
        model = self.registry.get(req.model_id)        # snapshot for the whole request
        x = np.asarray(req.features, dtype=np.float64)
        if x.shape[0] != model.input_dim:
            raise ProtocolError(f"expected {model.input_dim} features, got {x.shape[0]}",
                                request_id=req.request_id)
        n_out = 2 if model.num_classes == 2 else model.num_classes
        if req.prediction >= n_out:
            raise ProtocolError("prediction is not a class of this model",
                                request_id=req.request_id)
        seed = request_seed(req.request_id)
        e_q = self.encoder(model.input_dim)(x)
        now = time.time()
        with self._cache_lock:
            res = self.orch.lookup(self.cache, x, e_q, req.prediction, model,
                                   req.fid_threshold, seed, now, tiers=("local",))
        if res.hit:
            self.orch.record(True, res)
            return self._from_cache(req, res, model, seed, "cache_local", t0)
        device = DeviceInfo("client", self.system.device_bandwidth_kb_per_ms["high"],
                            model.input_dim)
        plan = self.orch.plan(req.fid_threshold, req.latency_budget_ms, device,
                              [self._location()], model.kind, global_available=True)
        if plan.consult_global:
            with self._cache_lock:
                g = self.orch.lookup(self.cache, x, e_q, req.prediction, model,
                                     req.fid_threshold, seed + 1, now, tiers=("global",))
            if g.hit:
                self.orch.record(True, g)
                return self._from_cache(req, g, model, seed, "cache_global", t0)
        self.orch.record(False, res)
        sel = plan.selection
        if sel is None:
            raise ProtocolError(f"no explanation method applies to {model.kind} models",
                                request_id=req.request_id)
        cost = sel.method.base_cost
        self._work(cost)
        try:
            expl = self.orch.generate(sel.method.method_id, model, x, seed, req.prediction)
        finally:
            self._work(-cost)
        with self._cache_lock:
            self.orch.store(self.cache, e_q, expl, time.time())
        latency = (self.clock() - t0) * 1000.0
        resp = WireResponse(req.request_id, tuple(float(v) for v in expl.attribution),
                            expl.method_id, "generated", False, float(expl.fidelity_estimate),
                            latency, model.version,
                            (not sel.feasible) or latency > req.latency_budget_ms)
        self._log(resp)
        return resp

    def _from_cache(self, req: WireRequest, res, model: ModelHandle, seed: int, source: str,
                    t0: float) -> WireResponse:
        expl = res.entry.explanation
        # fidelity of the served explanation around the query itself
        fid = true_fidelity(expl, np.asarray(req.features), model, seed,
                            n_probe=FIDELITY_PROBES, scale=self.system.perturbation_scale)
        latency = (self.clock() - t0) * 1000.0
        resp = WireResponse(req.request_id, tuple(float(v) for v in expl.attribution),
                            expl.method_id, source, bool(res.verified), fid, latency,
                            model.version, latency > req.latency_budget_ms)
        self._log(resp)
        return resp

    def _log(self, resp: WireResponse) -> None:
        if log.isEnabledFor(logging.INFO):
            log.info(json.dumps({"ts": time.time(), "request_id": resp.request_id,
                                 "source": resp.source, "method": resp.method,
                                 "latency_ms": resp.latency_ms}, sort_keys=True))

    def handle_line(self, line) -> str:
        try:
            msg = protocol.decode(line)
        except ProtocolError as exc:
            return protocol.encode(protocol.error_for(exc))
        try:
            out = self.handle(msg)
        except Exception as exc:        # never drop a connection over one request
            log.exception("request failed")
            out = ErrorResponse(getattr(msg, "request_id", None), protocol.INTERNAL, str(exc))
        return protocol.encode(out)


class Server:
    """Asyncio NDJSON front end; each line is answered independently."""

    def __init__(self, service: ExplanationService, workers: int = 4, max_pending: int = 256):
        self.service = service
        self.pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="xaas-gen")
        self.max_pending = max_pending
        self._pending = 0
        self._server: Optional[asyncio.AbstractServer] = None

    async def _answer(self, line: bytes, writer: asyncio.StreamWriter, wlock: asyncio.Lock):
        if self._pending >= self.max_pending:
            out = protocol.encode(ErrorResponse(None, protocol.OVERLOADED,
                                                "too many pending requests"))
        else:
            self._pending += 1
            try:
                loop = asyncio.get_running_loop()
                out = await loop.run_in_executor(self.pool, self.service.handle_line, line)
            finally:
                self._pending -= 1
        async with wlock:
            writer.write(out.encode() + b"\n")
            await writer.drain()

    async def _client(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        wlock = asyncio.Lock()
        tasks = set()
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                if not line.strip():
                    continue
                task = asyncio.create_task(self._answer(line, writer, wlock))
                tasks.add(task)
                task.add_done_callback(tasks.discard)
            if tasks:
                await asyncio.gather(*tasks, return_exceptions=True)
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            writer.close()

    async def start(self, host: str, port: int) -> Tuple[str, int]:
        self._server = await asyncio.start_server(self._client, host, port, limit=1 << 22)
        sock = self._server.sockets[0].getsockname()
        return sock[0], sock[1]

    async def serve_forever(self):
        async with self._server:
            await self._server.serve_forever()

    async def close(self):
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        self.pool.shutdown(wait=True)


def parse_listen(text: str) -> Tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"listen address must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def build_service(config: Config) -> Tuple[ExplanationService, Server]:
    svc = ExplanationService(config.system, config.service)
    server = Server(svc, int(config.service.get("workers", 4)),
                    int(config.service.get("max_pending", 256)))
    return svc, server


def serve(config: Config, listen: Optional[str] = None) -> None:
    host, port = parse_listen(listen or config.service.get("listen", "127.0.0.1:7878"))

    async def main():
        _, server = build_service(config)
        bound = await server.start(host, port)
        log.info(json.dumps({"ts": time.time(), "event": "listening",
                             "host": bound[0], "port": bound[1]}))
        try:
            await server.serve_forever()
        finally:
            await server.close()

    asyncio.run(main())
