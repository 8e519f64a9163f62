"""Simulation configuration: system constants, workload presets, JSON loading.

Every default lives in ``xaas/data/default_config.json``; the dataclass
defaults below mirror it so programmatic construction and file loading agree.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Dict, Mapping, Optional, Tuple

SCENARIOS = ("mqc", "avf", "hcm")
TIERS = ("low", "mid", "high")
SECTIONS = ("system", "scenarios", "service", "sweeps", "calibration")


class ConfigError(ValueError):
    """Inconsistent or malformed configuration."""


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "mlp2"
    num_classes: int = 2
    hidden: int = 16
    scale: float = 1.5
    depth: int = 3
    seed: int = 0


@dataclass(frozen=True)
class MethodSpec:
    base_cost: int
    fidelity_prior: float


@dataclass(frozen=True)
class SystemConfig:
    edge_servers: int = 5
    edge_capacity: float = 15.0          # evals/ms per worker
    edge_workers: int = 6
    cloud_capacity: float = 40.0
    cloud_workers: int = 10
    rtt_device_edge_ms: float = 8.0
    rtt_edge_cloud_ms: float = 60.0
    rtt_edge_edge_ms: float = 4.0
    device_capacity: Mapping[str, float] = field(
        default_factory=lambda: {"low": 1.0, "mid": 20.0, "high": 50.0})
    device_bandwidth_kb_per_ms: Mapping[str, float] = field(
        default_factory=lambda: {"low": 0.25, "mid": 1.0, "high": 2.5})
    local_cache_capacity: int = 1000
    global_cache_capacity: int = 10000
    local_latency_ms: Tuple[float, float] = (5.0, 10.0)
    global_latency_ms: Tuple[float, float] = (50.0, 100.0)
    global_lookup: str = "cost_aware"    # cost_aware | always | never
    jitter_frac: float = 0.3
    embedding_dim: int = 32
    encoder_seed: int = 0
    eps_sim: float = 0.15
    eps_band: Tuple[float, float] = (0.12, 0.18)
    eps_step: float = 0.01
    adapt_threshold: bool = True
    k_candidates: int = 8
    adapt_window: int = 200
    target_hit: float = 0.70
    max_stale_accept: float = 0.05
    verification_n: int = 15
    verification_threshold: float = 0.90
    perturbation_scale: float = 0.1
    fidelity_probe: int = 32
    alpha: float = 1.0
    beta: float = 1.0
    methods: Mapping[str, MethodSpec] = field(default_factory=lambda: {
        "lime_local": MethodSpec(1000, 0.988),
        "kernel_shap": MethodSpec(500, 0.932),
        "grad_attr": MethodSpec(2, 0.986),
        "fast_saliency": MethodSpec(10, 0.913),
    })
    enabled_methods: Tuple[str, ...] = ("lime_local", "kernel_shap", "fast_saliency")
    model: ModelSpec = ModelSpec()
    drift_period_hours: float = 6.0
    drift_magnitude: float = 0.55
    invalidation: str = "lazy"

    def validate(self) -> None:
        if self.edge_servers < 1:
            raise ConfigError("edge_servers must be >= 1")
        for name in ("edge_capacity", "cloud_capacity"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.edge_workers < 1 or self.cloud_workers < 1:
            raise ConfigError("worker counts must be >= 1")
        for tier in TIERS:
            if self.device_capacity.get(tier, 0) <= 0:
                raise ConfigError(f"device capacity for tier {tier!r} must be > 0")
            if self.device_bandwidth_kb_per_ms.get(tier, 0) <= 0:
                raise ConfigError(f"device bandwidth for tier {tier!r} must be > 0")
        if self.local_cache_capacity < 1 or self.global_cache_capacity < 1:
            raise ConfigError("cache capacities must be >= 1")
        if self.global_lookup not in ("cost_aware", "always", "never"):
            raise ConfigError(f"unknown global_lookup policy {self.global_lookup!r}")
        if not 0.0 <= self.jitter_frac < 1.0:
            raise ConfigError("jitter_frac must be in [0, 1)")
        lo, hi = self.eps_band
        if not 0 < lo <= self.eps_sim <= hi:
            raise ConfigError("eps_sim must lie inside eps_band")
        if not self.enabled_methods:
            raise ConfigError("at least one explanation method must be enabled")
        for m in self.enabled_methods:
            if m not in self.methods:
                raise ConfigError(f"enabled method {m!r} has no profile")
        if self.drift_period_hours <= 0 or self.drift_magnitude < 0:
            raise ConfigError("drift period must be > 0 and magnitude >= 0")
        if self.invalidation not in ("lazy", "eager"):
            raise ConfigError(f"unknown invalidation mode {self.invalidation!r}")


@dataclass(frozen=True)
class WorkloadConfig:
    scenario: str = "mqc"
    num_devices: int = 150
    arrival_rate: float = 0.2            # requests/s over the whole fleet
    duration_hours: float = 24.0
    warmup_hours: float = 2.0
    cluster_count: int = 2000
    revisit_prob: float = 0.95
    zipf_s: float = 1.2
    cluster_spread: float = 0.015
    center_separation: float = 0.3
    input_dim: int = 16
    rho_fid: float = 0.92
    rho_lat: float = 110.0
    latency_spread: float = 0.3
    tier_mix: Tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    seed: int = 0

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.num_devices < 1:
            raise ConfigError("num_devices must be >= 1")
        if self.arrival_rate <= 0:
            raise ConfigError("arrival_rate must be > 0")
        if not self.duration_hours > self.warmup_hours >= 0:
            raise ConfigError("duration must exceed the warm-up period")
        if self.cluster_count < 1:
            raise ConfigError("cluster_count must be >= 1")
        for name in ("revisit_prob", "rho_fid"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        if not 0.0 <= self.latency_spread < 1.0:
            raise ConfigError("latency_spread must be in [0, 1)")
        if self.rho_lat <= 0 or self.zipf_s < 0 or self.cluster_spread < 0:
            raise ConfigError("rho_lat must be > 0; zipf_s and cluster_spread >= 0")
        mix = self.tier_mix
        if len(mix) != 3 or min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-6:
            raise ConfigError("tier_mix must be three non-negative weights summing to 1")
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")


def _build(cls, doc: Mapping[str, Any], where: str):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(doc) - set(names)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    kwargs = {}
    for key, value in doc.items():
        if cls is SystemConfig and key == "methods":
            value = {k: _build(MethodSpec, v, f"{where}.methods.{k}") for k, v in value.items()}
        elif cls is SystemConfig and key == "model":
            value = _build(ModelSpec, value, f"{where}.model")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def system_from_dict(doc: Mapping[str, Any]) -> SystemConfig:
    cfg = _build(SystemConfig, doc, "system")
    cfg.validate()
    return cfg


def workload_from_dict(doc: Mapping[str, Any]) -> WorkloadConfig:
    cfg = _build(WorkloadConfig, doc, "workload")
    cfg.validate()
    return cfg


def to_dict(cfg) -> Dict[str, Any]:
    """Plain JSON-ready dict of a config dataclass."""
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, Mapping):
            return {str(k): conv(x) for k, x in v.items()}
        if isinstance(v, (tuple, list)):
            return [conv(x) for x in v]
        return v
    return conv(cfg)


def config_hash(*parts) -> str:
    blob = json.dumps([to_dict(p) if dataclasses.is_dataclass(p) else p for p in parts],
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Config:
    system: SystemConfig
    scenarios: Mapping[str, Mapping[str, Any]]
    service: Mapping[str, Any] = field(default_factory=dict)
    sweeps: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    calibration: Mapping[str, Any] = field(default_factory=dict)

    def workload(self, scenario: str = "mqc", **overrides) -> WorkloadConfig:
        if scenario not in self.scenarios:
            raise ConfigError(f"unknown scenario {scenario!r}")
        doc = dict(self.scenarios[scenario])
        doc.update({k: v for k, v in overrides.items() if v is not None})
        doc.setdefault("scenario", scenario)
        return workload_from_dict(doc)


def default_config_text() -> str:
    return resources.files("xaas.data").joinpath("default_config.json").read_text()


def load_config(path: Optional[str] = None) -> Config:
    """Load a config file; missing sections fall back to the packaged defaults."""
    base = json.loads(default_config_text())
    for name in SECTIONS:
        base.setdefault(name, {})
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config root must be an object")
        unknown = set(user) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        base["system"].update(user.get("system", {}))
        for name, doc in user.get("scenarios", {}).items():
            base["scenarios"].setdefault(name, {}).update(doc)
        base["service"].update(user.get("service", {}))
        for name, doc in user.get("sweeps", {}).items():
            base["sweeps"].setdefault(name, {}).update(doc)
        base["calibration"].update(user.get("calibration", {}))
    system = system_from_dict(base["system"])
    for name, doc in base["scenarios"].items():
        workload_from_dict(dict(doc, scenario=doc.get("scenario", name)))
    return Config(system, base["scenarios"], base["service"], base["sweeps"],
                  base["calibration"])
