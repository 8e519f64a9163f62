"""Discrete-event simulation of the explanation service and its baselines."""

from .config import (Config, ConfigError, SystemConfig, WorkloadConfig, config_hash,
                     load_config)
from .engine import ABLATIONS, MODES, Simulator, drift_schedule, run_simulation
from .metrics import MetricsReport, RequestRecord, aggregate, summarize
from .profiles import DeviceProfile, ServerProfile, Station, network_jitter
from .sweep import EXPERIMENTS, sweep, to_csv
from .workload import ExplanationRequest, generate_workload, make_devices

__all__ = ["Config", "ConfigError", "SystemConfig", "WorkloadConfig", "config_hash",
           "load_config", "ABLATIONS", "MODES", "Simulator", "drift_schedule",
           "run_simulation", "MetricsReport", "RequestRecord", "aggregate", "summarize",
           "DeviceProfile", "ServerProfile", "Station", "network_jitter", "EXPERIMENTS",
           "sweep", "to_csv", "ExplanationRequest", "generate_workload", "make_devices"]
