"""Desk-scale system-level simulator for rank-recommendation coordinated
scheduling in downlink multi-cell MIMO-OFDMA networks."""

from .config import (ConfigError, CyclingConfig, ErrorModelConfig,
                     NetworkConfig, SimConfig, default_config, load_config,
                     validate)
from .sim import MetricsSummary, compare, run

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "CyclingConfig", "ErrorModelConfig", "NetworkConfig",
    "SimConfig", "MetricsSummary", "default_config", "load_config",
    "validate", "compare", "run", "__version__",
]
