"""Configuration objects for the network, the channel and the simulation.

Configs are plain dataclasses.  They can be built directly in Python, loaded
from a YAML file with nested sections, and patched with dotted-path overrides
(``sim.n_drops=5``).  Validation happens once, in :func:`validate`, and raises
:class:`ConfigError` with a message naming the offending field.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field

import numpy as np
import yaml


class ConfigError(ValueError):
    """Raised when a configuration is inconsistent or out of range."""


@dataclass
class NetworkConfig:
    """Cell layout, power budget and antenna geometry.

    Large-scale fading parameters live here as well since they are a property
    of the deployment, not of a single run.
    """

    n_cells: int = 3
    cluster_size: int = 3
    users_per_cell: int = 10
    inter_site_distance: float = 500.0
    layout_kind: str = "ring"          # ring | hex_grid | explicit_positions
    wraparound: bool = False
    delta_db: float = 10.0             # CoMP trigger threshold (dB)
    rank_bounds: tuple = (1, 4)        # (L_min, L_max), or list of pairs per cell
    n_tx: int = 4
    n_rx: int = 4
    tx_power: float = 1.0              # linear E_s per cell
    noise_power: float = 3.2e-11       # linear sigma^2 (gives ~15 dB SNR at 250 m)

    # large-scale model
    pathloss_exponent: float = 3.76
    shadowing_std_db: float = 8.0
    min_distance: float = 35.0

    # layout extras
    hex_rings: int = 2                 # hex_grid: 2 rings -> 19 sites
    sectors_per_site: int = 1          # hex_grid only
    sector_pattern: str = "omni"       # omni | parabolic
    sector_beamwidth_deg: float = 70.0
    sector_max_atten_db: float = 25.0
    cell_positions: list = None        # explicit_positions: list of [x, y]
    drop_radius: float = 0.0           # 0 -> inter_site_distance / sqrt(3)

    def rank_bounds_array(self):
        """Per-cell (L_min, L_max) as an (n_cells, 2) int array."""
        rb = self.rank_bounds
        if rb and isinstance(rb[0], (list, tuple)):
            arr = np.asarray(rb, dtype=int)
        else:
            arr = np.tile(np.asarray(rb, dtype=int), (self.n_cells, 1))
        return arr


@dataclass
class ErrorModelConfig:
    """Channel measurement error applied on the terminal side only."""

    mode: str = "ideal"                # ideal | additive
    # (wideband SINR dB, per-entry error variance) pairs, sorted by SINR
    mse_table: list = field(default_factory=lambda: [
        [-10.0, 0.2], [0.0, 0.05], [10.0, 0.01], [20.0, 0.003], [30.0, 0.001],
    ])


@dataclass
class CyclingConfig:
    """Master transmission-rank cycling."""

    mode: str = "dynamic"              # dynamic | static
    template: str = "A"                # A = [I1,I2,I1,I2,I3], B = [I1,I2,I1,I2,I1]
    static_sequence: list = field(default_factory=lambda: [1, 2, 1, 2, 3])
    priority_weighting: str = "count"  # count | qos (delta-CQI weighted)
    update_period: int = 15            # subframes between pattern re-derivations


@dataclass
class SimConfig:
    """Everything a single run needs, including the network."""

    network: NetworkConfig = field(default_factory=NetworkConfig)
    error_model: ErrorModelConfig = field(default_factory=ErrorModelConfig)
    cycling: CyclingConfig = field(default_factory=CyclingConfig)

    seed: int = 12345
    n_drops: int = 20
    n_subframes: int = 200
    n_subbands: int = 12
    subcarriers_per_subband: int = 1
    coherence_subcarriers: int = 1

    scheduler: str = "master_slave"    # baseline | master_slave | baseline_with_rr_feedback
    receiver: str = "mmse_irc_ideal"   # mmse_irc_ideal | mmse_irc_simplified

    feedback_period: int = 5           # subframes
    feedback_delay: int = 6            # subframes
    pmi_bits: int = 3                  # codebook entries per rank = 2**pmi_bits
    cqi_bits: int = 4                  # 0 -> unquantized
    cqi_range: tuple = (0.0, 30.0)
    delta_cqi_bits: int = 3
    delta_cqi_range: tuple = (0.0, 8.0)
    report_delta_cqi: bool = True
    per_cell_iri: bool = False         # report one I* per interfering cell
    sampling: str = "monte_carlo"      # exhaustive | monte_carlo
    mc_draws: int = 8

    pf_time_constant: float = 100.0
    pf_init: float = 0.01
    cqi_backoff_db: float = 1.0
    olla: bool = False
    olla_step_db: float = 0.5
    olla_bler_target: float = 0.1
    rate_cap_per_stream: float = 6.0

    backhaul_fast: int = 2             # master_state / rank_request latency (subframes)
    backhaul_slow: int = 10            # pattern_broadcast latency (subframes)

    doppler_hz: float = 5.55           # 3 km/h at 2 GHz
    subframe_duration: float = 1e-3
    corr_tx: float = 0.0               # exponential spatial correlation coefficients
    corr_rx: float = 0.0

    def warmup(self):
        return int(max(self.feedback_delay, self.pf_time_constant))

    @property
    def n_subcarriers(self):
        return self.n_subbands * self.subcarriers_per_subband


def validate(cfg: SimConfig):
    """Check invariants; raise ConfigError on the first violation."""
    net = cfg.network
    if net.n_cells < 1:
        raise ConfigError("network.n_cells must be >= 1")
    if net.users_per_cell < 1:
        raise ConfigError("network.users_per_cell must be >= 1")
    if net.cluster_size < 1 or net.n_cells % net.cluster_size != 0:
        raise ConfigError("network.cluster_size must evenly divide n_cells")
    if net.delta_db <= -np.inf or 10 ** (net.delta_db / 10.0) <= 0:
        raise ConfigError("network.delta_db must convert to a positive linear threshold")
    rb = net.rank_bounds_array()
    if rb.shape != (net.n_cells, 2):
        raise ConfigError("network.rank_bounds must be a pair or one pair per cell")
    if np.any(rb[:, 0] < 1) or np.any(rb[:, 1] > net.n_tx) or np.any(rb[:, 0] > rb[:, 1]):
        raise ConfigError("network.rank_bounds must satisfy 1 <= L_min <= L_max <= n_tx")
    if net.layout_kind not in ("ring", "hex_grid", "explicit_positions"):
        raise ConfigError(f"unknown layout_kind {net.layout_kind!r}")
    if net.layout_kind == "explicit_positions" and not net.cell_positions:
        raise ConfigError("explicit_positions layout needs network.cell_positions")
    if net.tx_power <= 0 or net.noise_power <= 0:
        raise ConfigError("tx_power and noise_power must be positive")
    if net.min_distance <= 0:
        raise ConfigError("network.min_distance must be positive")

    if cfg.n_subbands < 1:
        raise ConfigError("n_subbands must be >= 1")
    if cfg.subcarriers_per_subband < 1:
        raise ConfigError("subcarriers_per_subband must be >= 1")
    if cfg.coherence_subcarriers < 1:
        raise ConfigError("coherence_subcarriers must be >= 1")
    if cfg.subcarriers_per_subband % cfg.coherence_subcarriers != 0:
        raise ConfigError("coherence_subcarriers must divide subcarriers_per_subband")
    if cfg.scheduler not in ("baseline", "master_slave", "baseline_with_rr_feedback"):
        raise ConfigError(f"unknown scheduler {cfg.scheduler!r}")
    if cfg.receiver not in ("mmse_irc_ideal", "mmse_irc_simplified"):
        raise ConfigError(f"unknown receiver {cfg.receiver!r}")
    if cfg.n_subframes < cfg.feedback_delay + 1:
        raise ConfigError("n_subframes must exceed feedback_delay (no report ever in force)")
    if cfg.error_model.mode not in ("ideal", "additive"):
        raise ConfigError(f"unknown error_model.mode {cfg.error_model.mode!r}")
    tab = cfg.error_model.mse_table
    if cfg.error_model.mode == "additive":
        sinrs = [row[0] for row in tab]
        if any(row[1] < 0 for row in tab):
            raise ConfigError("error_model.mse_table variances must be >= 0")
        if sinrs != sorted(sinrs):
            raise ConfigError("error_model.mse_table must be sorted by SINR")
    if cfg.cycling.mode not in ("dynamic", "static"):
        raise ConfigError(f"unknown cycling.mode {cfg.cycling.mode!r}")
    if cfg.cycling.template not in ("A", "B"):
        raise ConfigError(f"unknown cycling.template {cfg.cycling.template!r}")
    if cfg.sampling not in ("exhaustive", "monte_carlo"):
        raise ConfigError(f"unknown sampling {cfg.sampling!r}")
    if cfg.mc_draws < 1:
        raise ConfigError("mc_draws must be >= 1")
    if not (0.0 <= abs(cfg.corr_tx) < 1.0 and 0.0 <= abs(cfg.corr_rx) < 1.0):
        raise ConfigError("corr_tx / corr_rx must lie in [0, 1)")
    return cfg


# ---------------------------------------------------------------------------
# YAML round trip and overrides
# ---------------------------------------------------------------------------

def _to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return list(obj)
    return obj


def _from_dict(cls, data):
    kwargs = {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r} for section {cls.__name__}")
        ftype = fields[key].type
        if key == "network":
            value = _from_dict(NetworkConfig, value)
        elif key == "error_model":
            value = _from_dict(ErrorModelConfig, value)
        elif key == "cycling":
            value = _from_dict(CyclingConfig, value)
        elif isinstance(getattr(cls(), key, None), tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def to_yaml(cfg: SimConfig) -> str:
    return yaml.safe_dump(_to_dict(cfg), sort_keys=False)


def load_config(path) -> SimConfig:
    """Load a SimConfig from a YAML file with nested sections."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    return _from_dict(SimConfig, data)


def apply_overrides(cfg: SimConfig, overrides) -> SimConfig:
    """Apply ``a.b.c=value`` strings; values are parsed as YAML scalars."""
    cfg = copy.deepcopy(cfg)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        path, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        parts = path.split(".")
        target = cfg
        for part in parts[:-1]:
            if not hasattr(target, part):
                raise ConfigError(f"unknown config section {part!r} in override {item!r}")
            target = getattr(target, part)
        leaf = parts[-1]
        if not hasattr(target, leaf):
            raise ConfigError(f"unknown config key {leaf!r} in override {item!r}")
        current = getattr(target, leaf)
        if isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        setattr(target, leaf, value)
    return cfg


def default_config() -> SimConfig:
    """The desk-scale default: one 3-cell ring cluster, 10 users per cell."""
    return SimConfig()
