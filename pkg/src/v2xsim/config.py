"""Experiment configuration: typed defaults, file round-trip, validation.

Config files are flat key-value text with dotted section prefixes, e.g.::

    scenario.num_pairs = 10
    drl.learning_rate = 0.001

Unknown keys raise ``ConfigError``. Floats are written with ``repr`` so a
write/read cycle is lossless.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from typing import Iterable, TextIO


class ConfigError(ValueError):
    """Invalid configuration key or value."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass
class ScenarioConfig:
    # Square crossroad region, base station at the center.
    region_m: float = 1000.0
    lanes_per_direction: int = 2
    lane_width_m: float = 4.0
    # 1-D Poisson intensity per lane, vehicles/m. The default gives an
    # expected 8 lanes * 1000 m * 0.025 = 200 vehicles, at least
    # 4*(M + 2K) for every supported K up to 20.
    vehicle_density: float = 0.025
    num_ivues: int = 5
    num_pairs: int = 10
    broadcast_range_m: float = 150.0
    vehicle_speed_kmh: float = 36.0
    subframe_s: float = 0.001


@dataclass
class PhyConfig:
    num_rb: int = 10
    rb_bandwidth_hz: float = 180e3
    carrier_hz: float = 2e9
    noise_dbm: float = -114.0
    max_tx_dbm: float = 23.0
    ivue_tx_dbm: float = 23.0
    num_power_levels: int = 4
    # Distance floor that keeps log-distance path loss finite.
    min_distance_m: float = 3.0
    shadow_std_los_db: float = 3.0
    shadow_std_nlos_db: float = 4.0
    # A base-station link is line-of-sight while the vehicle is within this
    # distance of the intersection center.
    bs_los_radius_m: float = 150.0

    @property
    def noise_w(self) -> float:
        return dbm_to_watts(self.noise_dbm)

    @property
    def max_tx_w(self) -> float:
        return dbm_to_watts(self.max_tx_dbm)

    @property
    def ivue_tx_w(self) -> float:
        return dbm_to_watts(self.ivue_tx_dbm)


@dataclass
class QosConfig:
    message_bytes: int = 800
    latency_budget_s: float = 0.010
    outage_threshold_db: float = 3.0
    outage_probability: float = 0.01
    ivue_min_rate_bps_hz: float = 3.0
    # A fresh message is generated once per period; by default the period
    # equals the latency budget (100 Hz safety traffic).
    message_period_s: float = 0.010


@dataclass
class DrlConfig:
    learning_rate: float = 0.001
    discount: float = 0.70
    eps_initial: float = 1.0
    eps_final: float = 0.01
    eps_decay_steps: int = 1000
    replay_capacity: int = 3000
    batch_size: int = 8
    train_every: int = 2
    target_sync_every: int = 30
    hidden_units: int = 256
    # Minimum stored transitions before training starts.
    replay_prefill: int = 64
    steps_per_epoch: int = 10
    reward_c1: float = 0.1
    reward_c2: float = 0.9
    reward_c3: float = 1.0
    reward_c4: float = 1.0
    reward_bonus: float = 1.0
    reward_ma_window: int = 100


@dataclass
class FederationConfig:
    num_clusters: int = 5
    averaging_period: int = 100
    clustering_period: int = 100
    upload_fraction: float = 1.0
    kmeans_restarts: int = 20
    checkpoint_rounds: bool = False


ALGORITHMS = ("random", "drl", "drl-no-mode", "centralized", "fed-drl")


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    phy: PhyConfig = field(default_factory=PhyConfig)
    qos: QosConfig = field(default_factory=QosConfig)
    drl: DrlConfig = field(default_factory=DrlConfig)
    federation: FederationConfig = field(default_factory=FederationConfig)
    algorithm: str = "drl"
    epochs: int = 3000
    seed: int = 1

    def validate(self) -> None:
        s, p, q = self.scenario, self.phy, self.qos
        checks = [
            (self.algorithm in ALGORITHMS,
             f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (s.vehicle_density > 0, "scenario.vehicle_density must be > 0"),
            (s.num_ivues >= 1, "scenario.num_ivues must be >= 1"),
            (s.num_pairs >= 1, "scenario.num_pairs must be >= 1"),
            (s.subframe_s > 0, "scenario.subframe_s must be > 0"),
            (p.num_rb >= s.num_ivues,
             "phy.num_rb must be >= scenario.num_ivues (one dedicated RB each)"),
            (p.num_power_levels >= 2, "phy.num_power_levels must be >= 2"),
            (0.0 < q.outage_probability < 1.0,
             "qos.outage_probability must lie in (0, 1)"),
            (q.latency_budget_s > 0, "qos.latency_budget_s must be > 0"),
            (q.message_period_s >= q.latency_budget_s,
             "qos.message_period_s must be >= qos.latency_budget_s"),
            (self.drl.batch_size >= 1, "drl.batch_size must be >= 1"),
            (self.federation.num_clusters >= 1,
             "federation.num_clusters must be >= 1"),
            (0.0 < self.federation.upload_fraction <= 1.0,
             "federation.upload_fraction must lie in (0, 1]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)


_SECTIONS = ("scenario", "phy", "qos", "drl", "federation")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(text: str, target_type):
    text = text.strip()
    if target_type is bool:
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    try:
        return target_type(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {text!r} as {target_type.__name__}") from exc


def config_to_lines(cfg: ExperimentConfig) -> list[str]:
    lines = []
    for name in ("algorithm", "epochs", "seed"):
        lines.append(f"{name} = {_format_value(getattr(cfg, name))}")
    for section in _SECTIONS:
        sub = getattr(cfg, section)
        for f in fields(sub):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(sub, f.name))}")
    return lines


def save_config(cfg: ExperimentConfig, stream: TextIO) -> None:
    for line in config_to_lines(cfg):
        stream.write(line + "\n")


def apply_config_line(cfg: ExperimentConfig, line: str) -> None:
    """Apply one `key = value` line in place; blank/comment lines are skipped."""
    stripped = line.strip()
    if not stripped or stripped.startswith("#"):
        return
    if "=" not in stripped:
        raise ConfigError(f"malformed config line (missing '='): {line!r}")
    key, _, raw = stripped.partition("=")
    key = key.strip()
    if "." in key:
        section, _, attr = key.partition(".")
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r} in key {key!r}")
        sub = getattr(cfg, section)
        valid = {f.name: f.type for f in fields(sub)}
        if attr not in valid:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(sub, attr)
        setattr(sub, attr, _parse_value(raw, type(current)))
    else:
        if key not in ("algorithm", "epochs", "seed"):
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        setattr(cfg, key, _parse_value(raw, type(current)))


def load_config(lines: Iterable[str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = dataclasses.replace(base) if base is not None else ExperimentConfig()
    # replace() is shallow for nested dataclasses; rebuild them so the base
    # object is never mutated by later overrides.
    if base is not None:
        for section in _SECTIONS:
            setattr(cfg, section, dataclasses.replace(getattr(base, section)))
    for line in lines:
        apply_config_line(cfg, line)
    return cfg


def load_config_file(path: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return load_config(fh, base)
