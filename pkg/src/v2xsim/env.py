"""The decision-process environment: observations, actions, reward, stepping.

Each broadcast pair is an agent. Per subframe the environment builds the
joint allocation from the agents' actions, realizes the channel, computes
rates and QoS, pays out one shared global reward, advances traffic and
mobility, and records the interference measurements that become the next
subframe's observations.

Observation layout (length 3F + 4): interference power per RB at the own
receiver, interference per RB at the base station, neighbor selection
counts per RB (all from the previous subframe), then own-link gain,
transmitter-to-BS gain, remaining load and remaining time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import phy, scenario
from .channel import (ChannelRealization, LargeScaleTable, large_scale_gains,
                      realize_channels)
from .config import ExperimentConfig
from .phy import MODE_DIRECT, MODE_RELAY, AllocationSnapshot, QosSpec
from .scenario import VehicleTopology


class ActionError(ValueError):
    """Malformed agent action (out-of-range index or field)."""


@dataclass(frozen=True)
class AgentAction:
    rb: int
    mode: int           # MODE_DIRECT or MODE_RELAY
    power_level: int    # 0 .. num_power_levels-1; power = level/(N-1) * P_max


def encode_action(action: AgentAction, num_rb: int, num_power_levels: int) -> int:
    if not (0 <= action.rb < num_rb):
        raise ActionError(f"rb {action.rb} outside [0, {num_rb})")
    if action.mode not in (MODE_DIRECT, MODE_RELAY):
        raise ActionError(f"mode {action.mode} must be 0 or 1")
    if not (0 <= action.power_level < num_power_levels):
        raise ActionError(
            f"power level {action.power_level} outside [0, {num_power_levels})")
    return (action.rb * 2 + action.mode) * num_power_levels + action.power_level


def decode_action(index: int, num_rb: int, num_power_levels: int) -> AgentAction:
    size = 2 * num_rb * num_power_levels
    if not (0 <= index < size):
        raise ActionError(f"action index {index} outside [0, {size})")
    power_level = index % num_power_levels
    rest = index // num_power_levels
    mode = rest % 2
    rb = rest // 2
    return AgentAction(rb, mode, power_level)


def action_space_size(num_rb: int, num_power_levels: int) -> int:
    return 2 * num_rb * num_power_levels


def rb_action_mask(allowed_rbs, num_rb: int, num_power_levels: int) -> np.ndarray:
    """Boolean mask over the flat action space allowing only the given RBs."""
    mask = np.zeros(action_space_size(num_rb, num_power_levels), dtype=bool)
    for f in allowed_rbs:
        base = f * 2 * num_power_levels
        mask[base:base + 2 * num_power_levels] = True
    return mask


def _normalized_features(rx_interf, bs_interf, counts, own_gain, bs_gain,
                         load_bits, time_left_s, num_pairs, message_bits,
                         latency_budget_s) -> np.ndarray:
    """Network-input scaling: powers to a roughly [-1, 1] dBm scale, gains
    likewise in dB, counts and traffic as fractions of their natural maxima."""
    F = rx_interf.shape[0]
    out = np.empty(3 * F + 4)
    powers = np.concatenate([rx_interf, bs_interf])
    np.maximum(powers, 1e-18, out=powers)
    np.log10(powers, out=powers)
    out[:2 * F] = (10.0 * powers + 30.0 + 100.0) / 50.0
    out[2 * F:3 * F] = counts / max(num_pairs, 1)
    out[3 * F] = (10.0 * np.log10(max(own_gain, 1e-18)) + 90.0) / 40.0
    out[3 * F + 1] = (10.0 * np.log10(max(bs_gain, 1e-18)) + 90.0) / 40.0
    out[3 * F + 2] = load_bits / message_bits
    out[3 * F + 3] = time_left_s / latency_budget_s
    return out


@dataclass
class AgentObservation:
    """Raw (physical-unit) observation; ``vector()`` normalizes for the net."""
    rx_interference_w: np.ndarray   # (F,)
    bs_interference_w: np.ndarray   # (F,)
    neighbor_counts: np.ndarray     # (F,)
    own_gain: float                 # large-scale, linear
    bs_gain: float                  # large-scale, linear
    load_bits: float
    time_left_s: float

    def vector(self, num_pairs: int, message_bits: float,
               latency_budget_s: float) -> np.ndarray:
        return _normalized_features(
            self.rx_interference_w, self.bs_interference_w,
            self.neighbor_counts, self.own_gain, self.bs_gain,
            self.load_bits, self.time_left_s,
            num_pairs, message_bits, latency_budget_s)


def observation_dim(num_rb: int) -> int:
    return 3 * num_rb + 4


def revenue(x: float, bonus: float) -> float:
    """Constraint shaping: a flat bonus when satisfied, the gap when not."""
    return bonus if x >= 0 else x


def compute_reward(ivue_rates_bps: np.ndarray, pair_rates_bps: np.ndarray,
                   pair_mean_sinr: np.ndarray, load_bits: np.ndarray,
                   time_left_s: np.ndarray, qos: QosSpec,
                   weights: tuple[float, float, float, float],
                   bonus: float) -> float:
    """Shared global reward; rates enter normalized by the RB bandwidth."""
    c1, c2, c3, c4 = weights
    w = qos.rb_bandwidth_hz
    floor = phy.effective_outage_threshold(qos)
    r = 0.0
    for rate in ivue_rates_bps:
        se = rate / w
        r += c1 * se + c2 * revenue(se - qos.ivue_min_rate_bps / w, bonus)
    for k in range(len(pair_rates_bps)):
        needed = load_bits[k] / max(time_left_s[k], 1e-12)
        r += c3 * revenue(pair_mean_sinr[k] - floor, bonus)
        r += c4 * revenue((pair_rates_bps[k] - needed) / w, bonus)
    return r


@dataclass
class SubframeRecord:
    """Everything the metrics layer needs from one subframe."""
    subframe: int
    reward: float
    sum_ivue_rate_bps: float
    ivue_rates_bps: np.ndarray
    pair_rates_bps: np.ndarray
    pair_mean_sinr: np.ndarray
    latency_ok: np.ndarray
    reliability_ok: np.ndarray
    # (pair index, delivered-in-time flag) for messages whose deadline
    # expired during this subframe.
    message_outcomes: list[tuple[int, bool]] = field(default_factory=list)


@dataclass
class StepResult:
    reward: float
    observations: list[AgentObservation]
    record: SubframeRecord


class V2XEnv:
    """Single-owner subframe state machine for one experiment."""

    def __init__(self, cfg: ExperimentConfig, topology: VehicleTopology,
                 shadow_rng: np.random.Generator, fading_rng: np.random.Generator):
        self.cfg = cfg
        self.topology = topology
        self.qos = QosSpec.from_config(cfg.qos, cfg.phy)
        self.shadow_rng = shadow_rng
        self.fading_rng = fading_rng
        self.subframe = 0
        self.large_scale: LargeScaleTable = large_scale_gains(
            topology, cfg.phy, shadow_rng)
        self._mean_chan: ChannelRealization | None = None
        K, F = topology.num_pairs, cfg.phy.num_rb
        self._prev_rx_interf = np.zeros((K, F))
        self._prev_bs_interf = np.zeros(F)
        self._prev_rb_choice = np.full(K, -1, dtype=int)
        self.load_bits = np.full(K, self.qos.message_bits)
        self.time_left_s = np.full(K, self.qos.latency_budget_s)
        self._period_elapsed = np.zeros(K)
        self._outcome_recorded = np.zeros(K, dtype=bool)
        self.last_channel: ChannelRealization | None = None
        self._neighbor_mask = self._compute_neighbor_mask()

    # -- topology bookkeeping ---------------------------------------------

    @property
    def num_pairs(self) -> int:
        return self.topology.num_pairs

    @property
    def num_ivues(self) -> int:
        return self.topology.num_ivues

    @property
    def num_rb(self) -> int:
        return self.cfg.phy.num_rb

    def power_levels_w(self) -> np.ndarray:
        n = self.cfg.phy.num_power_levels
        return np.arange(n) / (n - 1) * self.cfg.phy.max_tx_w

    def redraw_large_scale(self) -> None:
        """Large-timescale refresh from current positions."""
        self.large_scale = large_scale_gains(
            self.topology, self.cfg.phy, self.shadow_rng)
        self._mean_chan = None

    def mean_channel(self) -> ChannelRealization:
        """Fading-free channel for the current large-scale table (cached)."""
        if self._mean_chan is None:
            from .channel import _expand
            self._mean_chan = _expand(self.large_scale, self.num_rb)
        return self._mean_chan

    def add_pair(self, rng: np.random.Generator) -> int:
        """Activate one extra pair; returns its index. Gains are refreshed
        so the newcomer is immediately part of the channel state."""
        self.topology, k = scenario.activate_pair(
            self.topology, self.cfg.scenario, rng)
        F = self.num_rb
        self._prev_rx_interf = np.vstack([self._prev_rx_interf, np.zeros(F)])
        self._prev_rb_choice = np.append(self._prev_rb_choice, -1)
        self.load_bits = np.append(self.load_bits, self.qos.message_bits)
        self.time_left_s = np.append(self.time_left_s, self.qos.latency_budget_s)
        self._period_elapsed = np.append(self._period_elapsed, 0.0)
        self._outcome_recorded = np.append(self._outcome_recorded, False)
        self.redraw_large_scale()
        self._neighbor_mask = self._compute_neighbor_mask()
        return k

    # -- observation --------------------------------------------------------

    def observe(self, k: int) -> AgentObservation:
        counts = self._neighbor_counts(k)
        return AgentObservation(
            rx_interference_w=self._prev_rx_interf[k].copy(),
            bs_interference_w=self._prev_bs_interf.copy(),
            neighbor_counts=counts,
            own_gain=float(self.large_scale.own[k]),
            bs_gain=float(self.large_scale.tx_bs[k]),
            load_bits=float(self.load_bits[k]),
            time_left_s=float(self.time_left_s[k]),
        )

    def observe_vector(self, k: int) -> np.ndarray:
        """Normalized observation without the dataclass detour (hot path)."""
        return _normalized_features(
            self._prev_rx_interf[k], self._prev_bs_interf,
            self._neighbor_counts(k),
            float(self.large_scale.own[k]), float(self.large_scale.tx_bs[k]),
            float(self.load_bits[k]), float(self.time_left_s[k]),
            self.num_pairs, self.qos.message_bits, self.qos.latency_budget_s)

    def _compute_neighbor_mask(self) -> np.ndarray:
        tx = self.topology.pair_tx_ids()
        x, y = self.topology.x[tx], self.topology.y[tx]
        d = np.hypot(x[:, None] - x[None, :], y[:, None] - y[None, :])
        mask = d <= self.cfg.scenario.broadcast_range_m
        np.fill_diagonal(mask, False)
        return mask

    def _neighbor_counts(self, k: int) -> np.ndarray:
        chosen = self._prev_rb_choice[self._neighbor_mask[k]]
        chosen = chosen[chosen >= 0]
        return np.bincount(chosen, minlength=self.num_rb).astype(float)

    # -- stepping ------------------------------------------------------------

    def build_allocation(self, actions: list[AgentAction]) -> AllocationSnapshot:
        K, F = self.num_pairs, self.num_rb
        if len(actions) != K:
            raise ActionError(f"expected {K} actions, got {len(actions)}")
        levels = self.power_levels_w()
        a = np.zeros((K, F))
        s = np.zeros(K, dtype=int)
        p = np.zeros(K)
        for k, act in enumerate(actions):
            # encode_action performs full field validation.
            encode_action(act, F, self.cfg.phy.num_power_levels)
            a[k, act.rb] = 1.0
            s[k] = act.mode
            p[k] = levels[act.power_level]
        p_i = np.full(self.num_ivues, self.cfg.phy.ivue_tx_w)
        return AllocationSnapshot(a, s, p, p_i)

    def step(self, actions: list[AgentAction],
             want_observations: bool = True) -> StepResult:
        alloc = self.build_allocation(actions)
        chan = realize_channels(self.topology, self.cfg.phy, self.fading_rng,
                                large_scale=self.large_scale)
        self.last_channel = chan
        qos = self.qos
        K = self.num_pairs

        faded = phy.link_budget(alloc, chan, qos)
        mean = phy.link_budget(alloc, self.mean_channel(), qos)
        floor = phy.effective_outage_threshold(qos)
        needed = self.load_bits / np.maximum(self.time_left_s, 1e-12)

        reward = compute_reward(
            faded.ivue_rates_bps, faded.pair_rates_bps, mean.pair_sinr,
            self.load_bits, self.time_left_s, qos,
            (self.cfg.drl.reward_c1, self.cfg.drl.reward_c2,
             self.cfg.drl.reward_c3, self.cfg.drl.reward_c4),
            self.cfg.drl.reward_bonus)

        record = SubframeRecord(
            subframe=self.subframe,
            reward=reward,
            sum_ivue_rate_bps=float(faded.ivue_rates_bps.sum()),
            ivue_rates_bps=faded.ivue_rates_bps,
            pair_rates_bps=faded.pair_rates_bps,
            pair_mean_sinr=mean.pair_sinr,
            latency_ok=faded.pair_rates_bps >= needed,
            reliability_ok=mean.pair_sinr >= floor,
        )

        self._advance_traffic(faded.pair_rates_bps, record)
        self._prev_rx_interf = faded.rx_interference_w
        self._prev_bs_interf = faded.bs_interference_w
        self._prev_rb_choice = np.array([act.rb for act in actions], dtype=int)
        self.topology = scenario.advance_mobility(
            self.topology, self.cfg.scenario.subframe_s)
        self._neighbor_mask = self._compute_neighbor_mask()
        self.subframe += 1
        observations = ([self.observe(k) for k in range(K)]
                        if want_observations else [])
        return StepResult(reward, observations, record)

    def _advance_traffic(self, pair_rates: np.ndarray, record: SubframeRecord) -> None:
        dt = self.cfg.scenario.subframe_s
        period = self.cfg.qos.message_period_s
        self.load_bits = np.maximum(self.load_bits - pair_rates * dt, 0.0)
        self.time_left_s = np.maximum(self.time_left_s - dt, 0.0)
        self._period_elapsed += dt
        for k in range(self.num_pairs):
            if not self._outcome_recorded[k] and self.time_left_s[k] <= 1e-12:
                # The deadline just expired; judge the message exactly once.
                record.message_outcomes.append((k, bool(self.load_bits[k] <= 0.0)))
                self._outcome_recorded[k] = True
                self.load_bits[k] = 0.0  # expired messages are dropped
            if self._period_elapsed[k] >= period - 1e-12:
                self.load_bits[k] = self.qos.message_bits
                self.time_left_s[k] = self.qos.latency_budget_s
                self._period_elapsed[k] = 0.0
                self._outcome_recorded[k] = False

SILENT_ACTION = AgentAction(rb=0, mode=MODE_DIRECT, power_level=0)
