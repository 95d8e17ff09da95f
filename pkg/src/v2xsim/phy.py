"""SINR, achievable rate, and QoS checks for the shared uplink band.

Conventions: powers in watts, gains linear, rates in bit/s. Resource block
m < M is the dedicated uplink RB of I-VUE m; RBs m >= M are unused by
I-VUEs. A broadcast pair transmits on exactly one RB in one of two
transmission modes: direct (receiver decodes the transmitter) or relayed
(the base station decodes the uplink and forwards, which halves the
effective rate). All QoS thresholds are inclusive (>=).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization
from .config import PhyConfig, QosConfig, db_to_linear

MODE_DIRECT = 0   # transmitter -> receiver
MODE_RELAY = 1    # transmitter -> base station -> receiver


@dataclass
class AllocationSnapshot:
    """Joint allocation of one subframe.

    ``rb_alloc`` is the K x F 0/1 RB selection matrix (at most one RB per
    pair), ``mode`` the length-K mode flags (1 = relayed), ``pair_power_w``
    the pair transmit powers and ``ivue_power_w`` the I-VUE powers.
    """
    rb_alloc: np.ndarray
    mode: np.ndarray
    pair_power_w: np.ndarray
    ivue_power_w: np.ndarray

    def __post_init__(self):
        self.rb_alloc = np.asarray(self.rb_alloc, dtype=float)
        self.mode = np.asarray(self.mode, dtype=int)
        self.pair_power_w = np.asarray(self.pair_power_w, dtype=float)
        self.ivue_power_w = np.asarray(self.ivue_power_w, dtype=float)
        if np.any(self.rb_alloc.sum(axis=1) > 1):
            raise ValueError("each pair may occupy at most one RB")
        if np.any(self.pair_power_w < 0) or np.any(self.ivue_power_w < 0):
            raise ValueError("powers must be nonnegative")

    @property
    def num_pairs(self) -> int:
        return self.rb_alloc.shape[0]

    @property
    def num_rb(self) -> int:
        return self.rb_alloc.shape[1]


@dataclass
class QosSpec:
    """All quality-of-service constants in internal units."""
    ivue_min_rate_bps: float
    message_bits: float
    latency_budget_s: float
    outage_threshold_lin: float
    outage_probability: float
    rb_bandwidth_hz: float
    noise_w: float

    @classmethod
    def from_config(cls, qos: QosConfig, phy: PhyConfig) -> "QosSpec":
        return cls(
            ivue_min_rate_bps=qos.ivue_min_rate_bps_hz * phy.rb_bandwidth_hz,
            message_bits=qos.message_bytes * 8.0,
            latency_budget_s=qos.latency_budget_s,
            outage_threshold_lin=db_to_linear(qos.outage_threshold_db),
            outage_probability=qos.outage_probability,
            rb_bandwidth_hz=phy.rb_bandwidth_hz,
            noise_w=phy.noise_w,
        )


def ivue_sinr(m: int, alloc: AllocationSnapshot, chan: ChannelRealization,
              qos: QosSpec) -> float:
    """Uplink SINR of I-VUE m on its dedicated RB m.

    Every broadcast transmitter sharing RB m interferes at the base
    station, whichever mode it is in.
    """
    signal = alloc.ivue_power_w[m] * chan.ivue_bs[m, m]
    interference = float(
        np.dot(alloc.rb_alloc[:, m] * alloc.pair_power_w, chan.tx_bs[:, m]))
    return signal / (interference + qos.noise_w)


def ivue_rate(m: int, alloc: AllocationSnapshot, chan: ChannelRealization,
              qos: QosSpec) -> float:
    return qos.rb_bandwidth_hz * np.log2(1.0 + ivue_sinr(m, alloc, chan, qos))


def direct_mode_sinr(k: int, f: int, alloc: AllocationSnapshot,
                     chan: ChannelRealization, qos: QosSpec) -> float:
    """SINR at receiver k on RB f in direct mode.

    Interference: the I-VUE owning f (when f is a dedicated RB) plus every
    other pair transmitting on f regardless of its mode (co-channel energy
    is physical).
    """
    on_rb = alloc.rb_alloc[:, f] * alloc.pair_power_w
    signal = on_rb[k] * chan.own[k, f]
    interference = float(np.dot(on_rb, chan.cross[:, k, f])) - on_rb[k] * chan.cross[k, k, f]
    if f < chan.num_ivues:
        interference += alloc.ivue_power_w[f] * chan.ivue_rx[f, k, f]
    return signal / (interference + qos.noise_w)


def relay_mode_sinr(k: int, f: int, alloc: AllocationSnapshot,
                    chan: ChannelRealization, qos: QosSpec) -> float:
    """Uplink SINR of pair k at the base station on RB f in relayed mode.

    Only other pairs sharing f contribute interference; the forwarding hop
    is bounded by this uplink.
    """
    on_rb = alloc.rb_alloc[:, f] * alloc.pair_power_w
    signal = on_rb[k] * chan.tx_bs[k, f]
    interference = float(np.dot(on_rb, chan.tx_bs[:, f])) - signal
    return signal / (interference + qos.noise_w)


def pair_sinr(k: int, alloc: AllocationSnapshot, chan: ChannelRealization,
              qos: QosSpec) -> float:
    """Total SINR of pair k in its selected mode, summed over its RBs."""
    mode_fn = relay_mode_sinr if alloc.mode[k] == MODE_RELAY else direct_mode_sinr
    total = 0.0
    for f in np.flatnonzero(alloc.rb_alloc[k] > 0):
        total += mode_fn(k, int(f), alloc, chan, qos)
    return total


def v2v_pair_rate(k: int, alloc: AllocationSnapshot, chan: ChannelRealization,
                  qos: QosSpec) -> float:
    """Achievable rate of pair k; relayed mode pays the two-hop 1/2 factor."""
    w = qos.rb_bandwidth_hz
    relay = alloc.mode[k] == MODE_RELAY
    mode_fn = relay_mode_sinr if relay else direct_mode_sinr
    rate = 0.0
    for f in np.flatnonzero(alloc.rb_alloc[k] > 0):
        rate += w * np.log2(1.0 + mode_fn(k, int(f), alloc, chan, qos))
    return 0.5 * rate if relay else rate


def effective_outage_threshold(qos: QosSpec) -> float:
    """Mean-SINR floor that keeps Rayleigh outage below the allowed level.

    With unit-mean exponential fading, Pr{sinr <= threshold} <= p holds iff
    the mean SINR is at least threshold / ln(1/(1-p)).
    """
    return qos.outage_threshold_lin / np.log(1.0 / (1.0 - qos.outage_probability))


@dataclass
class LinkBudget:
    """Vectorized per-subframe rates and SINRs for every user at once."""
    ivue_sinr: np.ndarray      # (M,)
    ivue_rates_bps: np.ndarray  # (M,)
    pair_sinr: np.ndarray      # (K,) summed over the pair's RBs, own mode
    pair_rates_bps: np.ndarray  # (K,)
    bs_interference_w: np.ndarray  # (F,) broadcast power landing at the BS
    rx_interference_w: np.ndarray  # (K, F) interference at each receiver


def link_budget(alloc: AllocationSnapshot, chan: ChannelRealization,
                qos: QosSpec) -> LinkBudget:
    """Evaluate all SINRs/rates in one shot.

    Matches the scalar per-user operations exactly (cross-checked by the
    test suite); exists because the environment calls this every subframe.
    """
    noise = qos.noise_w
    w = qos.rb_bandwidth_hz
    M, K, F = chan.num_ivues, chan.num_pairs, chan.num_rb
    on_rb = alloc.rb_alloc * alloc.pair_power_w[:, None]          # (K, F)

    bs_interf = np.einsum("kf,kf->f", on_rb, chan.tx_bs)          # (F,)
    ivue_diag = chan.ivue_bs[np.arange(M), np.arange(M)]
    ivue_sinr_v = alloc.ivue_power_w * ivue_diag / (bs_interf[:M] + noise)
    ivue_rates = w * np.log2(1.0 + ivue_sinr_v)

    cross_total = np.einsum("jf,jkf->kf", on_rb, chan.cross)      # (K, F)
    own_cross = on_rb * np.einsum("kkf->kf", chan.cross)
    rx_interf = cross_total - own_cross
    if M > 0:
        # I-VUE m transmits on RB m only; pick those diagonal slices.
        ivue_at_rx = np.einsum("mkm->km", chan.ivue_rx[:, :, :M])  # (K, M)
        rx_interf[:, :M] += alloc.ivue_power_w[None, :] * ivue_at_rx

    direct_sinr = on_rb * chan.own / (rx_interf + noise)
    relay_sinr = on_rb * chan.tx_bs / (bs_interf[None, :] - on_rb * chan.tx_bs + noise)
    relay = alloc.mode[:, None] == MODE_RELAY
    sinr_mat = np.where(relay, relay_sinr, direct_sinr)
    pair_sinr_v = sinr_mat.sum(axis=1)
    factor = np.where(alloc.mode == MODE_RELAY, 0.5, 1.0)
    pair_rates = factor * w * np.log2(1.0 + sinr_mat).sum(axis=1)
    return LinkBudget(ivue_sinr_v, ivue_rates, pair_sinr_v, pair_rates,
                      bs_interf, rx_interf)


@dataclass
class QosStatus:
    ivue_ok: np.ndarray          # (M,) capacity requirement met
    latency_ok: np.ndarray       # (K,) instantaneous rate covers load/time
    reliability_ok: np.ndarray   # (K,) fading-averaged SINR above the floor
    mean_sinr: np.ndarray        # (K,) the fading-averaged SINR used above


def check_qos(alloc: AllocationSnapshot, chan: ChannelRealization,
              qos: QosSpec, load_bits: np.ndarray,
              time_left_s: np.ndarray,
              mean_chan: ChannelRealization | None = None) -> QosStatus:
    """Per-user QoS booleans for one subframe.

    Rates use the realized (faded) channel; reliability is judged on the
    fading-averaged SINR, the quantity receivers can actually track.
    """
    if mean_chan is None:
        mean_chan = chan.mean_view()
    floor = effective_outage_threshold(qos)
    faded = link_budget(alloc, chan, qos)
    mean = link_budget(alloc, mean_chan, qos)
    ivue_ok = faded.ivue_rates_bps >= qos.ivue_min_rate_bps
    needed = np.asarray(load_bits) / np.maximum(np.asarray(time_left_s), 1e-12)
    latency_ok = faded.pair_rates_bps >= needed
    reliability_ok = mean.pair_sinr >= floor
    return QosStatus(ivue_ok, latency_ok, reliability_ok, mean.pair_sinr)
