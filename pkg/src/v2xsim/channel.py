"""Link-level channel model: LOS state, path loss, shadowing, fast fading.

Large-scale gain (path loss plus log-normal shadowing) is drawn once per
large-timescale period and held; fast fading is an i.i.d. unit-mean
exponential power coefficient per link per resource block per subframe
(Rayleigh amplitude). Vehicles on the same street see each other in LOS;
cross-street links are NLOS. A base-station link is LOS while the vehicle
is within ``bs_los_radius_m`` of the intersection center.

Path loss (dB) at distance d meters, clamped below at ``min_distance_m``:

    vehicle-vehicle  LOS  44.23 + 16.7 log10(d)   NLOS 42.52 + 30.0 log10(d)
    vehicle-BS       LOS  38.40 + 21.0 log10(d)   NLOS 38.40 + 31.9 log10(d)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PhyConfig
from .scenario import Vehicle, VehicleTopology


@dataclass
class LinkGain:
    """Gain of a single link: large-scale part plus per-RB fading powers."""
    large_scale_db: float          # positive loss; linear gain is 10**(-x/10)
    fast_fade: np.ndarray          # unit-mean exponential, one entry per RB
    los: bool

    def linear(self) -> np.ndarray:
        return 10.0 ** (-self.large_scale_db / 10.0) * self.fast_fade


def los_state(a: Vehicle, b: Vehicle) -> bool:
    """Same-street endpoints are line-of-sight; a vehicle sees itself."""
    if a.id == b.id:
        return True
    return a.street == b.street


def bs_los_state(v: Vehicle, bs_xy: tuple[float, float], radius_m: float) -> bool:
    return float(np.hypot(v.x - bs_xy[0], v.y - bs_xy[1])) <= radius_m


def path_loss_v2v_db(d: float, los: bool, d_min: float = 3.0) -> float:
    d = max(d, d_min)
    if los:
        return 44.23 + 16.7 * np.log10(d)
    return 42.52 + 30.0 * np.log10(d)


def path_loss_v2i_db(d: float, los: bool, d_min: float = 3.0) -> float:
    d = max(d, d_min)
    if los:
        return 38.40 + 21.0 * np.log10(d)
    return 38.40 + 31.9 * np.log10(d)


def _shadowed_linear(pl_db, los_mask, cfg: PhyConfig, rng: np.random.Generator):
    """Linear large-scale gain: path loss plus LOS/NLOS log-normal shadowing."""
    pl_db = np.asarray(pl_db, dtype=float)
    std = np.where(los_mask, cfg.shadow_std_los_db, cfg.shadow_std_nlos_db)
    shadow = rng.normal(0.0, 1.0, size=pl_db.shape) * std
    return 10.0 ** (-(pl_db + shadow) / 10.0)


@dataclass
class LargeScaleTable:
    """Large-scale linear gains for one period, for every link the model uses.

    V2V pair k is represented by transmitter tx_k and receiver rx_k; the
    uplink gain of tx_k doubles as its interference gain at the base station
    (same physical link). ``vertex_gain`` holds directed gains between
    clustering vertices (pairs at their transmitter, then I-VUEs).
    """
    own: np.ndarray          # (K,)   tx_k -> rx_k
    tx_bs: np.ndarray        # (K,)   tx_k -> BS
    ivue_bs: np.ndarray      # (M,)   I-VUE m -> BS
    ivue_rx: np.ndarray      # (M,K)  I-VUE m -> rx_k
    cross: np.ndarray        # (K,K)  tx_j -> rx_k, [j, k]
    vertex_gain: np.ndarray  # (K+M, K+M) directed, zero diagonal

    @property
    def num_pairs(self) -> int:
        return self.own.shape[0]

    @property
    def num_ivues(self) -> int:
        return self.ivue_bs.shape[0]


def _v2v_pl_matrix(ax, ay, ah, bx, by, bh, d_min):
    """Vectorized vehicle-vehicle path loss between two endpoint sets.

    Row i, column j is the link from endpoint a_i to endpoint b_j; LOS iff
    both endpoints share a street.
    """
    d = np.hypot(ax[:, None] - bx[None, :], ay[:, None] - by[None, :])
    d = np.maximum(d, d_min)
    los = ah[:, None] == bh[None, :]
    pl = np.where(los, 44.23 + 16.7 * np.log10(d), 42.52 + 30.0 * np.log10(d))
    return pl, los


def _bs_pl_vector(x, y, bs_xy, radius, d_min):
    d = np.hypot(x - bs_xy[0], y - bs_xy[1])
    los = d <= radius
    d = np.maximum(d, d_min)
    pl = np.where(los, 38.40 + 21.0 * np.log10(d), 38.40 + 31.9 * np.log10(d))
    return pl, los


def large_scale_gains(topology: VehicleTopology, cfg: PhyConfig,
                      rng) -> LargeScaleTable:
    """Draw the period's large-scale gains from current vehicle positions."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    bs = topology.layout.bs_position
    d_min = cfg.min_distance_m
    tx = topology.pair_tx_ids()
    rx = topology.pair_rx_ids()
    iv = np.array(topology.i_vues, dtype=int)
    X, Y, H = topology.x, topology.y, topology.horizontal

    own_pl_m, own_los_m = _v2v_pl_matrix(X[tx], Y[tx], H[tx],
                                         X[rx], Y[rx], H[rx], d_min)
    own_pl, own_los = np.diag(own_pl_m), np.diag(own_los_m)
    txbs_pl, txbs_los = _bs_pl_vector(X[tx], Y[tx], bs, cfg.bs_los_radius_m, d_min)
    ivbs_pl, ivbs_los = _bs_pl_vector(X[iv], Y[iv], bs, cfg.bs_los_radius_m, d_min)
    ivue_rx_pl, ivue_rx_los = _v2v_pl_matrix(X[iv], Y[iv], H[iv],
                                             X[rx], Y[rx], H[rx], d_min)
    cross_pl, cross_los = own_pl_m, own_los_m

    vert = np.concatenate([tx, iv])
    vert_pl, vert_los = _v2v_pl_matrix(X[vert], Y[vert], H[vert],
                                       X[vert], Y[vert], H[vert], d_min)

    own = _shadowed_linear(own_pl, own_los, cfg, rng)
    tx_bs = _shadowed_linear(txbs_pl, txbs_los, cfg, rng)
    ivue_bs = _shadowed_linear(ivbs_pl, ivbs_los, cfg, rng)
    ivue_rx = _shadowed_linear(ivue_rx_pl, ivue_rx_los, cfg, rng)
    cross = _shadowed_linear(cross_pl, cross_los, cfg, rng)
    vertex = _shadowed_linear(vert_pl, vert_los, cfg, rng)
    np.fill_diagonal(vertex, 0.0)
    return LargeScaleTable(own, tx_bs, ivue_bs, ivue_rx, cross, vertex)


@dataclass
class ChannelRealization:
    """Per-subframe linear gains (large-scale times per-RB fading).

    Shapes: ``own``/``tx_bs`` (K, F), ``ivue_bs`` (M, F), ``ivue_rx``
    (M, K, F), ``cross`` (K, K, F) indexed [tx j, rx k, rb]. ``mean_view``
    strips fading, giving the gains a receiver would predict from
    large-scale knowledge alone.
    """
    own: np.ndarray
    tx_bs: np.ndarray
    ivue_bs: np.ndarray
    ivue_rx: np.ndarray
    cross: np.ndarray
    large_scale: LargeScaleTable

    @property
    def num_pairs(self) -> int:
        return self.own.shape[0]

    @property
    def num_ivues(self) -> int:
        return self.ivue_bs.shape[0]

    @property
    def num_rb(self) -> int:
        return self.own.shape[1]

    def mean_view(self) -> "ChannelRealization":
        return _expand(self.large_scale, self.num_rb)


def _expand(table: LargeScaleTable, num_rb: int,
            fades: dict[str, np.ndarray] | None = None) -> ChannelRealization:
    def grow(base, fade):
        tiled = np.repeat(base[..., None], num_rb, axis=-1)
        return tiled * fade if fade is not None else tiled

    f = fades or {}
    return ChannelRealization(
        own=grow(table.own, f.get("own")),
        tx_bs=grow(table.tx_bs, f.get("tx_bs")),
        ivue_bs=grow(table.ivue_bs, f.get("ivue_bs")),
        ivue_rx=grow(table.ivue_rx, f.get("ivue_rx")),
        cross=grow(table.cross, f.get("cross")),
        large_scale=table,
    )


def realize_channels(topology: VehicleTopology, cfg: PhyConfig, rng,
                     large_scale: LargeScaleTable | None = None) -> ChannelRealization:
    """One subframe's channel: held large-scale gains plus fresh fading.

    When ``large_scale`` is None a fresh table is drawn from the same rng,
    which makes a single call self-contained (and still deterministic for a
    given rng state).
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    table = large_scale if large_scale is not None else large_scale_gains(topology, cfg, rng)
    F = cfg.num_rb
    fades = {
        "own": rng.exponential(1.0, size=table.own.shape + (F,)),
        "tx_bs": rng.exponential(1.0, size=table.tx_bs.shape + (F,)),
        "ivue_bs": rng.exponential(1.0, size=table.ivue_bs.shape + (F,)),
        "ivue_rx": rng.exponential(1.0, size=table.ivue_rx.shape + (F,)),
        "cross": rng.exponential(1.0, size=table.cross.shape + (F,)),
    }
    return _expand(table, F, fades)
