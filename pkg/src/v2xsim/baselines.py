"""Comparison policies: sensing-based random selection, learning without
mode selection, and a centralized greedy + assignment allocator.

The centralized allocator mimics what a base station with global
large-scale CSI would do: pick each pair's transmission mode by comparing
interference-free achievable rates at full power, then assign RBs by
solving a maximum-benefit matching where each (pair, RB) benefit is
evaluated pairwise against the RB's incumbent uplink user with the best
discrete power level for that cell. Cross-interference between pairs is
ignored during assignment and only materializes in the environment, which
is the documented fidelity limit of this baseline.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .channel import LargeScaleTable
from .config import DrlConfig, PhyConfig
from .dqn import DqnAgent
from .env import AgentAction, AgentObservation, revenue
from .phy import (MODE_DIRECT, MODE_RELAY, AllocationSnapshot, QosSpec,
                  effective_outage_threshold)


class BaselineKind(enum.Enum):
    RANDOM = "random"
    DRL_NO_MODE = "drl-no-mode"
    CENTRALIZED = "centralized"


def random_select(observation: AgentObservation, rng: np.random.Generator,
                  num_power_levels: int, pool_size: int = 5) -> AgentAction:
    """Uniform RB choice among the quietest RBs sensed last subframe.

    Always direct mode at maximum power; RB ties break toward lower index.
    """
    interf = observation.rx_interference_w
    pool = np.argsort(interf, kind="stable")[:min(pool_size, interf.size)]
    rb = int(pool[rng.integers(0, pool.size)])
    return AgentAction(rb=rb, mode=MODE_DIRECT, power_level=num_power_levels - 1)


# -- learning without mode selection ------------------------------------------


def no_mode_action_space(num_rb: int, num_power_levels: int) -> int:
    return num_rb * num_power_levels


def decode_no_mode_action(index: int, num_rb: int,
                          num_power_levels: int) -> AgentAction:
    size = no_mode_action_space(num_rb, num_power_levels)
    if not 0 <= index < size:
        raise ValueError(f"action index {index} outside [0, {size})")
    return AgentAction(rb=index // num_power_levels, mode=MODE_DIRECT,
                       power_level=index % num_power_levels)


def drl_no_mode_agent(obs_dim: int, num_rb: int, num_power_levels: int,
                      cfg: DrlConfig, rng: np.random.Generator) -> DqnAgent:
    """Same learning machinery on the mode-free action space."""
    return DqnAgent(obs_dim, no_mode_action_space(num_rb, num_power_levels),
                    cfg, rng)


# -- assignment ----------------------------------------------------------------


def hungarian(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimum-cost assignment of rows to columns (potentials method).

    Rectangular input is padded to square with a large sentinel so real
    rows never prefer fictitious columns. Returns (col index per row using
    -1 for padded assignments, total real cost).
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost entries must be finite")
    n_rows, n_cols = cost.shape
    n = max(n_rows, n_cols)
    sentinel = (np.abs(cost).max() if cost.size else 1.0) * n + 1.0
    square = np.full((n, n), sentinel)
    square[:n_rows, :n_cols] = cost

    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=int)   # match[j]: row assigned to column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0, delta, j1 = match[j0], INF, 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = square[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            match[j0] = match[way[j0]]
            j0 = way[j0]

    assign = np.full(n_rows, -1, dtype=int)
    total = 0.0
    for j in range(1, n + 1):
        row = match[j] - 1
        col = j - 1
        if row < n_rows and col < n_cols:
            assign[row] = col
            total += cost[row, col]
    return assign, float(total)


# -- centralized allocator ------------------------------------------------------


@dataclass
class CentralizedResult:
    alloc: AllocationSnapshot
    power_level: np.ndarray  # per pair: chosen discrete level index
    infeasible: np.ndarray   # per pair: no level met QoS on the assigned RB


def _se(sinr: float) -> float:
    return float(np.log2(1.0 + sinr))


def centralized_allocate(table: LargeScaleTable, qos: QosSpec, phy_cfg: PhyConfig,
                         weights: tuple[float, float, float, float] = (0.1, 0.9, 1.0, 1.0),
                         bonus: float = 1.0) -> CentralizedResult:
    """Greedy mode selection, then benefit-matrix assignment of RBs/powers.

    The per-cell benefit is the pairwise change in the shared objective:
    capacity retained by the incumbent uplink user (with its own shortfall
    penalty) plus the pair's reliability and latency terms, maximized over
    the discrete power levels of the pair's chosen mode. Pairs beyond the
    number of RBs are assigned in further rounds over the same benefit
    matrix.
    """
    c1, c2, c3, c4 = weights
    K, M, F = table.num_pairs, table.num_ivues, phy_cfg.num_rb
    n_levels = phy_cfg.num_power_levels
    levels = np.arange(n_levels) / (n_levels - 1) * phy_cfg.max_tx_w
    noise = qos.noise_w
    floor = effective_outage_threshold(qos)
    w_hz = qos.rb_bandwidth_hz
    need_se = (qos.message_bits / qos.latency_budget_s) / w_hz
    min_se = qos.ivue_min_rate_bps / w_hz
    p_ivue = phy_cfg.ivue_tx_w

    # (i) Mode per pair from interference-free rates at maximum power.
    mode = np.empty(K, dtype=int)
    for k in range(K):
        direct_se = _se(phy_cfg.max_tx_w * table.own[k] / noise)
        relay_se = 0.5 * _se(phy_cfg.max_tx_w * table.tx_bs[k] / noise)
        mode[k] = MODE_RELAY if relay_se > direct_se else MODE_DIRECT

    # Clean spectral efficiency of each incumbent uplink user.
    clean_ivue_se = np.array([
        _se(p_ivue * table.ivue_bs[m] / noise) for m in range(M)])

    def pair_terms(k: int, f: int, power: float) -> tuple[float, float, float]:
        """(mean sinr, own spectral efficiency, pair reward terms)."""
        if mode[k] == MODE_RELAY:
            sinr = power * table.tx_bs[k] / noise
            se = 0.5 * _se(sinr)
        else:
            interf = p_ivue * table.ivue_rx[f, k] if f < M else 0.0
            sinr = power * table.own[k] / (interf + noise)
            se = _se(sinr)
        terms = c3 * revenue(sinr - floor, bonus) + c4 * revenue(se - need_se, bonus)
        return sinr, se, terms

    def ivue_delta(k: int, f: int, power: float) -> float:
        if f >= M:
            return 0.0
        hit_se = _se(p_ivue * table.ivue_bs[f]
                     / (power * table.tx_bs[k] + noise))
        before = c1 * clean_ivue_se[f] + c2 * revenue(clean_ivue_se[f] - min_se, bonus)
        after = c1 * hit_se + c2 * revenue(hit_se - min_se, bonus)
        return after - before

    benefit = np.empty((K, F))
    best_level = np.empty((K, F), dtype=int)
    for k in range(K):
        for f in range(F):
            best_val, best_l = -np.inf, 0
            for l, p in enumerate(levels):
                _, _, terms = pair_terms(k, f, p)
                val = ivue_delta(k, f, p) + terms
                # Strict improvement keeps the lowest power level on ties.
                if val > best_val + 1e-15:
                    best_val, best_l = val, l
            benefit[k, f] = best_val
            best_level[k, f] = best_l

    # (iii) Rounds of maximum-benefit matching until every pair has an RB.
    a = np.zeros((K, F))
    chosen_level = np.zeros(K, dtype=int)
    pending = list(range(K))
    while pending:
        batch = pending[:F]
        pending = pending[F:]
        sub = -benefit[np.array(batch, dtype=int)]
        assign, _ = hungarian(sub)
        for row, k in enumerate(batch):
            f = int(assign[row])
            a[k, f] = 1.0
            chosen_level[k] = best_level[k, f]

    infeasible = np.zeros(K, dtype=bool)
    for k in range(K):
        f = int(np.flatnonzero(a[k])[0])
        sinr, se, _ = pair_terms(k, f, levels[chosen_level[k]])
        max_sinr, max_se, _ = pair_terms(k, f, levels[-1])
        infeasible[k] = not (max_sinr >= floor and max_se >= need_se)

    alloc = AllocationSnapshot(
        rb_alloc=a, mode=mode, pair_power_w=levels[chosen_level],
        ivue_power_w=np.full(M, p_ivue))
    return CentralizedResult(alloc=alloc, power_level=chosen_level,
                             infeasible=infeasible)
