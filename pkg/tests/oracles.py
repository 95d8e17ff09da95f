"""Independent brute-force reference implementations used only by tests.

Everything here is written as literal loops over explicit small instances,
sharing no code with the package modules it validates. Oracles may be
exponential-time; they are only ever run at toy scale.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field


# -- scalar link math ---------------------------------------------------------


@dataclass
class TinyInstance:
    """Explicit small-scale world: gains as plain nested lists.

    ``rb_alloc[k][f]``, ``mode[k]`` (1 = relayed), ``pair_power[k]``,
    ``ivue_power[m]``; gains ``own[k][f]``, ``tx_bs[k][f]``,
    ``ivue_bs[m][f]``, ``ivue_rx[m][k][f]``, ``cross[j][k][f]``.
    """
    rb_alloc: list
    mode: list
    pair_power: list
    ivue_power: list
    own: list
    tx_bs: list
    ivue_bs: list
    ivue_rx: list
    cross: list
    noise: float
    bandwidth: float = 180e3

    @property
    def num_pairs(self):
        return len(self.rb_alloc)

    @property
    def num_ivues(self):
        return len(self.ivue_power)

    @property
    def num_rb(self):
        return len(self.rb_alloc[0])


def oracle_ivue_sinr(inst: TinyInstance, m: int) -> float:
    num = inst.ivue_power[m] * inst.ivue_bs[m][m]
    den = inst.noise
    for k in range(inst.num_pairs):
        for f in range(inst.num_rb):
            if f == m and inst.rb_alloc[k][f]:
                den += inst.pair_power[k] * inst.tx_bs[k][f]
    return num / den


def oracle_ivue_rate(inst: TinyInstance, m: int) -> float:
    return inst.bandwidth * math.log2(1.0 + oracle_ivue_sinr(inst, m))


def oracle_direct_sinr(inst: TinyInstance, k: int, f: int) -> float:
    num = inst.rb_alloc[k][f] * inst.pair_power[k] * inst.own[k][f]
    den = inst.noise
    for m in range(inst.num_ivues):
        if m == f:
            den += inst.ivue_power[m] * inst.ivue_rx[m][k][f]
    for j in range(inst.num_pairs):
        if j != k and inst.rb_alloc[j][f]:
            den += inst.pair_power[j] * inst.cross[j][k][f]
    return num / den


def oracle_relay_sinr(inst: TinyInstance, k: int, f: int) -> float:
    num = inst.rb_alloc[k][f] * inst.pair_power[k] * inst.tx_bs[k][f]
    den = inst.noise
    for j in range(inst.num_pairs):
        if j != k and inst.rb_alloc[j][f]:
            den += inst.pair_power[j] * inst.tx_bs[j][f]
    return num / den


def oracle_pair_sinr(inst: TinyInstance, k: int) -> float:
    fn = oracle_relay_sinr if inst.mode[k] else oracle_direct_sinr
    return sum(fn(inst, k, f) for f in range(inst.num_rb))


def oracle_pair_rate(inst: TinyInstance, k: int) -> float:
    total = 0.0
    for f in range(inst.num_rb):
        if inst.mode[k]:
            total += inst.bandwidth * math.log2(1.0 + oracle_relay_sinr(inst, k, f))
        else:
            total += inst.bandwidth * math.log2(1.0 + oracle_direct_sinr(inst, k, f))
    return 0.5 * total if inst.mode[k] else total


def oracle_g(x: float, bonus: float) -> float:
    return bonus if x >= 0 else x


def oracle_reward(inst: TinyInstance, load_bits, time_left, min_se, floor,
                  weights, bonus) -> float:
    """Literal evaluation of the four-part shared reward on an instance."""
    c1, c2, c3, c4 = weights
    w = inst.bandwidth
    total = 0.0
    for m in range(inst.num_ivues):
        se = oracle_ivue_rate(inst, m) / w
        total += c1 * se + c2 * oracle_g(se - min_se, bonus)
    for k in range(inst.num_pairs):
        needed = load_bits[k] / time_left[k] / w
        total += c3 * oracle_g(oracle_pair_sinr(inst, k) - floor, bonus)
        total += c4 * oracle_g(oracle_pair_rate(inst, k) / w - needed, bonus)
    return total


# -- exhaustive joint allocation ------------------------------------------------


@dataclass
class AllocationInstance:
    """Large-scale-only world for allocation search (no per-RB fading)."""
    own: list          # (K,)
    tx_bs: list        # (K,)
    ivue_bs: list      # (M,)
    ivue_rx: list      # (M, K)
    cross: list        # (K, K) tx j -> rx k
    noise: float
    num_rb: int
    power_levels: list
    ivue_power: float
    bandwidth: float = 180e3
    min_se: float = 3.0
    need_se: float = 0.0
    floor: float = 0.0
    weights: tuple = (0.1, 0.9, 1.0, 1.0)
    bonus: float = 1.0

    @property
    def num_pairs(self):
        return len(self.own)

    @property
    def num_ivues(self):
        return len(self.ivue_bs)


def allocation_objective(inst: AllocationInstance, config) -> float:
    """Objective of one joint config: list of (mode, rb, level) per pair.

    mode 1 = relayed (uplink decoded at the base station, half rate).
    """
    c1, c2, c3, c4 = inst.weights
    K, M = inst.num_pairs, inst.num_ivues
    total = 0.0
    for m in range(M):
        den = inst.noise
        for k, (_, rb, lvl) in enumerate(config):
            if rb == m:
                den += inst.power_levels[lvl] * inst.tx_bs[k]
        se = math.log2(1.0 + inst.ivue_power * inst.ivue_bs[m] / den)
        total += c1 * se + c2 * oracle_g(se - inst.min_se, inst.bonus)
    for k, (mode, rb, lvl) in enumerate(config):
        p = inst.power_levels[lvl]
        if mode:
            den = inst.noise
            for j, (_, rb_j, lvl_j) in enumerate(config):
                if j != k and rb_j == rb:
                    den += inst.power_levels[lvl_j] * inst.tx_bs[j]
            sinr = p * inst.tx_bs[k] / den
            se = 0.5 * math.log2(1.0 + sinr)
        else:
            den = inst.noise
            if rb < M:
                den += inst.ivue_power * inst.ivue_rx[rb][k]
            for j, (_, rb_j, lvl_j) in enumerate(config):
                if j != k and rb_j == rb:
                    den += inst.power_levels[lvl_j] * inst.cross[j][k]
            sinr = p * inst.own[k] / den
            se = math.log2(1.0 + sinr)
        total += c3 * oracle_g(sinr - inst.floor, inst.bonus)
        total += c4 * oracle_g(se - inst.need_se, inst.bonus)
    return total


class TooLargeInstanceError(ValueError):
    pass


def exhaustive_allocation(inst: AllocationInstance, limit: int = 100_000):
    """Best joint config by full enumeration over modes x RBs x levels."""
    per_pair = [(mode, rb, lvl)
                for rb in range(inst.num_rb)
                for mode in (0, 1)
                for lvl in range(len(inst.power_levels))]
    total = len(per_pair) ** inst.num_pairs
    if total > limit:
        raise TooLargeInstanceError(f"{total} joint configs exceed limit {limit}")
    best_val, best_cfg = -math.inf, None
    for config in itertools.product(per_pair, repeat=inst.num_pairs):
        val = allocation_objective(inst, config)
        if val > best_val:
            best_val, best_cfg = val, config
    return best_val, best_cfg


# -- assignment, partitions, value iteration --------------------------------------


def brute_force_assignment(cost) -> tuple[tuple, float]:
    """Minimum-cost row->column assignment by trying all permutations."""
    n = len(cost)
    best_perm, best_cost = None, math.inf
    for perm in itertools.permutations(range(n)):
        c = sum(cost[i][perm[i]] for i in range(n))
        if c < best_cost:
            best_perm, best_cost = perm, c
    return best_perm, best_cost


def all_partitions(items, n_blocks):
    """Every partition of ``items`` into at most ``n_blocks`` nonempty blocks."""
    items = list(items)

    def rec(i, blocks):
        if i == len(items):
            yield [list(b) for b in blocks]
            return
        for b in blocks:
            b.append(items[i])
            yield from rec(i + 1, blocks)
            b.pop()
        if len(blocks) < n_blocks:
            blocks.append([items[i]])
            yield from rec(i + 1, blocks)
            blocks.pop()

    yield from rec(0, [])


def best_partition(weights, n_blocks) -> tuple[float, list]:
    """Partition maximizing the summed intra-block edge weights."""
    n = len(weights)
    best_val, best_blocks = -math.inf, None
    for blocks in all_partitions(range(n), n_blocks):
        val = 0.0
        for b in blocks:
            for i in b:
                for j in b:
                    if i != j:
                        val += weights[i][j]
        if val > best_val:
            best_val = val
            best_blocks = [sorted(b) for b in blocks]
    return best_val, best_blocks


def value_iteration(transitions, rewards, gamma, tol=1e-10):
    """Exact Q* for a finite MDP given P[s][a][s'] and R[s][a]."""
    S = len(rewards)
    A = len(rewards[0])
    q = [[0.0] * A for _ in range(S)]
    while True:
        delta = 0.0
        new_q = [[0.0] * A for _ in range(S)]
        for s in range(S):
            for a in range(A):
                v = rewards[s][a]
                for s2 in range(S):
                    v += gamma * transitions[s][a][s2] * max(q[s2])
                new_q[s][a] = v
                delta = max(delta, abs(v - q[s][a]))
        q = new_q
        if delta < tol:
            return q


# -- finite differences ------------------------------------------------------------


def oracle_net_forward(weights, biases, x):
    """Plain matrix arithmetic forward pass (rectifier hidden, linear out)."""
    a = list(x)
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        out = []
        for j in range(len(b)):
            s = b[j]
            for i2 in range(len(a)):
                s += a[i2] * w[i2][j]
            out.append(s if i == last else max(s, 0.0))
        a = out
    return a


def oracle_masked_loss(weights, biases, xs, targets, actions):
    """Mean over the batch of (target - output[action])^2."""
    total = 0.0
    for x, y, act in zip(xs, targets, actions):
        out = oracle_net_forward(weights, biases, x)
        total += (y - out[act]) ** 2
    return total / len(xs)


def finite_diff_grads(weights, biases, xs, targets, actions, h=1e-5):
    """Central-difference gradients of the masked loss per parameter.

    Returns (weight_grads, bias_grads) as nested lists matching shapes.
    """
    def loss():
        return oracle_masked_loss(weights, biases, xs, targets, actions)

    w_grads = []
    for w in weights:
        g = [[0.0] * len(row) for row in w]
        for i, row in enumerate(w):
            for j in range(len(row)):
                orig = row[j]
                row[j] = orig + h
                up = loss()
                row[j] = orig - h
                down = loss()
                row[j] = orig
                g[i][j] = (up - down) / (2 * h)
        w_grads.append(g)
    b_grads = []
    for b in biases:
        g = [0.0] * len(b)
        for j in range(len(b)):
            orig = b[j]
            b[j] = orig + h
            up = loss()
            b[j] = orig - h
            down = loss()
            b[j] = orig
            g[j] = (up - down) / (2 * h)
        b_grads.append(g)
    return w_grads, b_grads
