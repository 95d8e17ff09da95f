import math

import numpy as np
import pytest

from v2xsim import phy
from v2xsim.channel import ChannelRealization, LargeScaleTable
from v2xsim.config import PhyConfig, QosConfig
from v2xsim.phy import (MODE_DIRECT, MODE_RELAY, AllocationSnapshot, QosSpec,
                        check_qos, direct_mode_sinr, effective_outage_threshold,
                        ivue_rate, ivue_sinr, link_budget, relay_mode_sinr,
                        v2v_pair_rate)

import oracles


def default_qos(**kw) -> QosSpec:
    spec = QosSpec.from_config(QosConfig(), PhyConfig())
    for key, val in kw.items():
        setattr(spec, key, val)
    return spec


def chan_from_lists(own, tx_bs, ivue_bs, ivue_rx, cross) -> ChannelRealization:
    """Hand-built per-RB gain arrays -> realization (large-scale = RB 0 slice)."""
    own = np.asarray(own, dtype=float)
    tx_bs = np.asarray(tx_bs, dtype=float)
    ivue_bs = np.asarray(ivue_bs, dtype=float)
    ivue_rx = np.asarray(ivue_rx, dtype=float)
    cross = np.asarray(cross, dtype=float)
    table = LargeScaleTable(own[:, 0], tx_bs[:, 0], ivue_bs[:, 0],
                            ivue_rx[:, :, 0], cross[:, :, 0],
                            np.zeros((own.shape[0] + ivue_bs.shape[0],) * 2))
    return ChannelRealization(own, tx_bs, ivue_bs, ivue_rx, cross, table)


def flat_chan(K, M, F, value=1.0) -> ChannelRealization:
    return chan_from_lists(
        np.full((K, F), value), np.full((K, F), value), np.full((M, F), value),
        np.full((M, K, F), value), np.full((K, K, F), value))


class TestIvueSinr:
    def test_clean_rb_unit_ratio(self):
        qos = default_qos()
        chan = flat_chan(K=1, M=1, F=2)
        chan.ivue_bs[0, 0] = qos.noise_w  # P*h == noise with unit power
        alloc = AllocationSnapshot([[0, 1]], [0], [1.0], [1.0])
        assert ivue_sinr(0, alloc, chan, qos) == pytest.approx(1.0)

    def test_one_equal_interferer_noise_free(self):
        qos = default_qos(noise_w=1e-30)
        chan = flat_chan(K=1, M=1, F=2)
        alloc = AllocationSnapshot([[1, 0]], [0], [1.0], [1.0])
        assert ivue_sinr(0, alloc, chan, qos) == pytest.approx(1.0)

    def test_three_user_instance_matches_oracle(self):
        rng = np.random.default_rng(8)
        K, M, F = 2, 1, 3
        qos = default_qos()
        own = rng.uniform(1e-10, 1e-7, (K, F))
        tx_bs = rng.uniform(1e-12, 1e-9, (K, F))
        ivue_bs = rng.uniform(1e-10, 1e-8, (M, F))
        ivue_rx = rng.uniform(1e-13, 1e-10, (M, K, F))
        cross = rng.uniform(1e-13, 1e-10, (K, K, F))
        chan = chan_from_lists(own, tx_bs, ivue_bs, ivue_rx, cross)
        alloc = AllocationSnapshot([[1, 0, 0], [1, 0, 0]], [0, 1],
                                   [0.1, 0.2], [0.19])
        inst = oracles.TinyInstance(
            rb_alloc=[[1, 0, 0], [1, 0, 0]], mode=[0, 1],
            pair_power=[0.1, 0.2], ivue_power=[0.19],
            own=own.tolist(), tx_bs=tx_bs.tolist(), ivue_bs=ivue_bs.tolist(),
            ivue_rx=ivue_rx.tolist(), cross=cross.tolist(),
            noise=qos.noise_w, bandwidth=qos.rb_bandwidth_hz)
        assert ivue_sinr(0, alloc, chan, qos) == pytest.approx(
            oracles.oracle_ivue_sinr(inst, 0), rel=1e-12)
        assert ivue_rate(0, alloc, chan, qos) == pytest.approx(
            oracles.oracle_ivue_rate(inst, 0), rel=1e-12)


class TestIvueRate:
    def test_unit_sinr(self):
        qos = default_qos()
        chan = flat_chan(1, 1, 1)
        chan.ivue_bs[0, 0] = qos.noise_w
        alloc = AllocationSnapshot([[0]], [0], [0.0], [1.0])
        assert ivue_rate(0, alloc, chan, qos) == pytest.approx(180_000.0)

    def test_zero_power_zero_rate(self):
        qos = default_qos()
        chan = flat_chan(1, 1, 1)
        alloc = AllocationSnapshot([[0]], [0], [0.0], [0.0])
        assert ivue_rate(0, alloc, chan, qos) == 0.0

    def test_sinr_three_doubles_rate(self):
        qos = default_qos()
        chan = flat_chan(1, 1, 1)
        chan.ivue_bs[0, 0] = 3.0 * qos.noise_w
        alloc = AllocationSnapshot([[0]], [0], [0.0], [1.0])
        assert ivue_rate(0, alloc, chan, qos) == pytest.approx(360_000.0)


class TestPairSinr:
    def test_sole_occupant_unit(self):
        qos = default_qos()
        chan = flat_chan(K=1, M=1, F=2)
        chan.own[0, 1] = qos.noise_w
        alloc = AllocationSnapshot([[0, 1]], [0], [1.0], [1.0])
        assert direct_mode_sinr(0, 1, alloc, chan, qos) == pytest.approx(1.0)

    def test_shares_rb_with_ivue(self):
        qos = default_qos()
        chan = flat_chan(K=1, M=1, F=2)
        chan.own[0, 0] = qos.noise_w
        chan.ivue_rx[0, 0, 0] = qos.noise_w
        alloc = AllocationSnapshot([[1, 0]], [0], [1.0], [1.0])
        assert direct_mode_sinr(0, 0, alloc, chan, qos) == pytest.approx(0.5)

    def test_relay_sole_occupant_unit(self):
        qos = default_qos()
        chan = flat_chan(K=1, M=1, F=2)
        chan.tx_bs[0, 1] = qos.noise_w
        alloc = AllocationSnapshot([[0, 1]], [1], [1.0], [1.0])
        assert relay_mode_sinr(0, 1, alloc, chan, qos) == pytest.approx(1.0)

    def test_relay_gains_interferer_term(self):
        qos = default_qos(noise_w=1e-30)
        chan = flat_chan(K=2, M=0, F=1)
        chan.tx_bs[0, 0] = 6.0
        chan.tx_bs[1, 0] = 2.0
        alloc = AllocationSnapshot([[1], [1]], [1, 0], [1.0, 1.0], [])
        assert relay_mode_sinr(0, 0, alloc, chan, qos) == pytest.approx(3.0)

    def test_random_instances_match_oracle(self):
        rng = np.random.default_rng(31)
        qos = default_qos()
        for _ in range(25):
            K, M, F = 2, 1, 3
            own = rng.uniform(1e-10, 1e-7, (K, F))
            tx_bs = rng.uniform(1e-12, 1e-9, (K, F))
            ivue_bs = rng.uniform(1e-10, 1e-8, (M, F))
            ivue_rx = rng.uniform(1e-13, 1e-10, (M, K, F))
            cross = rng.uniform(1e-13, 1e-10, (K, K, F))
            a = np.zeros((K, F))
            for k in range(K):
                a[k, rng.integers(0, F)] = 1
            mode = rng.integers(0, 2, K)
            power = rng.uniform(0, 0.2, K)
            chan = chan_from_lists(own, tx_bs, ivue_bs, ivue_rx, cross)
            alloc = AllocationSnapshot(a, mode, power, [0.19])
            inst = oracles.TinyInstance(
                rb_alloc=a.tolist(), mode=mode.tolist(),
                pair_power=power.tolist(), ivue_power=[0.19],
                own=own.tolist(), tx_bs=tx_bs.tolist(), ivue_bs=ivue_bs.tolist(),
                ivue_rx=ivue_rx.tolist(), cross=cross.tolist(),
                noise=qos.noise_w, bandwidth=qos.rb_bandwidth_hz)
            for k in range(K):
                assert v2v_pair_rate(k, alloc, chan, qos) == pytest.approx(
                    oracles.oracle_pair_rate(inst, k), rel=1e-12)
                assert phy.pair_sinr(k, alloc, chan, qos) == pytest.approx(
                    oracles.oracle_pair_sinr(inst, k), rel=1e-12)
            # Vectorized budget agrees with the scalar reference ops.
            budget = link_budget(alloc, chan, qos)
            for m in range(M):
                assert budget.ivue_rates_bps[m] == pytest.approx(
                    ivue_rate(m, alloc, chan, qos), rel=1e-12)
            for k in range(K):
                assert budget.pair_rates_bps[k] == pytest.approx(
                    v2v_pair_rate(k, alloc, chan, qos), rel=1e-12)


class TestPairRate:
    def test_direct_unit_sinr(self):
        qos = default_qos()
        chan = flat_chan(1, 0, 1)
        chan.own[0, 0] = qos.noise_w
        alloc = AllocationSnapshot([[1]], [0], [1.0], [])
        assert v2v_pair_rate(0, alloc, chan, qos) == pytest.approx(180_000.0)

    def test_relay_halves(self):
        qos = default_qos()
        chan = flat_chan(1, 0, 1)
        chan.tx_bs[0, 0] = 3.0 * qos.noise_w
        alloc = AllocationSnapshot([[1]], [1], [1.0], [])
        assert v2v_pair_rate(0, alloc, chan, qos) == pytest.approx(180_000.0)

    def test_mode_flip_on_identical_sinr_halves_rate(self):
        qos = default_qos()
        chan = flat_chan(1, 0, 1)
        chan.own[0, 0] = chan.tx_bs[0, 0] = 5.0 * qos.noise_w
        direct = AllocationSnapshot([[1]], [0], [1.0], [])
        relay = AllocationSnapshot([[1]], [1], [1.0], [])
        assert v2v_pair_rate(0, relay, chan, qos) == pytest.approx(
            0.5 * v2v_pair_rate(0, direct, chan, qos))


class TestOutageThreshold:
    def test_reference_value(self):
        qos = default_qos()
        val = effective_outage_threshold(qos)
        assert val == pytest.approx(198.527, abs=1e-3)
        assert 10 * math.log10(val) == pytest.approx(22.978, abs=1e-3)

    def test_identity_probability(self):
        qos = default_qos(outage_probability=1.0 - math.exp(-1.0))
        assert effective_outage_threshold(qos) == pytest.approx(
            qos.outage_threshold_lin)

    def test_limit_toward_one(self):
        qos = default_qos(outage_probability=1.0 - 1e-12)
        assert effective_outage_threshold(qos) < 0.1

    def test_monte_carlo_outage_probability(self):
        # Exponential fading with the effective mean lands on the target
        # outage probability.
        qos = default_qos()
        mean = effective_outage_threshold(qos)
        rng = np.random.default_rng(2024)
        draws = rng.exponential(mean, size=10**6)
        p_hat = np.mean(draws <= qos.outage_threshold_lin)
        assert abs(p_hat - qos.outage_probability) < 0.002


class TestCheckQos:
    def test_required_rate_from_traffic(self):
        qos = default_qos()
        assert qos.message_bits / qos.latency_budget_s == pytest.approx(640_000.0)

    def test_boundaries_inclusive(self):
        qos = default_qos()
        K, M, F = 1, 1, 2
        chan = flat_chan(K, M, F)
        floor = effective_outage_threshold(qos)
        # Exact equality at every threshold.
        chan.ivue_bs[0, 0] = (2 ** (qos.ivue_min_rate_bps / qos.rb_bandwidth_hz)
                              - 1.0) * qos.noise_w
        chan.own[0, 1] = floor * qos.noise_w
        alloc = AllocationSnapshot([[0, 1]], [0], [1.0], [1.0])
        rate = v2v_pair_rate(0, alloc, chan, qos)
        status = check_qos(alloc, chan, qos,
                           load_bits=np.array([rate * 0.001]),
                           time_left_s=np.array([0.001]))
        assert status.ivue_ok[0]
        assert status.latency_ok[0]
        assert status.reliability_ok[0]

    def test_adding_interferer_never_raises_sinr(self):
        rng = np.random.default_rng(17)
        qos = default_qos()
        K, M, F = 3, 2, 3
        chan = chan_from_lists(
            rng.uniform(1e-10, 1e-7, (K, F)), rng.uniform(1e-12, 1e-9, (K, F)),
            rng.uniform(1e-10, 1e-8, (M, F)), rng.uniform(1e-13, 1e-10, (M, K, F)),
            rng.uniform(1e-13, 1e-10, (K, K, F)))
        base = np.zeros((K, F))
        base[0, 0] = 1
        with_interferer = base.copy()
        with_interferer[1, 0] = 1
        a0 = AllocationSnapshot(base, [0, 0, 0], [0.1, 0.1, 0.1], [0.19, 0.19])
        a1 = AllocationSnapshot(with_interferer, [0, 0, 0], [0.1, 0.1, 0.1],
                                [0.19, 0.19])
        assert direct_mode_sinr(0, 0, a1, chan, qos) <= direct_mode_sinr(
            0, 0, a0, chan, qos)
        assert ivue_sinr(0, a1, chan, qos) <= ivue_sinr(0, a0, chan, qos)

    def test_rate_monotone_in_own_power(self):
        qos = default_qos()
        chan = flat_chan(1, 1, 2)
        rates = []
        for p in (0.01, 0.05, 0.2):
            alloc = AllocationSnapshot([[0, 1]], [0], [p], [0.19])
            rates.append(v2v_pair_rate(0, alloc, chan, qos))
        assert rates[0] <= rates[1] <= rates[2]


class TestAllocationSnapshot:
    def test_rejects_multiple_rbs(self):
        with pytest.raises(ValueError):
            AllocationSnapshot([[1, 1]], [0], [0.1], [0.1])

    def test_rejects_negative_power(self):
        with pytest.raises(ValueError):
            AllocationSnapshot([[1, 0]], [0], [-0.1], [0.1])
