"""Experiment orchestration: seeding, the two-timescale loop, metrics, CSV.

All randomness flows from one master seed through named child streams
(topology, shadowing, fading, k-means, baseline policy, newcomer, one per
agent), spawned in a fixed order so identical configurations replay
byte-identically. Metrics are aggregated per epoch (``steps_per_epoch``
subframes) and written as one CSV row each.
"""

from __future__ import annotations

import copy
import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import baselines, cluster, federated, nn, phy
from .config import ConfigError, ExperimentConfig, save_config
from .dqn import DqnAgent
from .env import (AgentAction, SubframeRecord, V2XEnv, action_space_size,
                  observation_dim)
from .federated import ScheduledLoop
from .scenario import generate_topology

_STREAMS = ("topology", "shadowing", "fading", "kmeans", "baseline", "newcomer")


def seed_streams(seed: int, num_agents: int) -> dict:
    """Independent generators from one master seed; order is fixed."""
    children = np.random.SeedSequence(seed).spawn(len(_STREAMS) + num_agents)
    streams = {name: np.random.default_rng(children[i])
               for i, name in enumerate(_STREAMS)}
    streams["agents"] = [np.random.default_rng(children[len(_STREAMS) + k])
                         for k in range(num_agents)]
    return streams


@dataclass
class MetricsRecord:
    epoch: int
    capacity_bps: float
    capacity_bps_hz: float
    satisfied_rate: float
    mean_reward: float
    reward_moving_avg: float = float("nan")
    model_divergence: float | None = None
    vacuous: bool = False   # no pairs in the window


class EmptyWindowError(ValueError):
    """compute_metrics received no subframe records."""


def pair_satisfied(records: list[SubframeRecord], k: int, floor: float) -> bool:
    """Both QoS dimensions over a window: every expired message was
    delivered in time, and the window-mean fading-averaged SINR clears the
    effective outage floor."""
    outcomes = [ok for r in records for (kk, ok) in r.message_outcomes if kk == k]
    delivered = all(outcomes) if outcomes else True
    mean_sinr = float(np.mean([r.pair_mean_sinr[k] for r in records]))
    return delivered and mean_sinr >= floor


def compute_metrics(records: list[SubframeRecord], epoch: int,
                    qos: phy.QosSpec) -> MetricsRecord:
    if not records:
        raise EmptyWindowError("empty epoch window")
    num_pairs = min(len(r.pair_mean_sinr) for r in records)
    capacity = float(np.mean([r.sum_ivue_rate_bps for r in records]))
    reward = float(np.mean([r.reward for r in records]))
    if num_pairs == 0:
        return MetricsRecord(epoch, capacity, capacity / qos.rb_bandwidth_hz,
                             1.0, reward, vacuous=True)
    floor = phy.effective_outage_threshold(qos)
    satisfied = sum(pair_satisfied(records, k, floor) for k in range(num_pairs))
    return MetricsRecord(epoch, capacity, capacity / qos.rb_bandwidth_hz,
                         satisfied / num_pairs, reward)


def _attach_moving_average(rows: list[MetricsRecord], window: int) -> None:
    rewards = [r.mean_reward for r in rows]
    for i, row in enumerate(rows):
        lo = max(0, i - window + 1)
        row.reward_moving_avg = float(np.mean(rewards[lo:i + 1]))


CSV_COLUMNS = ("epoch", "sum_ivue_capacity_bps", "sum_ivue_capacity_bps_hz",
               "v2v_satisfied_rate", "mean_reward", "reward_moving_avg",
               "model_divergence")


def write_metrics_csv(rows: list[MetricsRecord], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            writer.writerow([
                r.epoch,
                f"{r.capacity_bps:.10g}",
                f"{r.capacity_bps_hz:.10g}",
                f"{r.satisfied_rate:.10g}",
                f"{r.mean_reward:.10g}",
                f"{r.reward_moving_avg:.10g}",
                "" if r.model_divergence is None else f"{r.model_divergence:.10g}",
            ])


# -- experiment ----------------------------------------------------------------


@dataclass
class ExperimentResult:
    metrics: list[MetricsRecord]
    records: list[SubframeRecord]
    env: V2XEnv
    agents: list[DqnAgent] = field(default_factory=list)
    assignment: cluster.ClusterAssignment | None = None
    global_models: dict[int, nn.QNetwork] = field(default_factory=dict)
    rounds: list[federated.CoordinationRound] = field(default_factory=list)


def _build_env(cfg: ExperimentConfig, streams: dict) -> V2XEnv:
    topo = generate_topology(cfg.scenario, streams["topology"])
    return V2XEnv(cfg, topo, streams["shadowing"], streams["fading"])


def _divergence(round_: federated.CoordinationRound) -> float:
    diffs = []
    flat_g = np.concatenate([p.ravel() for p in round_.global_model.parameters()])
    for snap in round_.snapshots:
        flat = np.concatenate([p.ravel() for p in snap.parameters()])
        diffs.append(float(np.linalg.norm(flat - flat_g)))
    return float(np.mean(diffs)) if diffs else 0.0


def _run_random(cfg: ExperimentConfig, env: V2XEnv, streams: dict,
                total: int) -> list[SubframeRecord]:
    rng = streams["baseline"]
    n_levels = cfg.phy.num_power_levels
    records = []
    for t in range(total):
        if t > 0 and t % cfg.federation.clustering_period == 0:
            env.redraw_large_scale()
        actions = [baselines.random_select(env.observe(k), rng, n_levels)
                   for k in range(env.num_pairs)]
        records.append(env.step(actions, want_observations=False).record)
    return records


def _run_centralized(cfg: ExperimentConfig, env: V2XEnv,
                     total: int) -> list[SubframeRecord]:
    qos = env.qos
    records = []
    actions: list[AgentAction] = []
    for t in range(total):
        if t % cfg.federation.clustering_period == 0:
            if t > 0:
                env.redraw_large_scale()
            result = baselines.centralized_allocate(
                env.large_scale, qos, cfg.phy,
                (cfg.drl.reward_c1, cfg.drl.reward_c2,
                 cfg.drl.reward_c3, cfg.drl.reward_c4),
                cfg.drl.reward_bonus)
            actions = []
            for k in range(env.num_pairs):
                f = int(np.flatnonzero(result.alloc.rb_alloc[k])[0])
                actions.append(AgentAction(f, int(result.alloc.mode[k]),
                                           int(result.power_level[k])))
        records.append(env.step(actions, want_observations=False).record)
    return records


def _run_drl(cfg: ExperimentConfig, env: V2XEnv, streams: dict, total: int,
             no_mode: bool) -> tuple[list[SubframeRecord], list[DqnAgent]]:
    K = env.num_pairs
    obs_dim = observation_dim(cfg.phy.num_rb)
    n_levels = cfg.phy.num_power_levels
    if no_mode:
        agents = [baselines.drl_no_mode_agent(obs_dim, cfg.phy.num_rb, n_levels,
                                              cfg.drl, streams["agents"][k])
                  for k in range(K)]
        decoders = [
            (lambda idx, F=cfg.phy.num_rb, L=n_levels:
             baselines.decode_no_mode_action(idx, F, L))] * K
    else:
        n_actions = action_space_size(cfg.phy.num_rb, n_levels)
        agents = [DqnAgent(obs_dim, n_actions, cfg.drl, streams["agents"][k])
                  for k in range(K)]
        decoders = [None] * K
    loop = ScheduledLoop(env, agents, [1] * K, [0] * K, decoders=decoders)
    records = []
    t = 0
    while t < total:
        if t > 0 and t % cfg.federation.clustering_period == 0:
            env.redraw_large_scale()
        chunk = min(cfg.federation.clustering_period
                    - t % cfg.federation.clustering_period, total - t)
        records.extend(loop.run(chunk))
        t += chunk
    return records, agents


def _run_federated(cfg: ExperimentConfig, env: V2XEnv, streams: dict,
                   total: int, out_dir: str | None):
    K = env.num_pairs
    obs_dim = observation_dim(cfg.phy.num_rb)
    n_actions = action_space_size(cfg.phy.num_rb, cfg.phy.num_power_levels)
    agents = [DqnAgent(obs_dim, n_actions, cfg.drl, streams["agents"][k])
              for k in range(K)]
    loop = ScheduledLoop(env, agents, [1] * K, [0] * K)
    fed = cfg.federation
    assignment = None
    global_models: dict[int, nn.QNetwork] = {}
    all_rounds: list[federated.CoordinationRound] = []
    divergence_events: list[tuple[int, float]] = []
    records: list[SubframeRecord] = []
    round_idx = 0
    t = 0
    while t < total:
        if t % fed.clustering_period == 0:
            if t > 0:
                env.redraw_large_scale()
            graph = cluster.build_graph(env.topology, env.large_scale)
            assignment = cluster.spectral_partition(
                graph, min(fed.num_clusters, graph.num_vertices),
                streams["kmeans"], num_rb=cfg.phy.num_rb,
                restarts=fed.kmeans_restarts)
            federated.configure_cluster_schedule(loop, assignment)
        next_c = t + fed.clustering_period - t % fed.clustering_period
        next_a = t + fed.averaging_period - t % fed.averaging_period
        end = min(next_c, next_a, total)
        chunk = end - t
        if end == next_a:
            recs, rounds = federated.run_round(
                round_idx, loop, assignment, chunk,
                fed.upload_fraction, streams["kmeans"])
            round_idx += 1
            for r in rounds:
                global_models[r.cluster_id] = r.global_model
            all_rounds.extend(rounds)
            if rounds:
                div = float(np.mean([_divergence(r) for r in rounds]))
                divergence_events.append((end, div))
            if out_dir and fed.checkpoint_rounds:
                _write_round_checkpoints(rounds, out_dir)
        else:
            recs = loop.run(chunk)
        records.extend(recs)
        t = end
    return records, agents, assignment, global_models, all_rounds, divergence_events


def _write_round_checkpoints(rounds, out_dir: str) -> None:
    ckpt = os.path.join(out_dir, "checkpoints")
    os.makedirs(ckpt, exist_ok=True)
    for r in rounds:
        path = os.path.join(ckpt, f"global_c{r.cluster_id}_r{r.index}.model")
        with open(path, "wb") as fh:
            fh.write(nn.serialize(r.global_model))


def run_experiment(cfg: ExperimentConfig,
                   out_dir: str | None = None) -> ExperimentResult:
    """Execute the configured algorithm for ``cfg.epochs`` epochs.

    Writes ``metrics.csv``, ``resolved-config.txt`` and final model
    checkpoints under ``out_dir`` when given.
    """
    cfg.validate()
    streams = seed_streams(cfg.seed, cfg.scenario.num_pairs + 4)
    env = _build_env(cfg, streams)
    total = cfg.epochs * cfg.drl.steps_per_epoch

    agents: list[DqnAgent] = []
    assignment = None
    global_models: dict[int, nn.QNetwork] = {}
    rounds: list[federated.CoordinationRound] = []
    divergence_events: list[tuple[int, float]] = []

    if cfg.algorithm == "random":
        records = _run_random(cfg, env, streams, total)
    elif cfg.algorithm == "centralized":
        records = _run_centralized(cfg, env, total)
    elif cfg.algorithm in ("drl", "drl-no-mode"):
        records, agents = _run_drl(cfg, env, streams, total,
                                   no_mode=cfg.algorithm == "drl-no-mode")
    elif cfg.algorithm == "fed-drl":
        (records, agents, assignment, global_models, rounds,
         divergence_events) = _run_federated(cfg, env, streams, total, out_dir)
    else:  # pragma: no cover - validate() already rejects this
        raise ConfigError(f"unknown algorithm {cfg.algorithm!r}")

    steps = cfg.drl.steps_per_epoch
    metrics = [compute_metrics(records[e * steps:(e + 1) * steps], e, env.qos)
               for e in range(cfg.epochs)]
    _attach_moving_average(metrics, cfg.drl.reward_ma_window)
    div_iter = iter(divergence_events)
    current = None
    pending = next(div_iter, None)
    for row in metrics:
        end_subframe = (row.epoch + 1) * steps
        while pending is not None and pending[0] <= end_subframe:
            current = pending[1]
            pending = next(div_iter, None)
        row.model_divergence = current

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_metrics_csv(metrics, os.path.join(out_dir, "metrics.csv"))
        with open(os.path.join(out_dir, "resolved-config.txt"), "w",
                  encoding="utf-8") as fh:
            save_config(cfg, fh)
        if agents:
            ckpt = os.path.join(out_dir, "checkpoints")
            os.makedirs(ckpt, exist_ok=True)
            for k, agent in enumerate(agents):
                with open(os.path.join(ckpt, f"agent_{k}.model"), "wb") as fh:
                    fh.write(agent.to_bytes())
        if global_models:
            ckpt = os.path.join(out_dir, "checkpoints")
            os.makedirs(ckpt, exist_ok=True)
            last_round = max(r.index for r in rounds)
            for c, net in sorted(global_models.items()):
                path = os.path.join(ckpt, f"global_c{c}_r{last_round}.model")
                with open(path, "wb") as fh:
                    fh.write(nn.serialize(net))

    return ExperimentResult(metrics, records, env, agents, assignment,
                            global_models, rounds)


# -- sweeps ----------------------------------------------------------------------


SWEEP_AXES = ("K", "gamma_o", "algorithm")


def summarize_tail(metrics: list[MetricsRecord], frac: float = 0.1) -> dict:
    """Mean of the final ``frac`` of epochs (at least one epoch)."""
    if not metrics:
        return {"capacity_bps": 0.0, "capacity_bps_hz": 0.0,
                "satisfied_rate": 0.0, "mean_reward": 0.0}
    tail = metrics[max(0, len(metrics) - max(1, int(len(metrics) * frac))):]
    return {
        "capacity_bps": float(np.mean([m.capacity_bps for m in tail])),
        "capacity_bps_hz": float(np.mean([m.capacity_bps_hz for m in tail])),
        "satisfied_rate": float(np.mean([m.satisfied_rate for m in tail])),
        "mean_reward": float(np.mean([m.mean_reward for m in tail])),
    }


def sweep(cfg: ExperimentConfig, axis: str, values: list,
          algorithms: list[str] | None = None,
          out_dir: str | None = None) -> list[dict]:
    """One run per (algorithm, value); summary row per run."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    if axis == "algorithm":
        combos = [(str(v), None) for v in values]
    else:
        algos = algorithms if algorithms else [cfg.algorithm]
        combos = [(a, v) for a in algos for v in values]

    rows = []
    for algo, value in combos:
        run_cfg = copy.deepcopy(cfg)
        run_cfg.algorithm = algo
        if axis == "K":
            run_cfg.scenario.num_pairs = int(value)
        elif axis == "gamma_o":
            run_cfg.qos.outage_threshold_db = float(value)
        sub_dir = None
        if out_dir:
            tag = algo if axis == "algorithm" else f"{algo}_{axis}_{value}"
            sub_dir = os.path.join(out_dir, tag)
        result = run_experiment(run_cfg, sub_dir)
        row = {"algorithm": algo, "axis": axis,
               "value": algo if value is None else value,
               **summarize_tail(result.metrics)}
        rows.append(row)

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "summary.csv"), "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["algorithm", "axis", "value", "capacity_bps",
                             "capacity_bps_hz", "satisfied_rate", "mean_reward"])
            for r in rows:
                writer.writerow([
                    r["algorithm"], r["axis"], r["value"],
                    f"{r['capacity_bps']:.10g}", f"{r['capacity_bps_hz']:.10g}",
                    f"{r['satisfied_rate']:.10g}", f"{r['mean_reward']:.10g}"])
    return rows


# -- newcomer trials ---------------------------------------------------------------


@dataclass
class TrainedWorld:
    """A federated training run frozen at its final subframe."""
    cfg: ExperimentConfig
    env: V2XEnv
    agents: list[DqnAgent]
    assignment: cluster.ClusterAssignment
    global_models: dict[int, nn.QNetwork]


def pretrain_federated(cfg: ExperimentConfig) -> TrainedWorld:
    run_cfg = copy.deepcopy(cfg)
    run_cfg.algorithm = "fed-drl"
    result = run_experiment(run_cfg)
    if result.assignment is None or not result.global_models:
        raise RuntimeError("federated pretraining produced no clustering round")
    return TrainedWorld(run_cfg, result.env, result.agents,
                        result.assignment, result.global_models)


def _newcomer_vertex_weights(env: V2XEnv, new_pair: int,
                             old_num_pairs: int) -> np.ndarray:
    """Worst-case-direction weights from the newcomer to the pre-activation
    vertices, in the old vertex numbering (pairs first, then I-VUEs)."""
    g = env.large_scale.vertex_gain
    new_v = new_pair
    weights = []
    for old_v in range(old_num_pairs + env.num_ivues):
        cur = old_v if old_v < old_num_pairs else old_v + 1
        weights.append(max(g[new_v, cur], g[cur, new_v]))
    return np.array(weights)


def run_newcomer_trial(world: TrainedWorld, trial_seed: int, bootstrap: bool,
                       epochs: int) -> list[MetricsRecord]:
    """Continue a trained world with one newly activated pair.

    Incumbent agents act greedily and stay frozen; the newcomer either
    downloads its cluster's global model (bootstrap) or learns from
    scratch. Clustering and averaging pause during the trial window so the
    two arms differ only in the newcomer's initialization. Returned metrics
    are restricted to the newcomer (satisfied rate of that single pair).
    """
    cfg = world.cfg
    env = copy.deepcopy(world.env)
    agents = [copy.deepcopy(a) for a in world.agents]
    for a in agents:
        a.eps_override = cfg.drl.eps_final
    trial_children = np.random.SeedSequence((cfg.seed, 7791, trial_seed)).spawn(4)
    env.shadow_rng = np.random.default_rng(trial_children[0])
    env.fading_rng = np.random.default_rng(trial_children[1])
    newcomer_rng = np.random.default_rng(trial_children[2])

    old_k = env.num_pairs
    new_pair = env.add_pair(np.random.default_rng(trial_children[3]))
    weights = _newcomer_vertex_weights(env, new_pair, old_k)

    obs_dim = observation_dim(cfg.phy.num_rb)
    n_actions = action_space_size(cfg.phy.num_rb, cfg.phy.num_power_levels)
    c = federated.assign_newcomer_cluster(weights, world.assignment)
    if bootstrap:
        newcomer, c = federated.bootstrap_newcomer(
            weights, world.assignment, world.global_models,
            obs_dim, n_actions, cfg.drl, newcomer_rng)
    else:
        newcomer = DqnAgent(obs_dim, n_actions, cfg.drl, newcomer_rng)

    loop = ScheduledLoop(env, agents, [1] * old_k, [0] * old_k,
                         trainable=[False] * old_k)
    federated.configure_cluster_schedule(loop, world.assignment)
    members = world.assignment.pair_members(c)
    period = len(members) + 1
    slots = federated.async_schedule(members)
    for k in members:
        loop.act_period[k] = period
        loop.act_slot[k] = slots[k]
    loop.extend(newcomer, period, len(members), trainable=True)
    allowed = world.assignment.candidate_rbs[c]
    if allowed:
        from .env import rb_action_mask
        newcomer.set_action_mask(rb_action_mask(
            allowed, cfg.phy.num_rb, cfg.phy.num_power_levels))

    steps = cfg.drl.steps_per_epoch
    records: list[SubframeRecord] = []
    t0 = env.subframe
    t = 0
    total = epochs * steps
    while t < total:
        if (t0 + t) % cfg.federation.clustering_period == 0 and t > 0:
            env.redraw_large_scale()
        chunk = min(cfg.federation.clustering_period
                    - (t0 + t) % cfg.federation.clustering_period, total - t)
        records.extend(loop.run(chunk))
        t += chunk

    floor = phy.effective_outage_threshold(env.qos)
    rows = []
    for e in range(epochs):
        window = records[e * steps:(e + 1) * steps]
        ok = pair_satisfied(window, new_pair, floor)
        base = compute_metrics(window, e, env.qos)
        base.satisfied_rate = 1.0 if ok else 0.0
        rows.append(base)
    return rows
