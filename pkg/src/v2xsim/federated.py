"""Coordination rounds: batch-weighted model averaging, asynchronous
subframe slots, and newcomer bootstrap.

Within a cluster of N members the subframes repeat in blocks of N; member i
re-selects its action only on subframes congruent to i modulo N, and its
previous action persists in between. Every ``averaging_period`` subframes
the members' networks are collected, averaged parameterwise with weights
proportional to the number of transitions each member trained on during the
round, and the resulting global model is pushed back to every member.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .cluster import ClusterAssignment
from .config import DrlConfig
from .dqn import DqnAgent
from .env import AgentAction, SubframeRecord, V2XEnv, decode_action, SILENT_ACTION


@dataclass
class CoordinationRound:
    index: int
    cluster_id: int
    member_ids: list[int]
    snapshots: list[nn.QNetwork]
    batch_counts: list[int]
    global_model: nn.QNetwork


def federated_average(snapshots: list[tuple[nn.QNetwork, float]]) -> nn.QNetwork:
    """Parameterwise weighted mean of member models.

    Weights are the members' training batch counts; when every count is
    zero (a round with no training) the mean falls back to uniform.
    """
    if not snapshots:
        raise ValueError("cannot average an empty snapshot list")
    shapes = {net.layer_sizes for net, _ in snapshots}
    if len(shapes) != 1:
        raise ValueError(f"snapshot shape mismatch: {sorted(shapes)}")
    total = float(sum(b for _, b in snapshots))
    if total <= 0:
        weights = [1.0 / len(snapshots)] * len(snapshots)
    else:
        weights = [b / total for _, b in snapshots]
    result = snapshots[0][0].copy()
    for p in result.parameters():
        p[...] = 0.0
    for (net, _), w in zip(snapshots, weights):
        for dst, src in zip(result.parameters(), net.parameters()):
            dst += w * src
    return result


def async_schedule(member_ids: list[int]) -> dict[int, int]:
    """Slot index per member: member at position i acts when t % N == i."""
    return {m: i for i, m in enumerate(member_ids)}


class ScheduledLoop:
    """Drives agents against the environment under per-agent act schedules.

    ``act_period[k]`` and ``act_slot[k]`` define when pair k re-selects its
    action; between its slots the previous action persists. A transition is
    closed at the agent's next slot, with the mean of the global rewards
    earned while its action was live. The synchronous single-agent-per-
    subframe case is the degenerate schedule period 1, slot 0.
    """

    def __init__(self, env: V2XEnv, agents: list[DqnAgent | None],
                 act_period: list[int], act_slot: list[int],
                 train: bool = True,
                 decoders: list | None = None,
                 trainable: list[bool] | None = None,
                 external_policy=None):
        self.env = env
        self.agents = agents
        self.act_period = act_period
        self.act_slot = act_slot
        self.train = train
        # Optional hook (k, env) -> AgentAction for non-learning policies.
        self.external_policy = external_policy
        K = env.num_pairs
        self.decoders = decoders if decoders is not None else [None] * K
        self.trainable = trainable if trainable is not None else [True] * K
        self.actions: list[AgentAction] = [SILENT_ACTION] * K
        self._pending: list[tuple[np.ndarray, int] | None] = [None] * K
        self._reward_sum = np.zeros(K)
        self._reward_n = np.zeros(K, dtype=int)
        self.batch_trained = np.zeros(K, dtype=int)

    def extend(self, agent: DqnAgent | None, period: int, slot: int,
               trainable: bool = True) -> None:
        """Track one newly activated pair (appended at the end)."""
        self.agents.append(agent)
        self.act_period.append(period)
        self.act_slot.append(slot)
        self.decoders.append(None)
        self.trainable.append(trainable)
        self.actions.append(SILENT_ACTION)
        self._pending.append(None)
        self._reward_sum = np.append(self._reward_sum, 0.0)
        self._reward_n = np.append(self._reward_n, 0)
        self.batch_trained = np.append(self.batch_trained, 0)

    def _decode(self, k: int, idx: int) -> AgentAction:
        if self.decoders[k] is not None:
            return self.decoders[k](idx)
        return decode_action(idx, self.env.num_rb,
                             self.env.cfg.phy.num_power_levels)

    def _agent_turn(self, k: int) -> None:
        agent = self.agents[k]
        if agent is None:
            if self.external_policy is not None:
                self.actions[k] = self.external_policy(k, self.env)
            return
        vec = self.env.observe_vector(k)
        if self._pending[k] is not None and self.train and self.trainable[k]:
            prev_vec, prev_idx = self._pending[k]
            mean_r = self._reward_sum[k] / max(self._reward_n[k], 1)
            loss = agent.store_and_train((prev_vec, prev_idx, mean_r, vec))
            if loss is not None:
                self.batch_trained[k] += agent.cfg.batch_size
        idx = agent.select_action(vec)
        self.actions[k] = self._decode(k, idx)
        self._pending[k] = (vec, idx)
        self._reward_sum[k] = 0.0
        self._reward_n[k] = 0

    def run(self, n_subframes: int) -> list[SubframeRecord]:
        records = []
        for _ in range(n_subframes):
            t = self.env.subframe
            for k in range(self.env.num_pairs):
                if t % self.act_period[k] == self.act_slot[k] % self.act_period[k]:
                    self._agent_turn(k)
            result = self.env.step(self.actions, want_observations=False)
            self._reward_sum += result.reward
            self._reward_n += 1
            records.append(result.record)
        return records

    def reset_batch_counts(self) -> None:
        self.batch_trained[...] = 0


def configure_cluster_schedule(loop: ScheduledLoop,
                               assignment: ClusterAssignment) -> None:
    """Apply per-cluster asynchronous slots and RB masks to a running loop."""
    from .env import rb_action_mask  # local import to avoid cycle at module load

    for c, members in enumerate(assignment.clusters):
        pair_members = [v for v in members if v < assignment.num_pairs]
        slots = async_schedule(pair_members)
        period = max(len(pair_members), 1)
        allowed = assignment.candidate_rbs[c]
        for k in pair_members:
            loop.act_period[k] = period
            loop.act_slot[k] = slots[k]
            agent = loop.agents[k]
            if agent is not None and allowed:
                agent.set_action_mask(rb_action_mask(
                    allowed, loop.env.num_rb, loop.env.cfg.phy.num_power_levels))


def run_round(round_index: int, loop: ScheduledLoop,
              assignment: ClusterAssignment, n_subframes: int,
              upload_fraction: float = 1.0,
              rng: np.random.Generator | None = None
              ) -> tuple[list[SubframeRecord], list[CoordinationRound]]:
    """One coordination round: local training, upload, average, distribute.

    All clusters share the physical environment, so their members advance
    through the same ``n_subframes`` jointly; the per-cluster averaging
    happens at the round boundary.
    """
    loop.reset_batch_counts()
    records = loop.run(n_subframes)
    rounds = []
    for c in range(len(assignment.clusters)):
        members = assignment.pair_members(c)
        if not members:
            continue
        uploaders = members
        if upload_fraction < 1.0 and rng is not None and len(members) > 1:
            n_up = max(1, int(round(upload_fraction * len(members))))
            uploaders = sorted(int(i) for i in
                               rng.choice(members, size=n_up, replace=False))
        snaps = [(loop.agents[k].snapshot(), int(loop.batch_trained[k]))
                 for k in uploaders]
        global_model = federated_average([(s, b) for s, b in snaps])
        for k in members:
            loop.agents[k].load_model(global_model)
        rounds.append(CoordinationRound(
            index=round_index, cluster_id=c, member_ids=list(uploaders),
            snapshots=[s for s, _ in snaps], batch_counts=[b for _, b in snaps],
            global_model=global_model))
    return records, rounds


class NoClusteringError(RuntimeError):
    """A newcomer arrived before any clustering round has run."""


def assign_newcomer_cluster(weights_to_vertices: np.ndarray,
                            assignment: ClusterAssignment | None) -> int:
    """Cluster whose members have the largest summed edge weight to the newcomer."""
    if assignment is None or not assignment.clusters:
        raise NoClusteringError("no cluster assignment available yet")
    scores = [float(np.sum(weights_to_vertices[np.array(m, dtype=int)]))
              if m else -np.inf for m in assignment.clusters]
    return int(np.argmax(scores))


def bootstrap_newcomer(weights_to_vertices: np.ndarray,
                       assignment: ClusterAssignment | None,
                       global_models: dict[int, nn.QNetwork],
                       obs_dim: int, n_actions: int, cfg: DrlConfig,
                       rng: np.random.Generator) -> tuple[DqnAgent, int]:
    """Agent for a newly activated pair, seeded with its cluster's model.

    The agent starts at the final exploration rate (pure exploitation of the
    downloaded model) with an empty replay memory, and is expected to join
    its cluster's asynchronous schedule immediately.
    """
    c = assign_newcomer_cluster(weights_to_vertices, assignment)
    if c not in global_models:
        raise NoClusteringError(f"no global model recorded for cluster {c}")
    agent = DqnAgent(obs_dim, n_actions, cfg, rng)
    agent.load_model(global_models[c])
    agent.eps_override = cfg.eps_final
    agent.memory.clear()
    return agent, c
