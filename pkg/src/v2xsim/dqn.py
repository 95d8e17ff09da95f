"""Per-agent deep Q-learning: replay memory, target network, epsilon-greedy.

Each agent owns an online network, a lagged copy used for bootstrap
targets, an Adam state, and a FIFO replay buffer. Training runs every
``train_every`` stored transitions once the buffer holds at least
``replay_prefill`` entries; the target network is refreshed every
``target_sync_every`` training steps. Exploration decays linearly from
``eps_initial`` to ``eps_final`` over ``eps_decay_steps`` action steps.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import nn
from .config import DrlConfig

Transition = tuple[np.ndarray, int, float, np.ndarray]

_CHECKPOINT_TAG = b"VXAG"


class ReplayMemory:
    """Fixed-capacity transition store with FIFO eviction.

    Backed by flat arrays (allocated on first append) so minibatch sampling
    is a fancy-indexing operation rather than tuple stacking.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._size = 0
        self._next = 0
        self._states: np.ndarray | None = None
        self._actions = np.zeros(capacity, dtype=int)
        self._rewards = np.zeros(capacity)
        self._next_states: np.ndarray | None = None

    def __len__(self) -> int:
        return self._size

    def append(self, item: Transition) -> None:
        state, action, reward, next_state = item
        if self._states is None:
            dim = np.asarray(state).shape[0]
            self._states = np.zeros((self.capacity, dim))
            self._next_states = np.zeros((self.capacity, dim))
        i = self._next
        self._states[i] = state
        self._actions[i] = action
        self._rewards[i] = reward
        self._next_states[i] = next_state
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample_arrays(self, batch: int, rng: np.random.Generator):
        """Uniform sample with replacement: (states, actions, rewards, next)."""
        idx = rng.integers(0, self._size, size=batch)
        return (self._states[idx], self._actions[idx],
                self._rewards[idx], self._next_states[idx])

    def items(self) -> list[Transition]:
        """Stored transitions in insertion order (oldest first)."""
        if self._size < self.capacity:
            order = range(self._size)
        else:
            order = [(self._next + i) % self.capacity for i in range(self.capacity)]
        return [(self._states[i].copy(), int(self._actions[i]),
                 float(self._rewards[i]), self._next_states[i].copy())
                for i in order]

    def clear(self) -> None:
        self._size = 0
        self._next = 0


def epsilon(step: int, cfg: DrlConfig) -> float:
    """Linear decay from eps_initial to eps_final, flat afterwards."""
    if step >= cfg.eps_decay_steps:
        return cfg.eps_final
    frac = step / cfg.eps_decay_steps
    return cfg.eps_initial + frac * (cfg.eps_final - cfg.eps_initial)


@dataclass
class AgentHyper:
    """Derived once from DrlConfig so tests can override sizes freely."""
    obs_dim: int
    n_actions: int
    hidden_units: int


class DqnAgent:
    """One learning agent; single-owner mutable state."""

    def __init__(self, obs_dim: int, n_actions: int, cfg: DrlConfig,
                 rng: np.random.Generator, action_mask: np.ndarray | None = None):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.rng = rng
        self.online = nn.init_weights((obs_dim, cfg.hidden_units, n_actions), rng)
        self.target = self.online.copy()
        self.adam = nn.AdamState.for_network(self.online, cfg.learning_rate)
        self.memory = ReplayMemory(cfg.replay_capacity)
        self.step_count = 0        # actions taken (drives epsilon)
        self.store_count = 0       # transitions stored (drives train cadence)
        self.train_count = 0       # gradient steps (drives target sync)
        self.eps_override: float | None = None
        self.action_mask = (np.ones(n_actions, dtype=bool)
                            if action_mask is None else np.asarray(action_mask, bool))

    # -- exploration ----------------------------------------------------

    @property
    def eps(self) -> float:
        if self.eps_override is not None:
            return self.eps_override
        return epsilon(self.step_count, self.cfg)

    def set_action_mask(self, mask: np.ndarray | None) -> None:
        self.action_mask = (np.ones(self.n_actions, dtype=bool)
                            if mask is None else np.asarray(mask, bool))
        if not self.action_mask.any():
            raise ValueError("action mask leaves no valid action")

    def select_action(self, observation: np.ndarray) -> int:
        """Epsilon-greedy over allowed actions; argmax ties go to the lowest index."""
        allowed = np.flatnonzero(self.action_mask)
        eps = self.eps
        self.step_count += 1
        if self.rng.random() < eps:
            return int(allowed[self.rng.integers(0, allowed.size)])
        return self.greedy_action(observation)

    def greedy_action(self, observation: np.ndarray) -> int:
        q = nn.forward(self.online, observation)
        masked = np.where(self.action_mask, q, -np.inf)
        return int(np.argmax(masked))

    # -- learning --------------------------------------------------------

    def store_and_train(self, transition: Transition) -> float | None:
        """Store one transition; run a gradient step on schedule.

        Returns the minibatch loss when a training step ran, else None.
        """
        self.memory.append(transition)
        self.store_count += 1
        if len(self.memory) < max(self.cfg.replay_prefill, self.cfg.batch_size):
            return None
        if self.store_count % self.cfg.train_every != 0:
            return None
        return self._train_step()

    def _train_step(self) -> float:
        states, actions, rewards, next_states = self.memory.sample_arrays(
            self.cfg.batch_size, self.rng)

        next_q = nn.forward(self.target, next_states)
        next_q = np.where(self.action_mask[None, :], next_q, -np.inf)
        targets = rewards + self.cfg.discount * next_q.max(axis=1)

        mask = np.zeros((len(actions), self.n_actions))
        mask[np.arange(len(actions)), actions] = 1.0
        loss, grads = nn.loss_and_grads(self.online, states, targets, mask)
        nn.adam_step(self.online, self.adam, grads)

        self.train_count += 1
        if self.train_count % self.cfg.target_sync_every == 0:
            self.sync_target()
        return loss

    def sync_target(self) -> None:
        self.target.copy_from(self.online)

    # -- model exchange ---------------------------------------------------

    def snapshot(self) -> nn.QNetwork:
        return self.online.copy()

    def load_model(self, net: nn.QNetwork) -> None:
        self.online.copy_from(net)
        self.target.copy_from(net)

    # -- checkpointing ------------------------------------------------------

    def to_bytes(self) -> bytes:
        """Network image plus step/train counters and current epsilon."""
        return (nn.serialize(self.online) + _CHECKPOINT_TAG
                + struct.pack("<QQQd", self.step_count, self.store_count,
                              self.train_count, self.eps))

    def restore_counters(self, data: bytes) -> nn.QNetwork:
        """Parse a checkpoint produced by ``to_bytes``; loads net and counters."""
        footer = 4 + struct.calcsize("<QQQd")
        if len(data) < footer or data[-footer:-footer + 4] != _CHECKPOINT_TAG:
            raise nn.ModelFormatError("missing agent footer")
        net = nn.deserialize(data[:-footer])
        step, store, train, _eps = struct.unpack("<QQQd", data[-footer + 4:])
        self.load_model(net)
        self.step_count, self.store_count, self.train_count = step, store, train
        return net
