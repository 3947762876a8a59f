from __future__ import annotations

import numpy as np

from ..nn import MLP


class ReplayBuffer:
    """Fixed-capacity ring of (s, a, r, s', done) with uniform sampling."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.rng = rng
        self.states = np.zeros(self.capacity, dtype=np.int64)
        self.actions = np.zeros(self.capacity, dtype=np.int64)
        self.rewards = np.zeros(self.capacity)
        self.next_states = np.zeros(self.capacity, dtype=np.int64)
        self.dones = np.zeros(self.capacity, dtype=bool)
        self.size = 0
        self._pos = 0

    def __len__(self):
        return self.size

    def push(self, s, a, r, s2, done):
        i = self._pos
        self.states[i], self.actions[i], self.rewards[i] = s, a, r
        self.next_states[i], self.dones[i] = s2, done
        self._pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, k: int) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return self.rng.integers(self.size, size=k)

    def sample(self, k: int) -> dict:
        idx = self.sample_indices(k)
        return {
            "s": self.states[idx],
            "a": self.actions[idx],
            "r": self.rewards[idx],
            "s2": self.next_states[idx],
            "done": self.dones[idx],
        }


class TargetNetworkPair:
    """Online network and its lagged copy.

    With ``tau`` set, every sync step moves the target by polyak averaging;
    otherwise the target is hard-copied whenever ``step % period == 0``.
    """

    def __init__(self, online: MLP, period: int = 1, tau: float | None = None):
        self.online = online
        self.target = online.copy()
        self.period = int(period)
        self.tau = tau
        self.sync_events = 0

    def sync(self, step: int) -> bool:
        if self.tau is not None:
            for t, o in zip(self.target.params, self.online.params):
                t *= 1.0 - self.tau
                t += self.tau * o
            self.sync_events += 1
            return True
        if step % self.period == 0:
            self.target.copy_from(self.online)
            self.sync_events += 1
            return True
        return False


def replay_and_sync(buffer: ReplayBuffer, pair: TargetNetworkPair, step: int, transition=None) -> None:
    """Push ``transition`` (if given) and run the target sync for ``step``."""
    if transition is not None:
        buffer.push(*transition)
    pair.sync(step)
