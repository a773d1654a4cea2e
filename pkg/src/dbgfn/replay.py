"""Reward-prioritised replay of complete trajectories."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .env import Trajectory
from .errors import EmptyBufferError


class ReplayBuffer:
    """Ring buffer; draws with replacement with probability proportional to reward**exponent."""

    def __init__(self, capacity: int = 5000, exponent: float = 1.0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.exponent = float(exponent)
        self._items: list[Trajectory] = []
        self._rewards = np.zeros(self.capacity)
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def add(self, traj: Trajectory) -> None:
        if len(self._items) < self.capacity:
            self._items.append(traj)
        else:
            self._items[self._next] = traj
        self._rewards[self._next] = traj.reward
        self._next = (self._next + 1) % self.capacity

    def extend(self, trajs: Iterable[Trajectory]) -> None:
        for tr in trajs:
            self.add(tr)

    def probabilities(self) -> np.ndarray:
        if not self._items:
            raise EmptyBufferError("replay buffer is empty")
        w = self._rewards[: len(self._items)] ** self.exponent
        return w / w.sum()

    def sample(self, n: int, rng: np.random.Generator) -> list[Trajectory]:
        p = self.probabilities()
        cdf = np.cumsum(p)
        idx = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
        idx = np.minimum(idx, len(self._items) - 1)
        return [self._items[i] for i in idx]


def replay_sample(buffer: ReplayBuffer, n: int, rng: np.random.Generator) -> list[Trajectory]:
    return buffer.sample(n, rng)
