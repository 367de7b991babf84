"""One-dimensional offset-tracking task with a known optimum.

Each step shows a fresh offset ``o ~ U[-1, 1]``; the reward for action
``a`` is ``-(a - o)**2``. Episodes last ``horizon`` steps. Acting on the
offset exactly scores 0; a uniformly random action scores ``-2/3`` per step
in expectation.
"""
from __future__ import annotations

import numpy as np


class OffsetTrackingEnv:
    state_dim = 1
    action_dim = 1

    def __init__(self, seed: int = 0, horizon: int = 10):
        self.rng = np.random.default_rng(seed)
        self.horizon = horizon
        self.action_bound = np.array([1.0])
        self.t = horizon

    @property
    def optimal_return(self) -> float:
        return 0.0

    @property
    def random_return(self) -> float:
        return -2.0 / 3.0 * self.horizon

    def reset(self) -> np.ndarray:
        self.t = 0
        self.offset = float(self.rng.uniform(-1.0, 1.0))
        return np.array([self.offset])

    def step(self, action):
        if self.t >= self.horizon:
            raise RuntimeError("episode is over; call reset()")
        a = float(np.clip(np.asarray(action, dtype=float).reshape(-1)[0], -1.0, 1.0))
        reward = -(a - self.offset) ** 2
        self.t += 1
        self.offset = float(self.rng.uniform(-1.0, 1.0))
        return np.array([self.offset]), reward, self.t >= self.horizon
