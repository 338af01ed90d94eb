"""Finite MDP environments with a hidden, seeded transition model."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

State = tuple[int, ...]


class EnvError(ValueError):
    pass


@dataclass
class RunStreams:
    """Independent random substreams for one training run.

    Environment noise, exploration and episode resets each draw from their own
    generator, so changing how often one of them is consulted leaves the other
    sequences untouched.
    """

    env: np.random.Generator
    explore: np.random.Generator
    reset: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "RunStreams":
        env, explore, reset = np.random.SeedSequence(seed).spawn(3)
        return cls(np.random.default_rng(env), np.random.default_rng(explore), np.random.default_rng(reset))


class MdpEnvironment(ABC):
    """A finite MDP ``<S, A, T, R>`` seen only through ``reset`` and ``step``.

    Subclasses describe their transition model as two tables so that a
    compiled training loop can simulate it without calling back into Python:
    ``successor_table()[s, a]`` is the state index reached when action ``a``
    is actually executed in state ``s``, and ``outcome_table()`` lists, for
    each intended action, the actions that may actually be executed together
    with their cumulative probabilities. One uniform draw decides each
    transition.
    """

    state_variables: tuple[str, ...]
    action_names: tuple[str, ...]

    @property
    @abstractmethod
    def shape(self) -> tuple[int, ...]:
        """Number of values per state variable; states are ``0 <= v < n``."""

    @property
    def num_states(self) -> int:
        return int(np.prod(self.shape))

    @property
    def num_actions(self) -> int:
        return len(self.action_names)

    def index(self, state: Sequence[int]) -> int:
        self.check_state(state)
        return int(np.ravel_multi_index(tuple(int(v) for v in state), self.shape))

    def state_at(self, index: int) -> State:
        return tuple(int(v) for v in np.unravel_index(index, self.shape))

    def states(self) -> Iterator[State]:
        for i in range(self.num_states):
            yield self.state_at(i)

    def check_state(self, state: Sequence[int]) -> None:
        if len(state) != len(self.shape) or any(not 0 <= v < n for v, n in zip(state, self.shape)):
            raise EnvError(f"state {tuple(state)} outside {self.shape}")

    @abstractmethod
    def successor_table(self) -> np.ndarray: ...

    @abstractmethod
    def outcome_table(self) -> tuple[np.ndarray, np.ndarray]:
        """``(actions, cdf)``, both shaped ``(num_actions, num_outcomes)``."""

    def reward(self, state, action, next_state) -> float:
        # the learner never uses the MDP's own reward
        return 0.0

    def reset(self, rng: np.random.Generator) -> State:
        """Uniform random state (one draw per state variable)."""
        return tuple(int(rng.random() * n) for n in self.shape)

    def step(self, state: Sequence[int], action: int, rng: np.random.Generator) -> State:
        if not 0 <= action < self.num_actions:
            raise EnvError(f"action index {action} outside 0..{self.num_actions - 1}")
        s = self.index(state)
        actions, cdf = self._outcomes
        realized = actions[action, sample_outcome(cdf[action], rng.random())]
        return self.state_at(int(self._successors[s, realized]))

    @property
    def _outcomes(self):
        if not hasattr(self, "_outcome_cache"):
            self._outcome_cache = self.outcome_table()
        return self._outcome_cache

    @property
    def _successors(self):
        if not hasattr(self, "_successor_cache"):
            self._successor_cache = self.successor_table()
        return self._successor_cache


def sample_outcome(cdf: np.ndarray, u: float) -> int:
    """Index of the first cumulative probability strictly above ``u``."""
    j = 0
    last = len(cdf) - 1
    while j < last and u >= cdf[j]:
        j += 1
    return j


# Up/Down/Left/Right with the origin in the bottom-left corner.
MOVES = {"Up": (0, 1), "Down": (0, -1), "Left": (-1, 0), "Right": (1, 0)}


class GridWorld(MdpEnvironment):
    """Slippery 2-D grid. Off-grid moves leave the robot where it is.

    With probability ``intent_prob`` the chosen move is executed; otherwise
    one of the other three moves is, uniformly.
    """

    state_variables = ("x", "y")
    action_names = ("Up", "Down", "Left", "Right")

    def __init__(self, width: int = 15, height: int = 15, intent_prob: float = 0.7):
        if width < 1 or height < 1:
            raise EnvError("grid dimensions must be positive")
        if not 0.0 <= intent_prob <= 1.0:
            raise EnvError(f"intent_prob must lie in [0, 1], got {intent_prob}")
        self.width = width
        self.height = height
        self.intent_prob = intent_prob
        self.slip_prob = (1.0 - intent_prob) / 3.0

    @property
    def shape(self):
        return (self.width, self.height)

    def __repr__(self):
        return f"GridWorld(width={self.width}, height={self.height}, intent_prob={self.intent_prob})"

    def move(self, state: Sequence[int], action: int) -> State:
        dx, dy = MOVES[self.action_names[action]]
        x, y = state
        nx, ny = x + dx, y + dy
        if not (0 <= nx < self.width and 0 <= ny < self.height):
            return (x, y)
        return (nx, ny)

    def successor_table(self):
        table = np.empty((self.num_states, self.num_actions), dtype=np.int64)
        for i, s in enumerate(self.states()):
            for a in range(self.num_actions):
                table[i, a] = self.index(self.move(s, a))
        return table

    def outcome_table(self):
        n = self.num_actions
        actions = np.empty((n, n), dtype=np.int64)
        probs = np.empty((n, n))
        for a in range(n):
            actions[a] = [a] + [b for b in range(n) if b != a]
            probs[a] = [self.intent_prob] + [self.slip_prob] * (n - 1)
        return actions, np.cumsum(probs, axis=1)
