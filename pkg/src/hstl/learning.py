"""Tabular value learning for flat policies and the options policy.

This is the reference (pure Python) implementation of the update rules. The
compiled training loop in :mod:`hstl._kernel` performs the same arithmetic in
the same order and is checked against these functions bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .stl import Formula, Trajectory, robustness, state_robustness, truncate_horizon

DISCOUNT_EXPONENTS = ("remaining", "total")


class LearningError(ValueError):
    pass


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linearly decaying exploration rate ``max(floor, eps0 - decay * t)``."""

    eps0: float
    decay: float
    floor: float = 0.1
    tick_source: str = "primitive-steps"

    def __post_init__(self):
        if not 0.0 <= self.floor <= self.eps0 <= 1.0:
            raise LearningError(f"need 0 <= floor <= eps0 <= 1, got floor={self.floor} eps0={self.eps0}")
        if self.decay < 0:
            raise LearningError("decay must be non-negative")
        if self.tick_source not in ("primitive-steps", "option-choices"):
            raise LearningError(f"unknown tick source {self.tick_source!r}")

    def __call__(self, t: int) -> float:
        return max(self.floor, self.eps0 - self.decay * t)


def new_q_table(n_states: int, n_actions: int, q0: float = 0.0) -> np.ndarray:
    return np.full((n_states, n_actions), float(q0))


def flat_q_update(q: np.ndarray, s: int, a: int, s_next: int, r: float, alpha: float, gamma: float) -> float:
    """One Q-learning backup on ``q[s, a]``; returns the new entry."""
    q[s, a] = q[s, a] + alpha * (r + gamma * q[s_next].max() - q[s, a])
    return q[s, a]


def option_q_update(
    q: np.ndarray,
    s: int,
    o: int,
    s_end: int,
    r: float,
    k: int,
    alpha: float,
    gamma: float,
    candidates: Sequence[int] | None = None,
) -> float:
    """Semi-Markov backup after option ``o`` ran ``k`` steps from ``s`` to ``s_end``.

    The bootstrap maximizes over ``candidates`` (options available at
    ``s_end``), or over every option when omitted.
    """
    if k < 0:
        raise LearningError("option duration must be non-negative")
    best = q[s_end].max() if candidates is None else q[s_end, list(candidates)].max()
    q[s, o] = q[s, o] + alpha * (r + gamma**k * best - q[s, o])
    return q[s, o]


def lumped_reward(traj: Trajectory, phi: Formula) -> Fraction:
    """Robustness of one option execution, with ``phi`` clipped to its length."""
    return robustness(traj, truncate_horizon(phi, len(traj)), 0)


def epsilon_greedy(q: np.ndarray, s: int, candidates: Sequence[int], eps: float, rng: np.random.Generator) -> int:
    """Pick among ``candidates`` for state ``s``.

    Always consumes exactly two uniforms: the first decides explore versus
    exploit, the second picks uniformly among all candidates or among the tied
    maximizers.
    """
    if len(candidates) == 0:
        raise LearningError("no candidates to choose from")
    if not 0.0 <= eps <= 1.0:
        raise LearningError(f"epsilon must lie in [0, 1], got {eps}")
    u = rng.random()
    v = rng.random()
    if u < eps:
        return int(candidates[int(v * len(candidates))])
    values = [q[s, c] for c in candidates]
    best = max(values)
    ties = [c for c, value in zip(candidates, values) if value == best]
    return int(ties[int(v * len(ties))])


def greedy_policy(q: np.ndarray) -> np.ndarray:
    """Per-state argmax; ties go to the lowest index."""
    return np.argmax(q, axis=1)


@dataclass
class LearningState:
    """Every table and schedule learned during one run.

    ``flat_q[j]`` belongs to primitive option ``j``; ``option_q`` ranges over
    the temporally combined option set. ``steps`` counts primitive steps and
    ``choices`` counts option selections; they drive the flat and options
    exploration schedules respectively.
    """

    flat_q: np.ndarray
    option_q: np.ndarray
    flat_alpha: tuple[float, ...]
    flat_gamma: tuple[float, ...]
    option_alpha: float
    option_gamma: float
    flat_schedules: tuple[EpsilonSchedule, ...]
    option_schedule: EpsilonSchedule
    discount_exponent: str = "remaining"
    steps: int = 0
    choices: int = 0
    available: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        n = self.flat_q.shape[0]
        if not (len(self.flat_alpha) == len(self.flat_gamma) == len(self.flat_schedules) == n):
            raise LearningError("one learning rate, discount and schedule per flat table")
        for value in (*self.flat_alpha, *self.flat_gamma, self.option_alpha, self.option_gamma):
            if not 0.0 <= value <= 1.0:
                raise LearningError(f"learning rates and discounts must lie in [0, 1], got {value}")
        if self.discount_exponent not in DISCOUNT_EXPONENTS:
            raise LearningError(f"discount_exponent must be one of {DISCOUNT_EXPONENTS}")
        if self.available is None:
            self.available = np.ones(self.option_q.shape, dtype=bool)

    @classmethod
    def create(
        cls,
        n_states: int,
        n_actions: int,
        n_options: int,
        flat_alpha: Sequence[float],
        flat_gamma: Sequence[float],
        flat_schedules: Sequence[EpsilonSchedule],
        option_alpha: float,
        option_gamma: float,
        option_schedule: EpsilonSchedule,
        q0: float = 0.0,
        discount_exponent: str = "remaining",
        available: np.ndarray | None = None,
    ) -> "LearningState":
        n = len(flat_schedules)
        return cls(
            flat_q=np.full((n, n_states, n_actions), float(q0)),
            option_q=new_q_table(n_states, n_options, q0),
            flat_alpha=tuple(flat_alpha),
            flat_gamma=tuple(flat_gamma),
            option_alpha=option_alpha,
            option_gamma=option_gamma,
            flat_schedules=tuple(flat_schedules),
            option_schedule=option_schedule,
            discount_exponent=discount_exponent,
            available=available,
        )

    @property
    def n_flat(self) -> int:
        return self.flat_q.shape[0]

    def flat_epsilons(self) -> tuple[float, ...]:
        return tuple(sched(self.steps) for sched in self.flat_schedules)

    def option_epsilon(self) -> float:
        return self.option_schedule(self.choices)

    def candidates(self, s: int) -> list[int]:
        return [int(o) for o in np.flatnonzero(self.available[s])]

    def copy(self) -> "LearningState":
        return LearningState(
            flat_q=self.flat_q.copy(),
            option_q=self.option_q.copy(),
            flat_alpha=self.flat_alpha,
            flat_gamma=self.flat_gamma,
            option_alpha=self.option_alpha,
            option_gamma=self.option_gamma,
            flat_schedules=self.flat_schedules,
            option_schedule=self.option_schedule,
            discount_exponent=self.discount_exponent,
            steps=self.steps,
            choices=self.choices,
            available=self.available.copy(),
        )


def hstl_update(
    phi: Formula,
    option: int,
    traj: Trajectory,
    actions: Sequence[int],
    learner: LearningState,
    predicates: Sequence[Formula],
    state_index: Callable[[Sequence[int]], int],
) -> LearningState:
    """Learn from one option execution (``k`` actions, ``k + 1`` states).

    Every primitive step updates every flat table, rewarded by the robustness
    of the successor state against that table's predicate. Every suffix of
    the trajectory is also treated as an execution of ``option`` from its
    first state, so the option table is updated ``k`` times, each with the
    clipped-formula robustness of the suffix. A zero-length execution (the
    option terminated where it started) only updates the option table.
    """
    k = len(actions)
    if len(traj) != k + 1:
        raise LearningError(f"trajectory of {len(traj)} states does not match {k} actions")
    if len(predicates) != learner.n_flat:
        raise LearningError("one predicate per flat table")
    idx = [state_index(s) for s in traj.states]
    end = idx[-1]
    candidates = learner.candidates(end)
    alpha_o, gamma_o = learner.option_alpha, learner.option_gamma

    if k == 0:
        r = float(lumped_reward(traj, phi))
        option_q_update(learner.option_q, idx[0], option, end, r, 0, alpha_o, gamma_o, candidates)
        return learner

    for i in range(k):
        s, a, s_next = idx[i], actions[i], idx[i + 1]
        for j in range(learner.n_flat):
            r_j = float(state_robustness(traj[i + 1], predicates[j], traj.variables))
            flat_q_update(learner.flat_q[j], s, a, s_next, r_j, learner.flat_alpha[j], learner.flat_gamma[j])
        r_o = float(lumped_reward(traj[i:], phi))
        exponent = k - i if learner.discount_exponent == "remaining" else k
        option_q_update(learner.option_q, s, option, end, r_o, exponent, alpha_o, gamma_o, candidates)
    return learner
