"""Primitive and temporally combined options, and their execution."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env import MdpEnvironment, State
from .learning import epsilon_greedy
from .stl import Formula, Predicate, is_temporal_free, state_robustness

OPTION_SET_MODES = ("subsets-in-order", "all-permutations", "explicit-list")

DEFAULT_STEP_CAP = 500


class OptionError(ValueError):
    pass


@dataclass(frozen=True)
class PrimitiveOption:
    """Option driven by one flat policy, targeting one predicate.

    ``initiation`` is the set of states where the option may start, or
    ``None`` for every state. The option terminates (with probability one)
    on entering ``termination``.
    """

    id: str
    predicate_index: int
    predicate: Formula
    termination: frozenset[State]
    initiation: frozenset[State] | None = None
    max_robustness: float = 0.0
    min_steps: int = 0

    def __post_init__(self):
        if not self.termination:
            raise OptionError(f"option {self.id} has an empty termination set")

    def can_start(self, state: State) -> bool:
        return self.initiation is None or tuple(state) in self.initiation


@dataclass(frozen=True)
class CombinedOption:
    """Primitive options executed in order, each until it terminates."""

    id: str
    sequence: tuple[int, ...]

    def __post_init__(self):
        if not self.sequence:
            raise OptionError("a combined option needs at least one constituent")


@dataclass(frozen=True)
class OptionSetSpec:
    mode: str = "subsets-in-order"
    max_sequence_length: int | None = None
    explicit: tuple[str, ...] = ()

    def __post_init__(self):
        if self.mode not in OPTION_SET_MODES:
            raise OptionError(f"unknown option-set mode {self.mode!r}; expected one of {OPTION_SET_MODES}")
        if self.max_sequence_length is not None and self.max_sequence_length < 1:
            raise OptionError("max_sequence_length must be at least 1")
        if self.mode == "explicit-list" and not self.explicit:
            raise OptionError("explicit-list mode needs a non-empty list of option ids")


def default_labels(n: int) -> list[str]:
    if n <= 26:
        return [chr(ord("A") + i) for i in range(n)]
    return [f"P{i}" for i in range(n)]


def build_primitive_options(
    predicates: Sequence[Formula],
    env: MdpEnvironment,
    labels: Sequence[str] | None = None,
    initiation: Sequence[frozenset[State] | None] | None = None,
) -> list[PrimitiveOption]:
    """One option per predicate, terminating where the predicate is most robust.

    The termination set is every state attaining the maximum robustness,
    found by enumerating the whole state space.
    """
    if not predicates:
        raise OptionError("no predicates to build options from")
    labels = list(labels) if labels is not None else default_labels(len(predicates))
    if len(labels) != len(predicates) or len(set(labels)) != len(labels):
        raise OptionError("need one distinct label per predicate")
    if initiation is None:
        initiation = [None] * len(predicates)
    try:
        states = list(env.states())
    except (TypeError, NotImplementedError):
        raise OptionError("state space cannot be enumerated") from None

    options = []
    for i, (psi, label) in enumerate(zip(predicates, labels)):
        if not is_temporal_free(psi):
            raise OptionError(f"predicate {i} contains temporal operators")
        values = [state_robustness(s, psi, env.state_variables) for s in states]
        best = max(values)
        term = frozenset(s for s, v in zip(states, values) if v == best)
        options.append(PrimitiveOption(label, i, psi, term, initiation[i], float(best)))
    return options


def _sequences(n: int, spec: OptionSetSpec, labels: Sequence[str]) -> list[tuple[int, ...]]:
    longest = n if spec.max_sequence_length is None else min(n, spec.max_sequence_length)
    if spec.mode == "subsets-in-order":
        return [c for r in range(1, longest + 1) for c in itertools.combinations(range(n), r)]
    if spec.mode == "all-permutations":
        return [p for r in range(1, longest + 1) for p in itertools.permutations(range(n), r)]
    out = [(i,) for i in range(n)]
    for entry in spec.explicit:
        seq = _parse_option_id(entry, labels)
        if spec.max_sequence_length is not None and len(seq) > spec.max_sequence_length:
            raise OptionError(f"option {entry!r} is longer than max_sequence_length")
        if seq not in out:
            out.append(seq)
    return out


def _parse_option_id(entry, labels: Sequence[str]) -> tuple[int, ...]:
    if isinstance(entry, str):
        if "-" in entry:
            parts = entry.split("-")
        elif all(len(label) == 1 for label in labels):
            parts = list(entry)
        else:
            parts = [entry]
    else:
        parts = list(entry)
    try:
        return tuple(labels.index(p) for p in parts)
    except ValueError:
        raise OptionError(f"option {entry!r} refers to an unknown primitive option") from None


def option_id(sequence: Sequence[int], labels: Sequence[str]) -> str:
    joiner = "" if all(len(label) == 1 for label in labels) else "-"
    return joiner.join(labels[i] for i in sequence)


def build_combined_options(primitives: Sequence[PrimitiveOption], spec: OptionSetSpec) -> list[CombinedOption]:
    """The option set learned over: every primitive option plus combinations.

    Combinations are checked for chaining: wherever one constituent may
    terminate, the next one must be allowed to start.
    """
    if not primitives:
        raise OptionError("no primitive options")
    labels = [p.id for p in primitives]
    result = []
    for seq in _sequences(len(primitives), spec, labels):
        for first, second in zip(seq, seq[1:]):
            before, after = primitives[first], primitives[second]
            if after.initiation is not None and not before.termination <= after.initiation:
                raise OptionError(
                    f"cannot chain {before.id} into {after.id}: "
                    f"{before.id} may terminate outside {after.id}'s initiation set"
                )
        result.append(CombinedOption(option_id(seq, labels), seq))
    return result


def initiation_of(option: CombinedOption, primitives: Sequence[PrimitiveOption]):
    return primitives[option.sequence[0]].initiation


def termination_of(option: CombinedOption, primitives: Sequence[PrimitiveOption]) -> frozenset[State]:
    return primitives[option.sequence[-1]].termination


def availability(options: Sequence[CombinedOption], primitives: Sequence[PrimitiveOption], env: MdpEnvironment) -> np.ndarray:
    """Boolean ``(num_states, num_options)`` table of where each option may start."""
    table = np.ones((env.num_states, len(options)), dtype=bool)
    for o, option in enumerate(options):
        init = initiation_of(option, primitives)
        if init is not None:
            table[:, o] = False
            for s in init:
                table[env.index(s), o] = True
    return table


@dataclass(frozen=True)
class OptionRun:
    """What one option execution produced.

    ``boundaries[c]`` is the index into ``states`` where constituent ``c``
    handed over (its termination state).
    """

    states: tuple[State, ...]
    actions: tuple[int, ...]
    terminated_normally: bool
    boundaries: tuple[int, ...] = ()

    @property
    def k(self) -> int:
        return len(self.actions)


def execute_option(
    option: CombinedOption,
    s0: State,
    env: MdpEnvironment,
    flat_q: np.ndarray,
    flat_eps: Sequence[float],
    primitives: Sequence[PrimitiveOption],
    explore_rng: np.random.Generator,
    env_rng: np.random.Generator,
    step_cap: int = DEFAULT_STEP_CAP,
) -> OptionRun:
    """Run ``option`` from ``s0`` until its last constituent terminates.

    Each constituent picks actions epsilon-greedily from its own flat table
    (``flat_q[j]``) with its own rate ``flat_eps[j]``. A constituent that
    starts inside its termination set hands over immediately. At most
    ``step_cap`` primitive steps are taken in total; if the cap fires, the
    partial trajectory is returned with ``terminated_normally=False``.
    """
    if step_cap < 1:
        raise OptionError("step_cap must be at least 1")
    s0 = tuple(int(v) for v in s0)
    env.check_state(s0)
    if not primitives[option.sequence[0]].can_start(s0):
        raise OptionError(f"option {option.id} cannot start in state {s0}")
    all_actions = list(range(env.num_actions))
    states = [s0]
    actions: list[int] = []
    boundaries = []
    s = s0
    for j in option.sequence:
        prim = primitives[j]
        taken = 0
        while taken < prim.min_steps or s not in prim.termination:
            if len(actions) >= step_cap:
                return OptionRun(tuple(states), tuple(actions), False, tuple(boundaries))
            a = epsilon_greedy(flat_q[j], env.index(s), all_actions, flat_eps[j], explore_rng)
            s = env.step(s, a, env_rng)
            states.append(s)
            actions.append(a)
            taken += 1
        boundaries.append(len(states) - 1)
    return OptionRun(tuple(states), tuple(actions), True, tuple(boundaries))


def one_step_option(env: MdpEnvironment, action: int) -> tuple[PrimitiveOption, np.ndarray]:
    """A primitive action viewed as an option that terminates everywhere.

    The option takes exactly one step. Returns the option together with a
    flat table whose greedy action is ``action``.
    """
    if not 0 <= action < env.num_actions:
        raise OptionError(f"action index {action} out of range")
    anywhere = Predicate.linear({env.state_variables[0]: 1}, ">", -1)
    prim = PrimitiveOption(env.action_names[action], 0, anywhere, frozenset(env.states()), min_steps=1)
    q = np.zeros((env.num_states, env.num_actions))
    q[:, action] = 1.0
    return prim, q
