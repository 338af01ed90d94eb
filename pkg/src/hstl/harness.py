"""Training, rollout and evaluation driven by a :class:`RunConfig`."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .env import GridWorld, RunStreams
from .learning import EpsilonSchedule, LearningState, epsilon_greedy, greedy_policy, hstl_update, lumped_reward
from .options import (
    CombinedOption,
    OptionSetSpec,
    PrimitiveOption,
    availability,
    build_combined_options,
    build_primitive_options,
    execute_option,
)
from .stl import (
    Formula,
    StlError,
    Trajectory,
    extract_predicates,
    format_stl,
    parse_stl,
    robustness,
    robustness_signal,
    state_robustness,
    strip_outer_always,
    truncate_horizon,
)

log = logging.getLogger(__name__)

ENGINES = ("fast", "reference")


# ---------------------------------------------------------------------------
# Problem assembly


@dataclass
class Problem:
    config: RunConfig
    env: GridWorld
    formula: Formula
    predicates: list[Formula]
    labels: list[str]
    primitives: list[PrimitiveOption]
    options: list[CombinedOption]
    available: np.ndarray

    @property
    def option_ids(self) -> list[str]:
        return [o.id for o in self.options]


def _labels_for(predicates, config: RunConfig, variables) -> list[str]:
    if config.labels is not None:
        if len(config.labels) != len(predicates):
            raise ConfigError(f"labels: expected {len(predicates)} entries, got {len(config.labels)}")
        return [str(label) for label in config.labels]
    by_formula = {}
    for name, text in config.aliases.items():
        try:
            by_formula.setdefault(parse_stl(text, variables, config.aliases), name)
        except StlError:
            continue
    labels = []
    for i, psi in enumerate(predicates):
        name = by_formula.get(psi)
        if name is None:
            labels.append(chr(ord("A") + i) if len(predicates) <= 26 else f"P{i}")
            continue
        for prefix in ("psi_", "psi"):
            if name.startswith(prefix) and len(name) > len(prefix):
                name = name[len(prefix):]
                break
        labels.append(name)
    if len(set(labels)) != len(labels):
        labels = [chr(ord("A") + i) for i in range(len(predicates))]
    return labels


def build_problem(config: RunConfig) -> Problem:
    env = GridWorld(config.width, config.height, config.intent_prob)
    formula = parse_stl(config.formula, env.state_variables, config.aliases)
    predicates = extract_predicates(formula)
    labels = _labels_for(predicates, config, env.state_variables)
    primitives = build_primitive_options(predicates, env, labels)
    spec = OptionSetSpec(config.option_set_mode, config.max_sequence_length, tuple(config.explicit_options))
    options = build_combined_options(primitives, spec)
    return Problem(config, env, formula, predicates, labels, primitives, options, availability(options, primitives, env))


def new_learner(problem: Problem) -> LearningState:
    cfg = problem.config
    labels = problem.labels
    eps0 = cfg.per_flat("eps0_flat", labels)
    decay = cfg.per_flat("decay_flat", labels)
    return LearningState.create(
        n_states=problem.env.num_states,
        n_actions=problem.env.num_actions,
        n_options=len(problem.options),
        flat_alpha=cfg.per_flat("alpha_flat", labels),
        flat_gamma=cfg.per_flat("gamma_flat", labels),
        flat_schedules=[EpsilonSchedule(e, d, cfg.eps_floor, "primitive-steps") for e, d in zip(eps0, decay)],
        option_alpha=cfg.alpha_o,
        option_gamma=cfg.gamma_o,
        option_schedule=EpsilonSchedule(cfg.eps0_o, cfg.decay_o, cfg.eps_floor, "option-choices"),
        q0=cfg.q0,
        discount_exponent=cfg.discount_exponent,
        available=problem.available,
    )


# ---------------------------------------------------------------------------
# Training


@dataclass
class EpisodeLog:
    episode: int
    cumulative_reward: float
    option_counts: dict[str, int]
    steps: int
    eps_options: float
    eps_flat: tuple[float, ...]


@dataclass
class TrainResult:
    problem: Problem
    learner: LearningState
    logs: list[EpisodeLog]
    manifest: dict = field(default_factory=dict)

    def policy(self) -> "Policy":
        return Policy.from_training(self.problem, self.learner)


def train(
    config: RunConfig,
    engine: str = "fast",
    progress: Callable[[EpisodeLog], None] | None = None,
) -> TrainResult:
    """Run ``config.episodes`` episodes of ``option_choices_per_episode`` option choices.

    Both engines consume the seeded random streams identically and produce
    the same tables; ``fast`` runs the inner loop compiled.
    """
    if engine not in ENGINES:
        raise ConfigError(f"engine must be one of {ENGINES}")
    problem = build_problem(config)
    learner = new_learner(problem)
    streams = RunStreams.from_seed(config.seed)
    runner = _FastRunner(problem, learner, streams) if engine == "fast" else _ReferenceRunner(problem, learner, streams)
    logs = []
    for episode in range(config.episodes):
        s0 = problem.env.reset(streams.reset)
        cumulative, counts, steps = runner.episode(s0)
        entry = EpisodeLog(
            episode=episode,
            cumulative_reward=cumulative,
            option_counts=dict(zip(problem.option_ids, (int(c) for c in counts))),
            steps=steps,
            eps_options=learner.option_epsilon(),
            eps_flat=learner.flat_epsilons(),
        )
        logs.append(entry)
        if progress is not None:
            progress(entry)
    manifest = build_manifest(config, engine)
    return TrainResult(problem, learner, logs, manifest)


class _ReferenceRunner:
    def __init__(self, problem: Problem, learner: LearningState, streams: RunStreams):
        self.problem = problem
        self.learner = learner
        self.streams = streams

    def episode(self, s0):
        p, learner, streams = self.problem, self.learner, self.streams

        counts = np.zeros(len(p.options), dtype=np.int64)
        cumulative = 0.0
        episode_steps = 0
        s = s0
        for _ in range(p.config.option_choices_per_episode):
            si = p.env.index(s)
            o = epsilon_greedy(learner.option_q, si, learner.candidates(si), learner.option_epsilon(), streams.explore)
            learner.choices += 1
            counts[o] += 1
            run = execute_option(
                p.options[o],
                s,
                p.env,
                learner.flat_q,
                learner.flat_epsilons(),
                p.primitives,
                streams.explore,
                streams.env,
                p.config.step_cap,
            )
            traj = Trajectory(run.states, p.env.state_variables)

            cumulative += float(lumped_reward(traj, p.formula))
            hstl_update(p.formula, o, traj, run.actions, learner, p.predicates, p.env.index)
            learner.steps += run.k
            episode_steps += run.k
            s = run.states[-1]
        return cumulative, counts, episode_steps


class _UniformBuffer:
    """Pre-drawn uniforms from one generator, consumed strictly in order."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.values = np.empty(0)
        self.pos = 0

    def ensure(self, needed: int) -> None:
        if len(self.values) - self.pos >= needed:
            return
        fresh = self.rng.random(max(needed, 1 << 18))
        self.values = np.concatenate([self.values[self.pos:], fresh])
        self.pos = 0


class _FastRunner:
    def __init__(self, problem: Problem, learner: LearningState, streams: RunStreams):
        from ._kernel import CompiledFormula

        self.problem = p = problem
        self.learner = learner
        cfg = p.config
        env = p.env
        cap = cfg.step_cap
        self.formula = CompiledFormula(p.formula, env, cap + 1)
        n_states = env.num_states
        states = list(env.states())
        self.term = np.zeros((len(p.primitives), n_states), dtype=np.bool_)
        for j, prim in enumerate(p.primitives):
            for s in prim.termination:
                self.term[j, env.index(s)] = True
        self.min_steps = np.array([prim.min_steps for prim in p.primitives], dtype=np.int64)

        self.psi_table = np.array(
            [[float(state_robustness(s, psi, env.state_variables)) for s in states] for psi in p.predicates]
        )
        longest = max(len(o.sequence) for o in p.options)
        self.opt_seq = np.full((len(p.options), longest), -1, dtype=np.int64)
        self.opt_len = np.zeros(len(p.options), dtype=np.int64)
        for i, o in enumerate(p.options):
            self.opt_seq[i, : len(o.sequence)] = o.sequence
            self.opt_len[i] = len(o.sequence)
        self.succ = env.successor_table()
        self.out_actions, self.out_cdf = env.outcome_table()
        self.gamma_pow = np.array([learner.option_gamma**e for e in range(cap + 1)])
        self.flat_alpha = np.array(learner.flat_alpha)
        self.flat_gamma = np.array(learner.flat_gamma)
        scheds = learner.flat_schedules
        self.eps0_f = np.array([s.eps0 for s in scheds])
        self.decay_f = np.array([s.decay for s in scheds])
        self.floor_f = np.array([s.floor for s in scheds])
        self.explore = _UniformBuffer(streams.explore)
        self.noise = _UniformBuffer(streams.env)
        self.traj = np.zeros(cap + 1, dtype=np.int64)
        self.acts = np.zeros(cap + 1, dtype=np.int64)
        self.sig = np.zeros((self.formula.n_nodes, cap + 1))
        self.need_lo = np.zeros(self.formula.n_nodes, dtype=np.int64)
        self.need_hi = np.zeros(self.formula.n_nodes, dtype=np.int64)

    def episode(self, s0):
        from ._kernel import run_episode

        p, learner, f = self.problem, self.learner, self.formula
        n = p.config.option_choices_per_episode
        cap = p.config.step_cap
        self.explore.ensure(2 * n + 2 * n * cap)
        self.noise.ensure(n * cap)
        counts = np.zeros(len(p.options), dtype=np.int64)
        osched = learner.option_schedule
        _, cumulative, episode_steps, steps, choices, pe, pv = run_episode(
            p.env.index(s0), n, cap,
            learner.flat_q, learner.option_q, learner.available,
            self.opt_seq, self.opt_len, self.term, self.min_steps, self.psi_table,
            self.succ, self.out_actions, self.out_cdf,
            f.kind, f.left, f.right, f.leaf, f.lo, f.hi, f.pred_table,
            self.flat_alpha, self.flat_gamma, learner.option_alpha, self.gamma_pow,
            learner.discount_exponent == "total",
            self.eps0_f, self.decay_f, self.floor_f,
            osched.eps0, osched.decay, osched.floor,
            learner.steps, learner.choices,
            self.explore.values, self.explore.pos, self.noise.values, self.noise.pos,
            counts, self.traj, self.acts, self.sig, self.need_lo, self.need_hi,
        )  # fmt: skip
        learner.steps = int(steps)
        learner.choices = int(choices)
        self.explore.pos = int(pe)
        self.noise.pos = int(pv)
        return float(cumulative), counts, int(episode_steps)


def build_manifest(config: RunConfig, engine: str) -> dict:
    import numba

    return {
        "package": "hstl",
        "version": __version__,
        "engine": engine,
        "seed": config.seed,
        "config_sha256": config.digest(),
        "config": config.to_dict(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "numba": numba.__version__,
    }


# ---------------------------------------------------------------------------
# Files


def _fmt(value: float) -> str:
    return repr(float(value))


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def reward_curve_csv(logs: Sequence[EpisodeLog], labels: Sequence[str], option_ids: Sequence[str]) -> str:
    header = ["episode", "cumulative_reward", "eps_options", *[f"eps_flat_{label}" for label in labels], "steps"]
    header += [f"count_{oid}" for oid in option_ids]
    rows = []
    for entry in logs:
        rows.append(
            [entry.episode, _fmt(entry.cumulative_reward), _fmt(entry.eps_options), *map(_fmt, entry.eps_flat), entry.steps]
            + [entry.option_counts[oid] for oid in option_ids]
        )
    return _csv_text(header, rows)


def read_reward_curve(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@dataclass
class Policy:
    """Learned tables plus everything needed to execute them again."""

    meta: dict
    flat_q: np.ndarray
    option_q: np.ndarray

    @classmethod
    def from_training(cls, problem: Problem, learner: LearningState) -> "Policy":
        cfg = problem.config
        meta = {
            "formula": format_stl(problem.formula),
            "formula_text": cfg.formula,
            "aliases": dict(cfg.aliases),
            "variables": list(problem.env.state_variables),
            "actions": list(problem.env.action_names),
            "grid": {"width": cfg.width, "height": cfg.height, "intent_prob": cfg.intent_prob},
            "step_cap": cfg.step_cap,
            "primitives": [
                {
                    "id": prim.id,
                    "predicate": format_stl(prim.predicate),
                    "max_robustness": prim.max_robustness,
                    "termination": sorted([list(s) for s in prim.termination]),
                }
                for prim in problem.primitives
            ],
            "options": [{"id": o.id, "sequence": [problem.labels[i] for i in o.sequence]} for o in problem.options],
        }
        return cls(meta, learner.flat_q.copy(), learner.option_q.copy())

    # -- derived views
    @property
    def env(self) -> GridWorld:
        g = self.meta["grid"]
        return GridWorld(g["width"], g["height"], g["intent_prob"])

    @property
    def labels(self) -> list[str]:
        return [p["id"] for p in self.meta["primitives"]]

    @property
    def option_ids(self) -> list[str]:
        return [o["id"] for o in self.meta["options"]]

    def formula(self) -> Formula:
        return parse_stl(self.meta["formula"], self.meta["variables"])

    def primitives(self) -> list[PrimitiveOption]:
        variables = self.meta["variables"]
        return [
            PrimitiveOption(
                p["id"],
                i,
                parse_stl(p["predicate"], variables),
                frozenset(tuple(s) for s in p["termination"]),
                max_robustness=p["max_robustness"],
            )
            for i, p in enumerate(self.meta["primitives"])
        ]

    def options(self) -> list[CombinedOption]:
        labels = self.labels
        return [CombinedOption(o["id"], tuple(labels.index(x) for x in o["sequence"])) for o in self.meta["options"]]

    # -- files
    def files(self) -> dict[str, str]:
        env = self.env
        states = list(env.states())
        out = {"policy.json": json.dumps(self.meta, indent=2, sort_keys=True) + "\n"}
        for j, label in enumerate(self.labels):
            rows = [
                [*s, env.action_names[a], _fmt(self.flat_q[j, i, a])]
                for i, s in enumerate(states)
                for a in range(env.num_actions)
            ]
            out[f"q_flat_{label}.csv"] = _csv_text([*env.state_variables, "action", "value"], rows)
        rows = [
            [*s, oid, _fmt(self.option_q[i, o])] for i, s in enumerate(states) for o, oid in enumerate(self.option_ids)
        ]
        out["q_options.csv"] = _csv_text([*env.state_variables, "option", "value"], rows)
        mu = greedy_policy(self.option_q)
        flat = [greedy_policy(self.flat_q[j]) for j in range(len(self.labels))]
        rows = [
            [*s, self.option_ids[mu[i]], *[env.action_names[pi[i]] for pi in flat]] for i, s in enumerate(states)
        ]
        out["greedy_policy.csv"] = _csv_text([*env.state_variables, "option", *[f"action_{l}" for l in self.labels]], rows)
        return out

    def export(self, directory: str | Path) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for name, text in self.files().items():
            path = directory / name
            path.write_text(text)
            written.append(path)
        return written

    @classmethod
    def load(cls, directory: str | Path) -> "Policy":
        directory = Path(directory)
        meta = json.loads((directory / "policy.json").read_text())
        g = meta["grid"]
        env = GridWorld(g["width"], g["height"], g["intent_prob"])
        labels = [p["id"] for p in meta["primitives"]]
        option_ids = [o["id"] for o in meta["options"]]
        n_vars = len(meta["variables"])
        flat_q = np.zeros((len(labels), env.num_states, env.num_actions))
        for j, label in enumerate(labels):
            for row in _read_rows(directory / f"q_flat_{label}.csv"):
                s = tuple(int(v) for v in row[:n_vars])
                flat_q[j, env.index(s), env.action_names.index(row[n_vars])] = float(row[n_vars + 1])
        option_q = np.zeros((env.num_states, len(option_ids)))
        for row in _read_rows(directory / "q_options.csv"):
            s = tuple(int(v) for v in row[:n_vars])
            option_q[env.index(s), option_ids.index(row[n_vars])] = float(row[n_vars + 1])
        return cls(meta, flat_q, option_q)


def _read_rows(path: Path) -> list[list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[1:]


def write_run(result: TrainResult, directory: str | Path) -> dict[str, Path]:
    """Write reward curve, policy files and manifest for one training run."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    p = result.problem
    curve = directory / "rewards.csv"
    curve.write_text(reward_curve_csv(result.logs, p.labels, p.option_ids))
    policy_files = result.policy().export(directory)
    manifest = dict(result.manifest)
    manifest["outputs"] = sorted([curve.name, *(f.name for f in policy_files)])
    manifest_path = directory / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return {"rewards": curve, "manifest": manifest_path, **{f.name: f for f in policy_files}}


# ---------------------------------------------------------------------------
# Rollout and evaluation


@dataclass(frozen=True)
class TraceRow:
    t: int
    state: tuple[int, ...]
    option: str
    action: str


def rollout(
    policy: Policy,
    start: Sequence[int] | None = None,
    total_steps: int = 500,
    epsilon: float = 0.0,
    seed: int = 0,
    step_cap: int | None = None,
) -> list[TraceRow]:
    """Follow the learned options policy for ``total_steps`` primitive steps.

    Options are chosen greedily (lowest index on ties) or uniformly at random
    with probability ``epsilon``; flat actions are always greedy. An option
    that would end without moving (started on its own termination set) is
    skipped in favour of the next best one. Row ``t`` holds the state at
    time ``t`` and the action taken there.
    """
    if total_steps < 1:
        raise ValueError("total_steps must be at least 1")
    env = policy.env
    primitives = policy.primitives()
    options = policy.options()
    ids = policy.option_ids
    step_cap = step_cap or policy.meta.get("step_cap", 500)
    streams = RunStreams.from_seed(seed)
    if start is None:
        s = env.reset(streams.reset)
    else:
        s = tuple(int(v) for v in start)
        env.check_state(s)
    flat = [greedy_policy(policy.flat_q[j]) for j in range(len(primitives))]

    rows: list[TraceRow] = []
    while len(rows) < total_steps:
        si = env.index(s)
        order = np.argsort(-policy.option_q[si], kind="stable")
        if streams.explore.random() < epsilon:
            order = list(streams.explore.permutation(len(options)))
        chosen = None
        for o in order:
            pending = _pending_constituents(options[o].sequence, s, primitives)
            if pending:
                chosen = int(o)
                break
        if chosen is None:
            chosen, pending = int(order[0]), [options[int(order[0])].sequence[-1]]
        taken = 0
        for j in pending:
            while s not in primitives[j].termination and len(rows) < total_steps and taken < step_cap:
                a = int(flat[j][env.index(s)])
                rows.append(TraceRow(len(rows), s, ids[chosen], env.action_names[a]))
                s = env.step(s, a, streams.env)
                taken += 1
            if len(rows) >= total_steps or taken >= step_cap:
                break
        if taken == 0:
            # nothing moved: only possible when every option is already satisfied
            j = options[chosen].sequence[0]
            a = int(flat[j][env.index(s)])
            rows.append(TraceRow(len(rows), s, ids[chosen], env.action_names[a]))
            s = env.step(s, a, streams.env)
    return rows


def _pending_constituents(sequence, s, primitives):
    """Constituents still to run from ``s``; empty if the option would not move."""
    for i, j in enumerate(sequence):
        if s not in primitives[j].termination:
            return sequence[i:]
    return []


def trace_csv(rows: Sequence[TraceRow], variables: Sequence[str] = ("x", "y")) -> str:
    return _csv_text(["t", *variables, "option_id", "action"], [[r.t, *r.state, r.option, r.action] for r in rows])


def read_trace(path: str | Path, variables: Sequence[str] = ("x", "y")) -> list[tuple[int, ...]]:
    with open(path, newline="") as fh:
        return [tuple(int(row[v]) for v in variables) for row in csv.DictReader(fh)]


@dataclass
class WindowReport:
    window: int
    skip: int
    starts: list[int]
    robustness: list[float]

    @property
    def fraction_positive(self) -> float:
        if not self.robustness:
            return 0.0
        return sum(r > 0 for r in self.robustness) / len(self.robustness)

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "skip": self.skip,
            "windows": len(self.robustness),
            "fraction_positive": self.fraction_positive,
            "min_robustness": min(self.robustness) if self.robustness else None,
            "max_robustness": max(self.robustness) if self.robustness else None,
        }


def evaluate_spec(
    states: Sequence[Sequence[int]],
    phi: Formula,
    window: int,
    skip: int = 0,
    variables: Sequence[str] = ("x", "y"),
) -> WindowReport:
    """Robustness of ``phi`` (outer unbounded always removed) on every sliding window."""
    if window < 1:
        raise ValueError("window must be at least 1")
    if len(states) < window:
        raise ValueError(f"trace of {len(states)} states is shorter than the window {window}")
    inner = truncate_horizon(strip_outer_always(phi), window)
    signal = robustness_signal(np.asarray(states), inner, variables)
    starts = list(range(skip, len(states) - window + 1))
    # the clipped formula never looks past its window, so the value on
    # states[t : t + window] is the whole-trace signal at t
    return WindowReport(window, skip, starts, [float(signal[t]) for t in starts])


# ---------------------------------------------------------------------------
# Option-set comparison


@dataclass
class Comparison:
    modes: list[str]
    results: list[TrainResult]
    trailing: int

    def curves(self) -> list[list[float]]:
        return [[e.cumulative_reward for e in r.logs] for r in self.results]

    def trailing_means(self) -> list[float]:
        return [float(np.mean(c[-self.trailing :])) for c in self.curves()]

    def relative_improvement(self) -> float:
        """(second - first) / |first| on the trailing-window means."""
        first, second = self.trailing_means()[:2]
        if first == 0:
            return math.copysign(math.inf, second - first) if second != first else 0.0
        return (second - first) / abs(first)

    def to_dict(self) -> dict:
        return {
            "modes": self.modes,
            "trailing_window": self.trailing,
            "trailing_means": dict(zip(self.modes, self.trailing_means())),
            "relative_improvement": self.relative_improvement(),
            "option_counts": {m: len(r.problem.options) for m, r in zip(self.modes, self.results)},
        }

    def curve_csv(self) -> str:
        header = ["episode", *[f"cumulative_reward_{m}" for m in self.modes]]
        rows = [[i, *(_fmt(c[i]) for c in self.curves())] for i in range(len(self.curves()[0]))]
        return _csv_text(header, rows)


def compare_option_sets(
    config: RunConfig,
    modes: Sequence[str] = ("subsets-in-order", "all-permutations"),
    trailing: int = 200,
    engine: str = "fast",
) -> Comparison:
    """Train once per option-set mode with the same seed and budget."""
    results = [train(config.replace(option_set_mode=mode), engine=engine) for mode in modes]
    return Comparison(list(modes), results, min(trailing, config.episodes))
