import csv
import json

import numpy as np
import pytest

from hstl.cli import main
from hstl.config import ConfigError, RunConfig, load_config, save_config
from hstl.env import EnvError
from hstl.harness import (
    Policy,
    build_problem,
    compare_option_sets,
    evaluate_spec,
    read_reward_curve,
    read_trace,
    rollout,
    trace_csv,
    train,
    write_run,
)
from hstl.stl import parse_stl

from conftest import small_config


# -- configuration ---------------------------------------------------------------


def test_default_config_is_the_patrol_experiment():
    cfg = RunConfig()
    problem = build_problem(cfg)
    assert problem.labels == ["A", "B", "C"]
    assert problem.option_ids == ["A", "B", "C", "AB", "AC", "BC", "ABC"]
    assert (cfg.episodes, cfg.option_choices_per_episode, cfg.gamma_o, cfg.alpha_o) == (1200, 200, 0.9, 0.5)
    assert len(build_problem(cfg.replace(option_set_mode="all-permutations")).options) == 15


@pytest.mark.parametrize(
    "changes",
    [
        {"option_choices_per_episode": 0},
        {"episodes": 0},
        {"intent_prob": 1.2},
        {"alpha_flat": {"A": 0.2, "B": 2.0, "C": 0.2}},
        {"eps0_o": 0.05},
        {"option_set_mode": "powerset"},
        {"discount_exponent": "never"},
        {"seed": -1},
    ],
)
def test_invalid_configs_rejected(changes):
    with pytest.raises(ConfigError):
        RunConfig().replace(**changes)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="gama_o"):
        RunConfig.from_dict({"gama_o": 0.9})


def test_per_flat_values():
    cfg = RunConfig(alpha_flat={"A": 0.1, "B": 0.2, "C": 0.3})
    assert cfg.per_flat("alpha_flat", ["A", "B", "C"]) == [0.1, 0.2, 0.3]
    with pytest.raises(ConfigError):
        cfg.per_flat("alpha_flat", ["A", "B"])


def test_config_file_round_trip(tmp_path):
    cfg = small_config(alpha_flat={"A": 0.3, "B": 0.1})
    save_config(cfg, tmp_path / "c.json")
    again = load_config(tmp_path / "c.json")
    assert again == cfg and again.digest() == cfg.digest()
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")


# -- training -----------------------------------------------------------------------


def test_episode_logs(small):
    result = train(small)
    assert [e.episode for e in result.logs] == list(range(small.episodes))
    for entry in result.logs:
        assert sum(entry.option_counts.values()) == small.option_choices_per_episode
        assert 0.1 <= entry.eps_options <= small.eps0_o
    assert sum(e.steps for e in result.logs) == result.learner.steps
    assert result.learner.choices == small.episodes * small.option_choices_per_episode
    assert result.manifest["config_sha256"] == small.digest()
    assert result.manifest["seed"] == small.seed


def test_engines_agree(small):
    fast = train(small, engine="fast")
    ref = train(small, engine="reference")
    assert np.array_equal(fast.learner.flat_q, ref.learner.flat_q)
    assert np.array_equal(fast.learner.option_q, ref.learner.option_q)
    assert [vars(e) for e in fast.logs] == [vars(e) for e in ref.logs]


@pytest.mark.parametrize("exponent", ["remaining", "total"])
def test_engines_agree_on_patrol_grid(exponent):
    cfg = RunConfig(episodes=2, option_choices_per_episode=6, step_cap=30, seed=9, discount_exponent=exponent)
    fast, ref = train(cfg, engine="fast"), train(cfg, engine="reference")
    assert np.array_equal(fast.learner.option_q, ref.learner.option_q)
    assert np.array_equal(fast.learner.flat_q, ref.learner.flat_q)


def test_seed_changes_the_run(small):
    a = train(small)
    b = train(small.replace(seed=small.seed + 1))
    assert [e.cumulative_reward for e in a.logs] != [e.cumulative_reward for e in b.logs]


def test_run_files_are_deterministic(small, tmp_path):
    write_run(train(small), tmp_path / "one")
    write_run(train(small), tmp_path / "two")
    names = sorted(p.name for p in (tmp_path / "one").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "two").iterdir())
    for name in names:
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes(), name


def test_reward_curve_columns(small, tmp_path):
    result = train(small)
    write_run(result, tmp_path)
    rows = read_reward_curve(tmp_path / "rewards.csv")
    assert list(rows[0])[:6] == ["episode", "cumulative_reward", "eps_options", "eps_flat_A", "eps_flat_B", "steps"]
    assert [float(r["cumulative_reward"]) for r in rows] == [e.cumulative_reward for e in result.logs]


def test_policy_round_trip(small, tmp_path):
    policy = train(small).policy()
    policy.export(tmp_path / "a")
    loaded = Policy.load(tmp_path / "a")
    assert np.array_equal(loaded.flat_q, policy.flat_q) and np.array_equal(loaded.option_q, policy.option_q)
    loaded.export(tmp_path / "b")
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    meta = json.loads((tmp_path / "a" / "policy.json").read_text())
    assert [p["termination"] for p in meta["primitives"]] == [[[1, 4]], [[4, 1]]]


def test_q_table_export_format(small, tmp_path):
    policy = train(small).policy()
    policy.export(tmp_path)
    with open(tmp_path / "q_options.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "y", "option", "value"]
    assert len(rows) == 1 + 36 * len(policy.option_ids)
    assert float(rows[1][3]) == policy.option_q[0, 0]


# -- rollout ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_policy():
    return train(small_config(episodes=20)).policy()


def test_rollout_single_step(small_policy):
    rows = rollout(small_policy, (0, 0), total_steps=1)
    assert len(rows) == 1 and rows[0].t == 0 and rows[0].state == (0, 0)


def test_rollout_replay(small_policy):
    a = rollout(small_policy, None, total_steps=60, seed=4)
    b = rollout(small_policy, None, total_steps=60, seed=4)
    assert a == b
    assert [r.t for r in a] == list(range(60))


def test_rollout_consecutive_states(small_policy):
    rows = rollout(small_policy, (5, 5), total_steps=80, epsilon=0.3, seed=1)
    for a, b in zip(rows, rows[1:]):
        assert abs(a.state[0] - b.state[0]) + abs(a.state[1] - b.state[1]) <= 1
    assert {r.option for r in rows} <= set(small_policy.option_ids)


def test_rollout_deterministic_environment(small_policy):
    policy = Policy({**small_policy.meta, "grid": {"width": 6, "height": 6, "intent_prob": 1.0}}, small_policy.flat_q, small_policy.option_q)
    assert rollout(policy, (2, 2), 30, seed=0) == rollout(policy, (2, 2), 30, seed=99)


def test_rollout_errors(small_policy):
    with pytest.raises(EnvError):
        rollout(small_policy, (6, 0), total_steps=5)
    with pytest.raises(ValueError):
        rollout(small_policy, (0, 0), total_steps=0)


def test_trace_file_round_trip(small_policy, tmp_path):
    rows = rollout(small_policy, (3, 3), total_steps=25)
    path = tmp_path / "trace.csv"
    path.write_text(trace_csv(rows))
    assert path.read_text().splitlines()[0] == "t,x,y,option_id,action"
    assert read_trace(path) == [r.state for r in rows]


# -- window evaluation ---------------------------------------------------------------

PATROL = build_problem(RunConfig()).formula


def _line(a, b):
    """Cells from ``a`` to ``b`` (exclusive of ``a``) moving along one axis."""
    (x0, y0), (x1, y1) = a, b
    if x0 == x1:
        step = 1 if y1 > y0 else -1
        return [(x0, y) for y in range(y0 + step, y1 + step, step)]
    step = 1 if x1 > x0 else -1
    return [(x, y0) for x in range(x0 + step, x1 + step, step)]


def _path(*corners):
    cells = [corners[0]]
    for a, b in zip(corners, corners[1:]):
        cells += _line(a, b)
    return cells


def test_trace_inside_one_region_never_satisfies():
    report = evaluate_spec([(6, 12)] * 100, PATROL, window=40)
    assert report.fraction_positive == 0.0
    assert len(report.robustness) == 61


def test_hand_built_window():
    # B's centre, along y=3 into C, up x=11 and left along y=11 into A's edge row
    cells = _path((3, 3), (11, 3), (11, 11), (5, 11))
    cells += [cells[-1]] * (40 - len(cells))
    report = evaluate_spec(cells, PATROL, window=40)
    assert report.robustness == [1.0]
    # the same loop through every region's maximizer scores the regions' common maximum
    cells = _path((3, 3), (11, 3), (11, 12), (6, 12))
    cells += [cells[-1]] * (40 - len(cells))
    assert evaluate_spec(cells, PATROL, window=40).robustness == [2.0]


def test_skip_and_short_trace():
    report = evaluate_spec([(6, 12)] * 50, PATROL, window=40, skip=5)
    assert report.starts == list(range(5, 11))
    with pytest.raises(ValueError):
        evaluate_spec([(0, 0)] * 10, PATROL, window=40)


# -- comparison ----------------------------------------------------------------------------


def test_comparison_arithmetic_from_csv(tmp_path):
    cfg = small_config(episodes=6)
    comparison = compare_option_sets(cfg, trailing=4)
    (tmp_path / "curves.csv").write_text(comparison.curve_csv())
    with open(tmp_path / "curves.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    means = [np.mean([float(r[f"cumulative_reward_{m}"]) for r in rows[-4:]]) for m in comparison.modes]
    assert comparison.trailing_means() == pytest.approx(means)
    assert comparison.relative_improvement() == pytest.approx((means[1] - means[0]) / abs(means[0]))
    assert comparison.to_dict()["option_counts"] == {"subsets-in-order": 3, "all-permutations": 4}


def test_comparing_a_set_with_itself_gives_zero():
    comparison = compare_option_sets(small_config(), modes=["subsets-in-order", "subsets-in-order"], trailing=3)
    assert comparison.relative_improvement() == 0.0


# -- command line ---------------------------------------------------------------------------


def test_cli_train_rollout_eval(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    save_config(small_config(), cfg)
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(run), "--episodes", "3"]) == 0
    assert (run / "manifest.json").exists() and (run / "rewards.csv").exists()
    assert len(read_reward_curve(run / "rewards.csv")) == 3
    assert main(["rollout", "--policy", str(run), "--start", "0,0", "--steps", "60", "--out", str(run)]) == 0
    assert main(["eval", "--policy", str(run), "--trace", str(run / "trace.csv"), "--window", "8"]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["windows"] == 53
    trace = run / "trace.csv"
    assert main(["robustness", "--formula", "F[0,60) x > 2", "--trace", str(trace)]) == 0
    out = json.loads(capsys.readouterr().out)
    states = read_trace(trace)
    assert out["robustness"] == str(max(x for x, _ in states) - 2)


def test_cli_error_categories(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"episodes": 3, "colour": "red"}')
    assert main(["train", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "error[config]" in capsys.readouterr().err
    trace = tmp_path / "t.csv"
    trace.write_text("t,x,y\n0,1,1\n")
    assert main(["robustness", "--formula", "F[0,3 x > 1", "--trace", str(trace)]) == 3
    assert "error[formula]" in capsys.readouterr().err
    assert main(["robustness", "--formula", "x > 1", "--trace", str(tmp_path / "missing.csv")]) == 4
    assert "error[io]" in capsys.readouterr().err


def test_patrol_formula_parses_from_config():
    phi = parse_stl(RunConfig().formula, aliases=RunConfig().aliases)
    assert phi == PATROL


def test_shipped_config_is_the_default():
    from pathlib import Path

    assert load_config(Path(__file__).parents[1] / "configs" / "patrol.json") == RunConfig()
