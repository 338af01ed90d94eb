import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from hstl.learning import (
    EpsilonSchedule,
    LearningError,
    LearningState,
    epsilon_greedy,
    flat_q_update,
    greedy_policy,
    hstl_update,
    lumped_reward,
    new_q_table,
    option_q_update,
)
from hstl.stl import Always, Eventually, Trajectory, horizon, parse_stl, robustness

import oracles

PSI = parse_stl("(x > 10) & (x < 14) & (y > 6) & (y < 10)")
WORKED = Trajectory.of([(9, 7), (10, 7), (11, 7), (11, 8)])


# -- flat updates ---------------------------------------------------------------


def test_full_overwrite():
    q = new_q_table(3, 2)
    assert flat_q_update(q, 0, 1, 2, 5.0, alpha=1.0, gamma=0.0) == 5.0
    assert q[0, 1] == 5.0 and np.count_nonzero(q) == 1


def test_zero_learning_rate_changes_nothing():
    q = np.arange(6.0).reshape(3, 2)
    before = q.copy()
    flat_q_update(q, 1, 0, 2, 100.0, alpha=0.0, gamma=0.9)
    assert np.array_equal(q, before)


def test_single_update_arithmetic():
    q = np.array([[1.0, 2.0], [4.0, -3.0]])
    flat_q_update(q, 0, 1, 1, 0.5, alpha=0.25, gamma=0.5)
    assert q[0, 1] == pytest.approx(2.0 + 0.25 * (0.5 + 0.5 * 4.0 - 2.0))
    assert q[0, 0] == 1.0 and list(q[1]) == [4.0, -3.0]


def test_chain_converges_to_value_iteration():
    P, R = oracles.chain_mdp()
    q_star = oracles.q_value_iteration(P, R, 0.9)
    q = np.zeros((3, 2))
    for _ in range(10_000):
        for s in range(3):
            for a in range(2):
                s2 = int(np.argmax(P[s, a]))
                flat_q_update(q, s, a, s2, R[s, a, s2], 0.2, 0.9)
    assert np.max(np.abs(q - q_star)) < 1e-6
    assert np.array_equal(greedy_policy(q), greedy_policy(q_star))
    assert list(greedy_policy(q)) == [1, 1, 1]


@pytest.mark.parametrize("name", sorted(oracles.TEST_MDPS))
def test_sweeps_match_value_iteration(name):
    build, gamma = oracles.TEST_MDPS[name]
    P, R = build()
    q_star = oracles.q_value_iteration(P, R, gamma)
    q = oracles.sweep_train(flat_q_update, P, R, gamma, alpha=0.5, sweeps=2000)
    assert np.max(np.abs(q - q_star)) < 1e-3
    assert np.array_equal(greedy_policy(q), greedy_policy(q_star))


def test_epsilon_greedy_exploration_converges():
    """Sampled experience under a fixed exploration rate on a deterministic MDP."""
    P, R = oracles.ring_mdp()
    q_star = oracles.q_value_iteration(P, R, 0.9)
    rng = np.random.default_rng(0)
    q = np.zeros((5, 3))
    s = 0
    for _ in range(60_000):
        a = epsilon_greedy(q, s, [0, 1, 2], 0.5, rng)
        s2 = int(np.argmax(P[s, a]))
        flat_q_update(q, s, a, s2, R[s, a, s2], 0.3, 0.9)
        s = s2
    assert np.max(np.abs(q - q_star)) < 1e-3


# -- option updates ---------------------------------------------------------------


def test_option_update_with_unit_duration_is_flat_update():
    q1 = np.array([[0.5, 1.0], [2.0, -1.0]])
    q2 = q1.copy()
    option_q_update(q1, 0, 1, 1, 0.3, 1, 0.4, 0.9)
    flat_q_update(q2, 0, 1, 1, 0.3, 0.4, 0.9)
    assert np.array_equal(q1, q2)


def test_undiscounted_option_update_ignores_duration():
    results = []
    for k in (1, 5, 40):
        q = np.array([[0.0, 0.0], [3.0, 1.0]])
        results.append(option_q_update(q, 0, 0, 1, 1.0, k, 0.5, 1.0))
    assert results == [2.0, 2.0, 2.0]


def test_option_update_respects_candidates():
    q = np.array([[0.0, 0.0, 0.0], [1.0, 9.0, 2.0]])
    option_q_update(q, 0, 0, 1, 0.0, 1, 1.0, 1.0, candidates=[0, 2])
    assert q[0, 0] == 2.0


def test_two_option_smdp_fixed_point():
    outcomes = {
        0: {0: (1.0, 3, 1), 1: (-0.5, 1, 0)},
        1: {0: (0.25, 2, 0), 1: (2.0, 7, 1)},
    }
    gamma = 0.9
    oracle = oracles.smdp_value_iteration(outcomes, 2, 2, gamma)
    q = np.zeros((2, 2))
    for _ in range(5000):
        for s in range(2):
            for o in range(2):
                r, k, s2 = outcomes[s][o]
                option_q_update(q, s, o, s2, r, k, 0.5, gamma)
    assert np.max(np.abs(q - oracle)) < 1e-6


# -- lumped reward ----------------------------------------------------------------


def test_lumped_reward_examples():
    assert lumped_reward(WORKED, Always(0, 4, PSI)) == -1
    assert lumped_reward(Trajectory.of([(12, 8)]), Eventually(0, 40, PSI)) == 2
    assert lumped_reward(Trajectory.of([(9, 7)]), Eventually(0, 40, PSI)) == -1


@given(
    st.integers(0, 2**32).map(lambda seed: oracles.random_formula(random.Random(seed), 3, 4)),
    st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8)), min_size=5, max_size=8).map(Trajectory.of),
)
def test_lumped_reward_without_truncation_is_plain_robustness(phi, traj):
    assert horizon(phi) <= len(traj) - 1
    assert lumped_reward(traj, phi) == robustness(traj, phi, 0)


# -- HSTL update --------------------------------------------------------------------


def _learner(n_flat=2, n_states=25, n_options=2, alpha=1.0, gamma=0.0, alpha_o=1.0, gamma_o=0.0, exponent="remaining"):
    sched = EpsilonSchedule(0.5, 0.0)
    return LearningState.create(
        n_states=n_states,
        n_actions=4,
        n_options=n_options,
        flat_alpha=[alpha] * n_flat,
        flat_gamma=[gamma] * n_flat,
        flat_schedules=[sched] * n_flat,
        option_alpha=alpha_o,
        option_gamma=gamma_o,
        option_schedule=sched,
        discount_exponent=exponent,
    )


PREDICATES = [parse_stl("x > 2"), parse_stl("y < 1")]
PHI = parse_stl("F[0,3)(x > 2)")
WALK = Trajectory.of([(0, 0), (1, 0), (2, 0), (3, 0), (3, 1)])
WALK_ACTIONS = [3, 3, 3, 0]


def index(s):
    return s[0] * 5 + s[1]


def test_hstl_update_hand_unrolled():
    learner = hstl_update(PHI, 1, WALK, WALK_ACTIONS, _learner(), PREDICATES, index)
    # flat rewards are the successor's robustness: x - 2 and 1 - y
    for i, (s, a) in enumerate(zip(WALK.states, WALK_ACTIONS)):
        nxt = WALK.states[i + 1]
        assert learner.flat_q[0, index(s), a] == nxt[0] - 2
        assert learner.flat_q[1, index(s), a] == 1 - nxt[1]
    # suffix i sees F[0,3) clipped to its length: max(x - 2) over its first three states
    expected = {(0, 0): 0, (1, 0): 1, (2, 0): 1, (3, 0): 1}
    for s, value in expected.items():
        assert learner.option_q[index(s), 1] == value
    assert np.count_nonzero(learner.flat_q[0]) == 3  # one reward happens to be 0
    assert np.count_nonzero(learner.option_q[:, 0]) == 0


@pytest.mark.parametrize("exponent, powers", [("remaining", [4, 3, 2, 1]), ("total", [4, 4, 4, 4])])
def test_hstl_update_discount_exponent(exponent, powers):
    learner = _learner(gamma_o=0.5, exponent=exponent)
    learner.option_q[index((3, 1))] = [2.0, 8.0]
    hstl_update(PHI, 1, WALK, WALK_ACTIONS, learner, PREDICATES, index)
    rewards = [0, 1, 1, 1]
    for s, r, k in zip(WALK.states, rewards, powers):
        assert learner.option_q[index(s), 1] == r + 0.5**k * 8.0


def test_hstl_update_counts():
    learner = _learner(alpha=0.5, gamma=0.5, alpha_o=0.5, gamma_o=0.5)
    learner.flat_q += 0.25
    learner.option_q += 0.25
    before_flat, before_opt = learner.flat_q.copy(), learner.option_q.copy()
    hstl_update(PHI, 0, WALK, WALK_ACTIONS, learner, PREDICATES, index)
    for j in range(2):
        assert np.count_nonzero(learner.flat_q[j] != before_flat[j]) == len(WALK_ACTIONS)
    assert np.count_nonzero(learner.option_q != before_opt) == 4


def test_hstl_update_single_step():
    traj = Trajectory.of([(2, 0), (3, 0)])
    learner = hstl_update(PHI, 0, traj, [3], _learner(), PREDICATES, index)
    assert np.count_nonzero(learner.flat_q[0]) == 1 and np.count_nonzero(learner.flat_q[1]) == 1
    assert np.count_nonzero(learner.option_q) == 1
    assert learner.option_q[index((2, 0)), 0] == 1


def test_hstl_update_zero_length_execution():
    learner = _learner(gamma_o=0.5)
    learner.option_q[index((3, 0))] = [4.0, 0.0]
    hstl_update(PHI, 0, Trajectory.of([(3, 0)]), [], learner, PREDICATES, index)
    assert learner.option_q[index((3, 0)), 0] == 1 + 4.0
    assert not learner.flat_q.any()


def test_hstl_update_length_mismatch():
    with pytest.raises(LearningError):
        hstl_update(PHI, 0, WALK, WALK_ACTIONS[:2], _learner(), PREDICATES, index)


# -- exploration ----------------------------------------------------------------------


def test_greedy_choice_without_exploration():
    q = np.array([[0.0, 3.0, 1.0]])
    rng = np.random.default_rng(0)
    assert {epsilon_greedy(q, 0, [0, 1, 2], 0.0, rng) for _ in range(100)} == {1}
    assert {epsilon_greedy(q, 0, [0, 2], 0.0, rng) for _ in range(100)} == {2}


def test_full_exploration_is_uniform():
    q = np.array([[5.0, 0.0, 0.0, 0.0]])
    rng = np.random.default_rng(1)
    n = 100_000
    picks = np.bincount([epsilon_greedy(q, 0, [0, 1, 2, 3], 1.0, rng) for _ in range(n)], minlength=4)
    assert np.all(np.abs(picks / n - 0.25) < 0.01)


def test_ties_are_broken_fairly():
    q = np.array([[1.0, 2.0, 2.0]])
    rng = np.random.default_rng(2)
    n = 100_000
    picks = np.bincount([epsilon_greedy(q, 0, [0, 1, 2], 0.0, rng) for _ in range(n)], minlength=3)
    assert picks[0] == 0
    assert abs(picks[1] / n - 0.5) < 0.01


def test_epsilon_greedy_consumes_two_uniforms():
    a, b = np.random.default_rng(3), np.random.default_rng(3)
    epsilon_greedy(np.zeros((1, 4)), 0, [0, 1, 2, 3], 0.3, a)
    b.random(2)
    assert a.random() == b.random()


def test_epsilon_greedy_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(LearningError):
        epsilon_greedy(np.zeros((1, 2)), 0, [], 0.1, rng)
    with pytest.raises(LearningError):
        epsilon_greedy(np.zeros((1, 2)), 0, [0], 1.5, rng)


@given(st.floats(0.1, 1.0), st.floats(0, 1e-2), st.lists(st.integers(0, 10**6), min_size=2, max_size=20))
def test_schedule_is_non_increasing_with_floor(eps0, decay, ticks):
    sched = EpsilonSchedule(eps0, decay, floor=0.1)
    values = [sched(t) for t in sorted(ticks)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert min(values) >= 0.1
    assert sched(0) == eps0


def test_schedule_values():
    sched = EpsilonSchedule(0.8, 1e-4)
    assert sched(1000) == pytest.approx(0.7)
    assert sched(10**6) == 0.1


def test_schedule_validation():
    with pytest.raises(LearningError):
        EpsilonSchedule(0.05, 0.0, floor=0.1)
    with pytest.raises(LearningError):
        EpsilonSchedule(0.5, -1.0)
    with pytest.raises(LearningError):
        EpsilonSchedule(0.5, 0.0, tick_source="wall-clock")


# -- policy extraction ---------------------------------------------------------------


def test_greedy_policy_examples():
    q = np.zeros((3, 4))
    q[0, 2] = q[1, 0] = q[2, 3] = 1.0
    assert list(greedy_policy(q)) == [2, 0, 3]
    assert list(greedy_policy(np.full((4, 3), 7.0))) == [0, 0, 0, 0]


@given(
    hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 5)), elements=st.floats(-100, 100)),
    st.floats(1e-3, 1e3),
)
def test_greedy_policy_scale_invariance(q, scale):
    # scaling can merge nearly equal entries after rounding, so scale exact powers of two
    factor = 2.0 ** round(np.log2(scale))
    assert np.array_equal(greedy_policy(q), greedy_policy(q * factor))


def test_learning_state_validation():
    with pytest.raises(LearningError):
        _learner(alpha=1.5)
    with pytest.raises(LearningError):
        _learner(exponent="sometimes")
