import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autoscope.agent import (
    CuriosityModel,
    SoftmaxPolicy,
    TabularEnv,
    TipEnvConfig,
    bellman_residual,
    curiosity_trace,
    evaluate_returns,
    greedy_matrix,
    greedy_policy,
    intrinsic_reward,
    policy_evaluation,
    policy_evaluation_iterative,
    random_policy,
    rollout,
    surrogate_grad,
    surrogate_loss,
    tip_env,
    train_double_q,
    train_reinforce,
    uniform_policy,
    value_iteration,
    weighted_batch,
    write_env,
)

from oracles import policy_value_mc


def chain_env():
    """State 0 --advance(r=1)--> 1 (terminal); 'stay' keeps state 0 with r=0."""
    P = np.zeros((2, 2, 2))
    P[0, 0, 1] = 1.0
    P[0, 1, 0] = 1.0
    P[1, :, 1] = 1.0
    R = np.zeros((2, 2, 2))
    R[0, 0, 1] = 1.0
    return TabularEnv(P, R, np.array([False, True]), np.array([1.0, 0.0]), max_steps=10)


def self_loop_env(max_steps=200):
    P = np.ones((1, 1, 1))
    return TabularEnv(P, np.ones((1, 1, 1)), np.array([False]), np.array([1.0]), max_steps=max_steps)


def bandit_env():
    """One decision: arm 0 pays 1, arm 1 pays 0, then the episode ends."""
    P = np.zeros((2, 2, 2))
    P[0, :, 1] = 1.0
    P[1, :, 1] = 1.0
    R = np.zeros((2, 2, 2))
    R[0, 0, 1] = 1.0
    return TabularEnv(P, R, np.array([False, True]), np.array([1.0, 0.0]), max_steps=1)


def random_mdp(seed, n_states=5, n_actions=3):
    rng = np.random.default_rng(seed)
    P = rng.random((n_states, n_actions, n_states)) + 0.05
    P /= P.sum(axis=2, keepdims=True)
    R = rng.normal(size=P.shape)
    terminal = np.zeros(n_states, dtype=bool)
    terminal[-1] = True
    start = np.zeros(n_states)
    start[0] = 1.0
    return TabularEnv(P, R, terminal, start, max_steps=30)


# --- environments -------------------------------------------------------------


class TestTabularEnv:
    def test_rejects_unnormalized_rows(self):
        P = np.full((2, 1, 2), 0.6)
        with pytest.raises(ValueError):
            TabularEnv(P, np.zeros_like(P), np.zeros(2, bool), np.array([1.0, 0.0]))

    def test_rejects_nonfinite_reward(self):
        P = np.ones((1, 1, 1))
        with pytest.raises(ValueError):
            TabularEnv(P, np.full((1, 1, 1), np.inf), np.zeros(1, bool), np.ones(1))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            TabularEnv(np.ones((2, 1, 1)), np.zeros((2, 1, 1)), np.zeros(2, bool), np.array([1.0, 0.0]))


class TestTipEnv:
    def test_rows_sum_to_one(self):
        env = tip_env()
        np.testing.assert_allclose(env.transition.sum(axis=2), 1.0, atol=1e-9, rtol=0)

    def test_shape_and_names(self):
        env = tip_env()
        assert (env.n_states, env.n_actions) == (6, 4)
        assert env.action_names == ("soft_pulse", "hard_pulse", "gentle_crash", "scan_anneal")
        assert env.max_steps == 50

    def test_good_tip_is_terminal(self):
        env = tip_env()
        rng = np.random.default_rng(0)
        for a in range(env.n_actions):
            assert env.step(5, a, rng) == (5, 0.0, True)
        assert env.is_terminal(0)

    def test_reward_constants(self):
        env = tip_env()
        # from quality 3, soft_pulse reaches 4 (-1), and hard_pulse reaches 5 (-1 + 10)
        assert env.reward[3, 0, 4] == -1.0
        assert env.reward[3, 1, 5] == 9.0
        assert env.reward[3, 1, 0] == -11.0

    def test_hard_actions_riskier(self):
        env = tip_env()
        soft, hard = env.transition[3, 0, 0], env.transition[3, 1, 0]
        assert hard > soft

    def test_uniform_policy_exact_matches_iterative(self):
        env = tip_env()
        pi = uniform_policy(env)
        exact = policy_evaluation(env, pi, 0.95)
        it = policy_evaluation_iterative(env, pi, 0.95)
        np.testing.assert_allclose(exact, it, atol=1e-6)

    def test_uniform_policy_exact_matches_monte_carlo(self):
        env = tip_env()
        pi = uniform_policy(env)
        v = policy_evaluation(env, pi, 0.95)
        exact_start = float(env.start_dist @ v)
        mc = policy_value_mc(env, pi, 0.95, 20000, seed=11)
        # truncation at 50 steps discounts by 0.95**50 < 0.08; the MC error dominates
        assert abs(mc - exact_start) < 0.25

    def test_seed_does_not_change_tables(self):
        a, b = tip_env(seed=0), tip_env(seed=9)
        np.testing.assert_array_equal(a.transition, b.transition)

    def test_custom_start_states(self):
        env = tip_env(TipEnvConfig(start_states=(1,)))
        assert env.reset(np.random.default_rng(0)) == 1


def _write_mc(goal, initial, bias, dose, coercive, sharpness, n, gamma, seed, max_steps=100):
    """Plain re-simulation of the writing task under a uniform-random policy."""
    rng = np.random.default_rng(seed)
    p_flip = 1.0 / (1.0 + math.exp(-sharpness * (abs(bias) * dose - coercive)))
    goal = np.asarray(goal)
    h, w = goal.shape
    out = np.empty(n)
    for i in range(n):
        pat = np.array(initial).copy()
        r = c = 0
        g, disc = 0.0, 1.0
        for _ in range(max_steps):
            before = int((pat != goal).sum())
            if before == 0:
                break
            a = int(rng.integers(6))
            if a < 4:
                dr, dc = [(-1, 0), (1, 0), (0, 1), (0, -1)][a]
                r, c = min(max(r + dr, 0), h - 1), min(max(c + dc, 0), w - 1)
            elif rng.random() < p_flip:
                pat[r, c] = 1 if a == 4 else 0
            g += disc * (before - int((pat != goal).sum()) - 0.1)
            disc *= gamma
        out[i] = g
    return out


class TestWriteEnv:
    GOAL = [[1, 0], [0, 1]]

    def test_already_at_goal(self):
        env = write_env(self.GOAL, initial_pattern=self.GOAL)
        rng = np.random.default_rng(0)
        s = env.reset(rng)
        assert env.is_terminal(s)
        traj = rollout(env, random_policy(env), rng, 0.99)
        assert traj.steps == [] and traj.return_disc == 0.0

    def test_single_corrective_pulse(self):
        initial = [[0, 0], [0, 1]]
        env = write_env(self.GOAL, {"bias": 50.0, "flip_sharpness": 50.0}, initial_pattern=initial)
        s = env.reset()
        s2, r, done = env.step(s, 4, np.random.default_rng(0))
        assert done
        assert r == pytest.approx(0.9)
        assert env.hamming(s2) == 0

    def test_wrong_polarity_pulse_costs_only_step(self):
        initial = [[0, 0], [0, 1]]
        env = write_env(self.GOAL, {"bias": 50.0, "flip_sharpness": 50.0}, initial_pattern=initial)
        s2, r, done = env.step(env.reset(), 5, np.random.default_rng(0))
        assert not done and r == pytest.approx(-0.1)

    def test_moves_clip_at_edges(self):
        env = write_env(self.GOAL, initial_pattern=[[0, 0], [0, 0]])
        s = env.reset()
        s2, r, _ = env.step(s, 0, np.random.default_rng(0))  # north from the top row
        assert s2 == s and r == pytest.approx(-0.1)
        s3, _, _ = env.step(s, 2, np.random.default_rng(0))
        assert env.decode(s3)[0] == 1

    def test_encode_decode_roundtrip(self):
        env = write_env([[0] * 3] * 3, seed=4)
        pat = np.array([[1, 0, 1], [0, 0, 1], [1, 1, 0]])
        cell, back = env.decode(env.encode(7, pat))
        assert cell == 7
        np.testing.assert_array_equal(back, pat)

    def test_grid_too_large(self):
        with pytest.raises(ValueError):
            write_env(np.zeros((6, 2), dtype=int))

    def test_random_policy_matches_independent_simulation(self):
        initial = [[0, 1], [1, 1]]
        env = write_env(self.GOAL, initial_pattern=initial)
        ours = evaluate_returns(env, random_policy(env), 1000, 0.99, seed=3)
        ref = _write_mc(self.GOAL, initial, 5.0, 1.0, 2.0, 4.0, 1000, 0.99, seed=12345)
        sigma = math.sqrt(ours.var(ddof=1) / len(ours) + ref.var(ddof=1) / len(ref))
        assert abs(ours.mean() - ref.mean()) < 3 * sigma


# --- double Q-learning ----------------------------------------------------------


@pytest.fixture(scope="module")
def trained_tip():
    env = tip_env()
    tables, _ = train_double_q(env, gamma=0.95, lr=0.1, n_episodes=3000, seed=0)
    return env, tables


class TestDoubleQ:
    def test_chain(self):
        tables, _ = train_double_q(chain_env(), gamma=0.5, lr=0.1, n_episodes=500, seed=0)
        assert tables.mean[0, 0] == pytest.approx(1.0, abs=1e-2)
        assert tables.greedy(0) == 0

    def test_self_loop_geometric_series(self):
        tables, _ = train_double_q(self_loop_env(), gamma=0.9, lr=0.1, n_episodes=500, seed=0)
        assert tables.mean[0, 0] == pytest.approx(10.0, rel=0.02)

    def test_invalid_hyperparameters(self):
        with pytest.raises(ValueError):
            train_double_q(chain_env(), gamma=1.0)
        with pytest.raises(ValueError):
            train_double_q(chain_env(), lr=0.0)
        with pytest.raises(ValueError):
            train_double_q(chain_env(), lr=1.5)

    def test_curve_rows_and_epsilon_schedule(self):
        _, curve = train_double_q(chain_env(), n_episodes=100, seed=1)
        assert [r["episode"] for r in curve] == list(range(100))
        eps = [r["epsilon"] for r in curve]
        assert eps[0] == 1.0
        assert eps[-1] == pytest.approx(0.05)
        assert all(a >= b for a, b in zip(eps, eps[1:]))

    def test_deterministic(self):
        a, ca = train_double_q(tip_env(), n_episodes=200, seed=5)
        b, cb = train_double_q(tip_env(), n_episodes=200, seed=5)
        np.testing.assert_array_equal(a.q_a, b.q_a)
        np.testing.assert_array_equal(a.q_b, b.q_b)
        assert ca == cb

    def test_tables_within_bound(self, trained_tip):
        _, tables = trained_tip
        bound = 11.0 / (1 - 0.95) + 1e-6
        for q in (tables.q_a, tables.q_b):
            assert np.all(np.abs(q) <= bound)

    def test_greedy_beats_random(self, trained_tip):
        env, tables = trained_tip
        random_exact = float(env.start_dist @ policy_evaluation(env, uniform_policy(env), 0.95))
        greedy = evaluate_returns(env, greedy_policy(tables.combined), 1000, 0.95, seed=99).mean()
        assert random_exact > 0
        assert greedy >= 1.2 * random_exact

    def test_optimal_value_bounds_greedy(self, trained_tip):
        env, tables = trained_tip
        v_star = value_iteration(env, 0.95)
        v_greedy = policy_evaluation(env, greedy_matrix(tables.combined), 0.95)
        assert np.all(v_star >= v_greedy - 1e-9)


# --- policy gradient --------------------------------------------------------------


class TestSoftmaxPolicy:
    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 50))
    def test_normalized(self, seed, scale):
        rng = np.random.default_rng(seed)
        pol = SoftmaxPolicy.tabular(4, 3)
        pol.theta = scale * rng.normal(size=(4, 3))
        for s in range(4):
            assert abs(pol.probs(s).sum() - 1.0) <= 1e-9
            assert np.all(pol.probs(s) >= 0)
        np.testing.assert_allclose(np.exp([pol.log_prob(0, a) for a in range(3)]), pol.probs(0))

    def test_uniform_at_zero(self):
        np.testing.assert_allclose(SoftmaxPolicy.tabular(2, 4).matrix(2), 0.25)


def _frozen_batch(seed, n=20):
    rng = np.random.default_rng(seed)
    return [(int(rng.integers(3)), int(rng.integers(4)), float(rng.normal())) for _ in range(n)]


class TestReinforce:
    def test_bandit_learns_best_arm(self):
        env = bandit_env()
        pol, curve = train_reinforce(env, SoftmaxPolicy.tabular(2, 2), gamma=0.99, lr=0.1,
                                     n_batches=200, batch_size=32, seed=0)
        assert pol.probs(0)[0] >= 0.95
        assert len(curve) == 200

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        pol = SoftmaxPolicy.tabular(3, 4)
        theta = rng.normal(size=(3, 4))
        batch = _frozen_batch(seed)
        g = surrogate_grad(pol, theta, batch)
        h = 1e-5
        fd = np.zeros_like(theta)
        for idx in np.ndindex(theta.shape):
            tp, tm = theta.copy(), theta.copy()
            tp[idx] += h
            tm[idx] -= h
            fd[idx] = (surrogate_loss(pol, tp, batch) - surrogate_loss(pol, tm, batch)) / (2 * h)
        rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-8)
        # coordinates with a vanishing gradient are compared absolutely
        ok = (rel <= 1e-4) | (np.abs(g - fd) <= 1e-9)
        assert ok.all()

    def test_mean_baseline_reduces_variance(self):
        env = bandit_env()
        pol = SoftmaxPolicy.tabular(2, 2)
        rng = np.random.default_rng(0)
        grads = {"none": [], "mean": []}
        for _ in range(100):
            trajs = [rollout(env, pol.sample, rng, 0.99) for _ in range(32)]
            for b in grads:
                grads[b].append(surrogate_grad(pol, pol.theta, weighted_batch(trajs, b)).ravel())
        var = {b: np.var(np.array(g), axis=0).sum() for b, g in grads.items()}
        assert var["mean"] < var["none"]

    def test_reward_to_go_weights(self):
        env = chain_env()
        traj = rollout(env, lambda s, rng: 0, np.random.default_rng(0), 0.5)
        batch = weighted_batch([traj])
        assert batch == [(0, 0, 1.0)]

    def test_value_baseline_needs_values(self):
        traj = rollout(chain_env(), lambda s, rng: 0, np.random.default_rng(0), 0.5)
        vals = np.array([0.25, 0.0])
        assert weighted_batch([traj], "value", vals) == [(0, 0, 0.75)]
        with pytest.raises(ValueError):
            weighted_batch([traj], "median")

    def test_value_baseline_training_runs(self):
        pol, curve = train_reinforce(bandit_env(), SoftmaxPolicy.tabular(2, 2), n_batches=50,
                                     baseline="value", seed=2)
        assert pol.probs(0)[0] > 0.5
        assert set(curve[0]) == {"batch", "mean_return", "grad_norm"}

    def test_invalid_hyperparameters(self):
        with pytest.raises(ValueError):
            train_reinforce(bandit_env(), SoftmaxPolicy.tabular(2, 2), lr=-1.0)

    def test_nonfinite_gradient_aborts(self):
        env = bandit_env()
        env.reward[0, :, 1] = 1e308
        pol = SoftmaxPolicy.tabular(2, 2)
        with pytest.raises(FloatingPointError):
            with np.errstate(over="ignore", invalid="ignore"):
                train_reinforce(env, pol, lr=1e10, n_batches=5, batch_size=32, seed=0)

    def test_deterministic(self):
        a, ca = train_reinforce(tip_env(), SoftmaxPolicy.tabular(6, 4), n_batches=20, seed=4)
        b, cb = train_reinforce(tip_env(), SoftmaxPolicy.tabular(6, 4), n_batches=20, seed=4)
        np.testing.assert_array_equal(a.theta, b.theta)
        assert ca == cb


# --- intrinsic rewards --------------------------------------------------------------


class TestIntrinsic:
    def test_perfect_model_has_no_surprise(self):
        m = CuriosityModel(3, 2, alpha=1e-12)
        for _ in range(10):
            m.update(0, 1, 2)
        assert intrinsic_reward(m, 0, 1, 2) == pytest.approx(0.0, abs=1e-9)

    def test_uniform_over_four(self):
        m = CuriosityModel(4, 1, alpha=1.0)
        assert intrinsic_reward(m, 0, 0, 3) == pytest.approx(math.log(4))

    @settings(max_examples=30)
    @given(st.integers(1, 5), st.integers(0, 2**32 - 1))
    def test_dynamics_normalized(self, n_updates, seed):
        rng = np.random.default_rng(seed)
        m = CuriosityModel(4, 3, alpha=0.5)
        for _ in range(n_updates):
            m.update(*rng.integers(0, [4, 3, 4]))
        np.testing.assert_allclose(m.dynamics(0).sum(axis=-1), 1.0)
        for s in range(4):
            for a in range(3):
                assert m.dynamics(s, a).sum() == pytest.approx(1.0, abs=1e-12)

    def test_empowerment_zero_for_identical_actions(self):
        m = CuriosityModel(3, 2)
        for a in range(2):
            m.update(0, a, 1)
            m.update(0, a, 2)
        pi = np.full((3, 2), 0.5)
        assert intrinsic_reward(m, 0, 0, 1, "empowerment", pi) == pytest.approx(0.0, abs=1e-12)

    def test_empowerment_positive_for_distinct_actions(self):
        m = CuriosityModel(3, 2, alpha=0.1)
        for _ in range(5):
            m.update(0, 0, 1)
            m.update(0, 1, 2)
        pol = SoftmaxPolicy.tabular(3, 2)
        assert intrinsic_reward(m, 0, 0, 1, "empowerment", pol) > 0.1

    def test_empowerment_requires_policy(self):
        with pytest.raises(ValueError):
            intrinsic_reward(CuriosityModel(2, 2), 0, 0, 1, "empowerment")

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            intrinsic_reward(CuriosityModel(2, 2), 0, 0, 1, "boredom")

    def test_alpha_must_be_positive(self):
        with pytest.raises(ValueError):
            CuriosityModel(2, 2, alpha=0.0)

    def test_curiosity_decreases_over_training(self):
        env = deterministic_grid_env()
        first, last = [], []
        for seed in range(20):
            trace = curiosity_trace(env, 800, seed=seed)
            q = len(trace) // 4
            first.append(trace[:q].mean())
            last.append(trace[-q:].mean())
        assert np.median(last) < np.median(first)


def deterministic_grid_env():
    """Five-state ring with left/right moves; nothing is terminal."""
    n = 5
    P = np.zeros((n, 2, n))
    for s in range(n):
        P[s, 0, (s - 1) % n] = 1.0
        P[s, 1, (s + 1) % n] = 1.0
    start = np.zeros(n)
    start[0] = 1.0
    return TabularEnv(P, np.zeros_like(P), np.zeros(n, bool), start, max_steps=40)


# --- dynamic programming ----------------------------------------------------------


class TestValueIteration:
    def test_absorbing_state(self):
        env = TabularEnv(np.ones((1, 1, 1)), np.zeros((1, 1, 1)), np.array([True]), np.ones(1))
        np.testing.assert_array_equal(value_iteration(env, 0.9), [0.0])

    def test_self_loop(self):
        v = value_iteration(self_loop_env(), 0.9, tol=1e-8)
        assert v[0] == pytest.approx(10.0, abs=1e-6)

    def test_invalid_gamma(self):
        with pytest.raises(ValueError):
            value_iteration(self_loop_env(), 1.0)
        with pytest.raises(ValueError):
            policy_evaluation(self_loop_env(), np.ones((1, 1)), -0.1)

    @settings(max_examples=25)
    @given(st.integers(0, 10_000), st.floats(0.0, 0.95))
    def test_residual_and_optimality(self, seed, gamma):
        env = random_mdp(seed)
        v = value_iteration(env, gamma, tol=1e-8)
        assert bellman_residual(env, v, gamma) < 1e-8
        v_uniform = policy_evaluation(env, uniform_policy(env), gamma)
        assert np.all(v >= v_uniform - 1e-7)

    @settings(max_examples=25)
    @given(st.integers(0, 10_000), st.floats(0.0, 0.95))
    def test_exact_and_iterative_evaluation_agree(self, seed, gamma):
        env = random_mdp(seed)
        rng = np.random.default_rng(seed)
        pi = rng.dirichlet(np.ones(env.n_actions), size=env.n_states)
        np.testing.assert_allclose(policy_evaluation(env, pi, gamma),
                                   policy_evaluation_iterative(env, pi, gamma), atol=1e-6)
