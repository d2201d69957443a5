"""Tabular reinforcement learning for instrument conditioning and domain writing.

Environments expose ``reset(rng) -> state`` and ``step(state, action, rng) ->
(next_state, reward, terminal)``; states are integers.  Randomness always comes
from an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fields import Grid, ScalarField2D
from .sample import LOOP_PLANES, Sample, apply_pulse


@dataclass
class TabularEnv:
    """Finite MDP with explicit transition and reward tensors, both (S, A, S)."""

    transition: np.ndarray
    reward: np.ndarray
    terminal: np.ndarray
    start_dist: np.ndarray
    max_steps: int = 100
    action_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.reward = np.asarray(self.reward, dtype=float)
        self.terminal = np.asarray(self.terminal, dtype=bool)
        self.start_dist = np.asarray(self.start_dist, dtype=float)
        S, A, S2 = self.transition.shape
        if S != S2 or self.reward.shape != self.transition.shape:
            raise ValueError("transition and reward must both have shape (S, A, S)")
        if not np.allclose(self.transition.sum(axis=2), 1.0, atol=1e-9, rtol=0):
            raise ValueError("each P(.|s,a) must sum to 1")
        if np.any(self.transition < 0):
            raise ValueError("negative transition probability")
        if not np.all(np.isfinite(self.reward)):
            raise ValueError("rewards must be finite")
        if self.terminal.shape != (S,) or self.start_dist.shape != (S,):
            raise ValueError("terminal and start_dist must have one entry per state")
        if not np.isclose(self.start_dist.sum(), 1.0):
            raise ValueError("start_dist must sum to 1")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def is_terminal(self, s: int) -> bool:
        return bool(self.terminal[s])

    def reset(self, rng) -> int:
        return int(rng.choice(self.n_states, p=self.start_dist))

    def step(self, s: int, a: int, rng) -> tuple[int, float, bool]:
        if self.terminal[s]:
            return s, 0.0, True
        s2 = int(rng.choice(self.n_states, p=self.transition[s, a]))
        return s2, float(self.reward[s, a, s2]), bool(self.terminal[s2])

    def expected_reward(self) -> np.ndarray:
        """r(s, a) = sum_s' P(s'|s,a) r(s,a,s'), zero on terminal states."""
        r = (self.transition * self.reward).sum(axis=2)
        r[self.terminal] = 0.0
        return r


# --- environments ----------------------------------------------------------

TIP_ACTIONS = ("soft_pulse", "hard_pulse", "gentle_crash", "scan_anneal")
TIP_GOOD, TIP_DESTROYED = 5, 0

# Quality moves for each action, keyed by delta ("x" = tip destroyed).  Hard
# actions help a badly blunted tip (quality <= 2) but are risky near a good one.
TIP_TRANSITIONS = {
    "low": {
        "soft_pulse": {+1: 0.60, 0: 0.30, -1: 0.09, "x": 0.01},
        "hard_pulse": {+2: 0.65, 0: 0.15, -2: 0.17, "x": 0.03},
        "gentle_crash": {+2: 0.55, 0: 0.20, -2: 0.20, "x": 0.05},
        "scan_anneal": {+1: 0.35, 0: 0.60, -1: 0.045, "x": 0.005},
    },
    "high": {
        "soft_pulse": {+1: 0.60, 0: 0.30, -1: 0.09, "x": 0.01},
        "hard_pulse": {+2: 0.45, 0: 0.15, -2: 0.30, "x": 0.10},
        "gentle_crash": {+2: 0.30, 0: 0.20, -2: 0.40, "x": 0.10},
        "scan_anneal": {+1: 0.35, 0: 0.60, -1: 0.045, "x": 0.005},
    },
}
# Rewards: -1 per step, +10 on reaching a good tip, -10 on destroying it.
TIP_STEP_COST, TIP_SUCCESS, TIP_DESTROY = 1.0, 10.0, 10.0


@dataclass(frozen=True)
class TipEnvConfig:
    start_states: tuple[int, ...] = (2, 3, 4)
    max_steps: int = 50


def tip_env(config: TipEnvConfig | None = None, seed: int = 0) -> TabularEnv:
    """Six-level hidden tip quality (0 destroyed, 5 good) with four conditioning actions.

    The tables are fixed constants; ``seed`` is accepted for interface symmetry
    and does not alter them.
    """
    config = config or TipEnvConfig()
    S, A = 6, len(TIP_ACTIONS)
    P = np.zeros((S, A, S))
    R = np.zeros((S, A, S))
    terminal = np.zeros(S, dtype=bool)
    terminal[[TIP_DESTROYED, TIP_GOOD]] = True
    for s in range(S):
        for a, name in enumerate(TIP_ACTIONS):
            if terminal[s]:
                P[s, a, s] = 1.0
                continue
            for delta, p in TIP_TRANSITIONS["low" if s <= 2 else "high"][name].items():
                s2 = TIP_DESTROYED if delta == "x" else int(np.clip(s + delta, 0, S - 1))
                P[s, a, s2] += p
            R[s, a, :] = -TIP_STEP_COST
            R[s, a, TIP_GOOD] += TIP_SUCCESS
            R[s, a, TIP_DESTROYED] -= TIP_DESTROY
    start = np.zeros(S)
    start[list(config.start_states)] = 1.0 / len(config.start_states)
    return TabularEnv(P, R, terminal, start, config.max_steps, TIP_ACTIONS)


WRITE_ACTIONS = ("north", "south", "east", "west", "pulse_pos", "pulse_neg")
_MOVES = {0: (-1, 0), 1: (1, 0), 2: (0, 1), 3: (0, -1)}


@dataclass
class WriteEnv:
    """Write a binary domain pattern with a tip on a small grid.

    State = (cursor cell, current pattern) packed as ``cell * 2**n + bits``
    (bit k is cell k in row-major order, 1 meaning +1 polarization).  Pulses
    switch the cell under the cursor with the stochastic law of
    :func:`autoscope.sample.apply_pulse`.
    """

    goal: np.ndarray
    initial: np.ndarray
    bias: float = 5.0
    dose: float = 1.0
    coercive_bias: float = 2.0
    flip_sharpness: float = 4.0
    step_cost: float = 0.1
    max_steps: int = 100
    start_cell: int = 0
    action_names: tuple[str, ...] = WRITE_ACTIONS

    def __post_init__(self):
        self.goal = np.asarray(self.goal, dtype=int)
        self.initial = np.asarray(self.initial, dtype=int)
        h, w = self.goal.shape
        if h > 5 or w > 5:
            raise ValueError(f"write grid must be at most 5x5, got {h}x{w}")
        if self.initial.shape != self.goal.shape:
            raise ValueError("initial and goal patterns differ in shape")
        self._n = h * w
        self._goal_bits = self._pack_bits(self.goal)

    @property
    def shape(self) -> tuple[int, int]:
        return self.goal.shape

    @property
    def n_states(self) -> int:
        return self._n * 2**self._n

    @property
    def n_actions(self) -> int:
        return len(WRITE_ACTIONS)

    @staticmethod
    def _pack_bits(pattern) -> int:
        flat = np.asarray(pattern).ravel()
        return int(sum(int(v) << k for k, v in enumerate(flat)))

    def encode(self, cell: int, pattern) -> int:
        return cell * 2**self._n + self._pack_bits(pattern)

    def decode(self, s: int) -> tuple[int, np.ndarray]:
        cell, bits = divmod(int(s), 2**self._n)
        pattern = np.array([(bits >> k) & 1 for k in range(self._n)]).reshape(self.shape)
        return cell, pattern

    def hamming(self, s: int) -> int:
        return bin((int(s) % 2**self._n) ^ self._goal_bits).count("1")

    def is_terminal(self, s: int) -> bool:
        return self.hamming(s) == 0

    def reset(self, rng=None) -> int:
        return self.encode(self.start_cell, self.initial)

    def _sample(self, pattern) -> Sample:
        h, w = self.shape
        grid = Grid(w, h, (float(w), float(h)))
        ones = {k: np.ones((h, w)) for k in LOOP_PLANES}
        ones["v_minus"] = -ones["v_minus"]
        return Sample(ScalarField2D.on(grid, np.where(pattern > 0, 1.0, -1.0)), ones,
                      self.coercive_bias, self.flip_sharpness)

    def step(self, s: int, a: int, rng) -> tuple[int, float, bool]:
        if self.is_terminal(s):
            return s, 0.0, True
        cell, pattern = self.decode(s)
        h, w = self.shape
        r, c = divmod(cell, w)
        before = self.hamming(s)
        if a in _MOVES:
            dr, dc = _MOVES[a]
            r, c = min(max(r + dr, 0), h - 1), min(max(c + dc, 0), w - 1)
        elif a in (4, 5):
            sample = self._sample(pattern)
            bias = self.bias if a == 4 else -self.bias
            apply_pulse(sample, (r, c), bias, self.dose, 0.0, int(rng.integers(2**63)))
            pattern = (sample.polarization.values > 0).astype(int)
        else:
            raise ValueError(f"invalid action {a}")
        s2 = self.encode(r * w + c, pattern)
        after = self.hamming(s2)
        return s2, float(before - after) - self.step_cost, after == 0


def write_env(goal_pattern, sample_params: dict | None = None, seed: int = 0, *,
              initial_pattern=None, max_steps: int = 100) -> WriteEnv:
    """Domain-writing environment; a random initial pattern is drawn from ``seed`` when none is given."""
    goal = np.asarray(goal_pattern, dtype=int)
    if goal.ndim != 2 or goal.shape[0] > 5 or goal.shape[1] > 5:
        raise ValueError(f"goal pattern must be a grid of at most 5x5, got shape {goal.shape}")
    if initial_pattern is None:
        initial_pattern = np.random.default_rng(seed).integers(0, 2, goal.shape)
    return WriteEnv(goal, np.asarray(initial_pattern, dtype=int), max_steps=max_steps, **(sample_params or {}))


# --- rollouts ----------------------------------------------------------------


@dataclass
class Trajectory:
    steps: list[tuple[int, int, float, int]] = field(default_factory=list)
    gamma: float = 0.99

    @property
    def return_disc(self) -> float:
        g = 0.0
        for _, _, r, _ in reversed(self.steps):
            g = r + self.gamma * g
        return g

    def rewards_to_go(self) -> np.ndarray:
        out = np.empty(len(self.steps))
        g = 0.0
        for t in range(len(self.steps) - 1, -1, -1):
            g = self.steps[t][2] + self.gamma * g
            out[t] = g
        return out


def rollout(env, act: Callable[[int, np.random.Generator], int], rng, gamma: float) -> Trajectory:
    traj = Trajectory(gamma=gamma)
    s = env.reset(rng)
    for _ in range(env.max_steps):
        if env.is_terminal(s):
            break
        a = act(s, rng)
        s2, r, done = env.step(s, a, rng)
        traj.steps.append((s, a, r, s2))
        s = s2
        if done:
            break
    return traj


def random_policy(env) -> Callable:
    return lambda s, rng: int(rng.integers(env.n_actions))


def greedy_policy(q: np.ndarray) -> Callable:
    return lambda s, rng: int(np.argmax(q[s]))


def evaluate_returns(env, act, n_episodes: int, gamma: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.array([rollout(env, act, rng, gamma).return_disc for _ in range(n_episodes)])


# --- dynamic programming -----------------------------------------------------


def _check_gamma(gamma):
    if not 0 <= gamma < 1:
        raise ValueError(f"gamma must be in [0, 1), got {gamma}")


def bellman_residual(env: TabularEnv, V: np.ndarray, gamma: float) -> float:
    Q = env.expected_reward() + gamma * env.transition @ V
    TV = np.where(env.terminal, 0.0, Q.max(axis=1))
    return float(np.max(np.abs(TV - V)))


def value_iteration(env: TabularEnv, gamma: float, tol: float = 1e-8, max_iter: int = 100_000) -> np.ndarray:
    """Optimal state values; the returned table has Bellman residual below ``tol``."""
    _check_gamma(gamma)
    r = env.expected_reward()
    V = np.zeros(env.n_states)
    for _ in range(max_iter):
        V_new = np.where(env.terminal, 0.0, (r + gamma * env.transition @ V).max(axis=1))
        if np.max(np.abs(V_new - V)) < tol:
            V = V_new
            if bellman_residual(env, V, gamma) < tol:
                return V
        V = V_new
    raise RuntimeError("value iteration did not converge")


def q_values(env: TabularEnv, V: np.ndarray, gamma: float) -> np.ndarray:
    return env.expected_reward() + gamma * env.transition @ V


def policy_evaluation(env: TabularEnv, pi: np.ndarray, gamma: float) -> np.ndarray:
    """Exact values of a stochastic policy ``pi`` (S, A) by solving (I - gamma P_pi) v = r_pi."""
    _check_gamma(gamma)
    pi = np.asarray(pi, dtype=float)
    P_pi = np.einsum("sa,sat->st", pi, env.transition)
    r_pi = (pi * env.expected_reward()).sum(axis=1)
    live = ~env.terminal
    P_pi[~live] = 0.0
    r_pi[~live] = 0.0
    return np.linalg.solve(np.eye(env.n_states) - gamma * P_pi, r_pi)


def policy_evaluation_iterative(env: TabularEnv, pi: np.ndarray, gamma: float, tol: float = 1e-12) -> np.ndarray:
    """Same quantity as :func:`policy_evaluation` by repeated Bellman expectation sweeps."""
    _check_gamma(gamma)
    r = env.expected_reward()
    V = np.zeros(env.n_states)
    while True:
        V_new = np.where(env.terminal, 0.0, (pi * (r + gamma * env.transition @ V)).sum(axis=1))
        if np.max(np.abs(V_new - V)) < tol:
            return V_new
        V = V_new


def uniform_policy(env) -> np.ndarray:
    return np.full((env.n_states, env.n_actions), 1.0 / env.n_actions)


def greedy_matrix(q: np.ndarray) -> np.ndarray:
    pi = np.zeros_like(q)
    pi[np.arange(len(q)), np.argmax(q, axis=1)] = 1.0
    return pi


# --- double Q-learning -------------------------------------------------------


@dataclass
class QTables:
    q_a: np.ndarray
    q_b: np.ndarray

    @property
    def combined(self) -> np.ndarray:
        return self.q_a + self.q_b

    @property
    def mean(self) -> np.ndarray:
        return 0.5 * (self.q_a + self.q_b)

    def greedy(self, s: int) -> int:
        return int(np.argmax(self.q_a[s] + self.q_b[s]))

    def to_dict(self) -> dict:
        return {"q_a": self.q_a.tolist(), "q_b": self.q_b.tolist()}


def epsilon_schedule(episode: int, n_episodes: int, eps_start: float = 1.0, eps_min: float = 0.05,
                     decay_fraction: float = 0.8) -> float:
    """Linear decay from ``eps_start`` to ``eps_min`` over the first ``decay_fraction`` of training."""
    span = max(decay_fraction * n_episodes, 1.0)
    frac = min(episode / span, 1.0)
    return eps_start + (eps_min - eps_start) * frac


def train_double_q(env, gamma: float = 0.95, lr: float = 0.1, n_episodes: int = 1000, seed: int = 0, *,
                   eps_start: float = 1.0, eps_min: float = 0.05, decay_fraction: float = 0.8,
                   max_table_size: int = 50_000_000):
    """Double Q-learning with epsilon-greedy exploration.

    Each step flips a coin to pick the table to update; that table chooses the
    greedy next action and the other one evaluates it.  Episodes cut off by
    ``max_steps`` still bootstrap (the limit is not part of the task).
    Returns ``(QTables, curve)`` with one ``{episode, return, epsilon}`` row per episode.
    """
    _check_gamma(gamma)
    if not 0 < lr <= 1:
        raise ValueError(f"learning rate must be in (0, 1], got {lr}")
    if env.n_states * env.n_actions > max_table_size:
        raise ValueError(f"{env.n_states}x{env.n_actions} table is too large for dense Q storage")
    rng = np.random.default_rng(seed)
    tables = QTables(np.zeros((env.n_states, env.n_actions)), np.zeros((env.n_states, env.n_actions)))
    curve = []
    for ep in range(n_episodes):
        eps = epsilon_schedule(ep, n_episodes, eps_start, eps_min, decay_fraction)
        s = env.reset(rng)
        ret, disc = 0.0, 1.0
        for _ in range(env.max_steps):
            if env.is_terminal(s):
                break
            if rng.random() < eps:
                a = int(rng.integers(env.n_actions))
            else:
                a = tables.greedy(s)
            s2, r, done = env.step(s, a, rng)
            upd, other = (tables.q_a, tables.q_b) if rng.random() < 0.5 else (tables.q_b, tables.q_a)
            target = r if done else r + gamma * other[s2, int(np.argmax(upd[s2]))]
            upd[s, a] += lr * (target - upd[s, a])
            ret += disc * r
            disc *= gamma
            s = s2
            if done:
                break
        curve.append({"episode": ep, "return": ret, "epsilon": eps})
    return tables, curve


# --- policy gradient -----------------------------------------------------------


def one_hot_features(n_states: int) -> Callable[[int], np.ndarray]:
    eye = np.eye(n_states)
    return lambda s: eye[s]


@dataclass
class SoftmaxPolicy:
    """pi(a|s) = softmax(phi(s) @ theta)[a] with ``theta`` of shape (n_features, n_actions)."""

    theta: np.ndarray
    feature_map: Callable[[int], np.ndarray]

    @classmethod
    def tabular(cls, n_states: int, n_actions: int) -> "SoftmaxPolicy":
        return cls(np.zeros((n_states, n_actions)), one_hot_features(n_states))

    def probs(self, s: int, theta: np.ndarray | None = None) -> np.ndarray:
        theta = self.theta if theta is None else theta
        logits = self.feature_map(s) @ theta
        z = np.exp(logits - logits.max())
        return z / z.sum()

    def matrix(self, n_states: int) -> np.ndarray:
        return np.array([self.probs(s) for s in range(n_states)])

    def sample(self, s: int, rng) -> int:
        p = self.probs(s)
        return int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), len(p) - 1))

    def log_prob(self, s: int, a: int, theta: np.ndarray | None = None) -> float:
        theta = self.theta if theta is None else theta
        logits = self.feature_map(s) @ theta
        m = logits.max()
        return float(logits[a] - m - np.log(np.exp(logits - m).sum()))

    def grad_log_prob(self, s: int, a: int, theta: np.ndarray | None = None) -> np.ndarray:
        """d log pi(a|s) / d theta = phi(s) outer (onehot(a) - pi(.|s))."""
        p = -self.probs(s, theta)
        p[a] += 1.0
        return np.outer(self.feature_map(s), p)


def surrogate_loss(policy: SoftmaxPolicy, theta: np.ndarray, batch) -> float:
    """Mean over ``batch`` of log pi(a|s) * weight, for a batch of (s, a, weight) triples.

    Its gradient is the policy-gradient estimate; the weights are frozen.
    """
    return float(sum(policy.log_prob(s, a, theta) * w for s, a, w in batch) / len(batch))


def surrogate_grad(policy: SoftmaxPolicy, theta: np.ndarray, batch) -> np.ndarray:
    g = np.zeros_like(theta)
    for s, a, w in batch:
        g += w * policy.grad_log_prob(s, a, theta)
    return g / len(batch)


def weighted_batch(trajectories, baseline: str = "none", values: np.ndarray | None = None):
    """(s, a, weight) triples with reward-to-go weights minus the chosen baseline.

    ``mean`` subtracts the batch-mean episode return; ``value`` subtracts
    ``values[s]`` (the advantage).
    """
    if baseline not in ("none", "mean", "value"):
        raise ValueError(f"unknown baseline {baseline!r}")
    b0 = float(np.mean([t.return_disc for t in trajectories])) if baseline == "mean" else 0.0
    out = []
    for traj in trajectories:
        for (s, a, _, _), g in zip(traj.steps, traj.rewards_to_go()):
            b = values[s] if baseline == "value" else b0
            out.append((s, a, float(g - b)))
    return out


def train_reinforce(env, policy: SoftmaxPolicy, gamma: float = 0.99, lr: float = 0.1, n_batches: int = 100,
                    batch_size: int = 32, baseline: str = "none", seed: int = 0, value_lr: float = 0.1):
    """Batch REINFORCE by gradient ascent; the normalizer is the number of episodes.

    Returns ``(policy, curve)`` with ``{batch, mean_return, grad_norm}`` rows.
    """
    if not 0 <= gamma <= 1 or lr <= 0 or n_batches < 1 or batch_size < 1:
        raise ValueError("invalid REINFORCE hyperparameters")
    rng = np.random.default_rng(seed)
    values = np.zeros(env.n_states) if baseline == "value" else None
    curve = []
    for b in range(n_batches):
        trajs = [rollout(env, policy.sample, rng, gamma) for _ in range(batch_size)]
        batch = weighted_batch(trajs, baseline, values)
        if not batch:
            curve.append({"batch": b, "mean_return": 0.0, "grad_norm": 0.0})
            continue
        grad = surrogate_grad(policy, policy.theta, batch) * len(batch) / len(trajs)
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"non-finite policy gradient at batch {b}: {grad}")
        policy.theta = policy.theta + lr * grad
        if values is not None:
            for traj in trajs:
                for (s, _, _, _), g in zip(traj.steps, traj.rewards_to_go()):
                    values[s] += value_lr * (g - values[s])
        curve.append({"batch": b, "mean_return": float(np.mean([t.return_disc for t in trajs])),
                      "grad_norm": float(np.linalg.norm(grad))})
    return policy, curve


# --- intrinsic rewards -------------------------------------------------------


@dataclass
class CuriosityModel:
    """Count-based dynamics estimate with Laplace smoothing ``alpha``."""

    n_states: int
    n_actions: int
    alpha: float = 1.0
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.n_states, self.n_actions, self.n_states))
        if self.alpha <= 0:
            raise ValueError("smoothing alpha must be positive")

    def update(self, s: int, a: int, s_next: int):
        self.counts[s, a, s_next] += 1

    def dynamics(self, s: int, a: int | None = None) -> np.ndarray:
        c = self.counts[s] if a is None else self.counts[s, a]
        sm = c + self.alpha
        return sm / sm.sum(axis=-1, keepdims=True)


def intrinsic_reward(model: CuriosityModel, s: int, a: int, s_next: int, kind: str = "curiosity",
                     policy=None) -> float:
    """Curiosity: surprise -log P(s'|s,a).  Empowerment: KL between P(.|s,a) and the
    policy-marginal sum_a' pi(a'|s) P(.|s,a')."""
    if kind == "curiosity":
        return float(-np.log(model.dynamics(s, a)[s_next]))
    if kind == "empowerment":
        if policy is None:
            raise ValueError("empowerment needs a policy")
        pi = policy.probs(s) if isinstance(policy, SoftmaxPolicy) else np.asarray(policy, dtype=float)[s]
        rows = model.dynamics(s)
        p = rows[a]
        # mixture written as p plus a correction, so identical rows give q == p bit for bit
        q = p + pi @ (rows - p)
        return float(np.sum(p * (np.log(p) - np.log(q))))
    raise ValueError(f"unknown intrinsic reward {kind!r}")


def curiosity_trace(env, n_steps: int, seed: int = 0, alpha: float = 1.0) -> np.ndarray:
    """Curiosity reward of each transition while a uniform-random agent explores and
    updates its dynamics model online (reward computed before the update)."""
    rng = np.random.default_rng(seed)
    model = CuriosityModel(env.n_states, env.n_actions, alpha)
    out = np.empty(n_steps)
    s = env.reset(rng)
    steps = 0
    for i in range(n_steps):
        if env.is_terminal(s) or steps >= env.max_steps:
            s, steps = env.reset(rng), 0
        a = int(rng.integers(env.n_actions))
        s2, _, _ = env.step(s, a, rng)
        out[i] = intrinsic_reward(model, s, a, s2)
        model.update(s, a, s2)
        s = s2
        steps += 1
    return out
