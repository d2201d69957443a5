"""Teaching an agent to sharpen a blunt tip.

The tip's hidden quality runs from 0 (destroyed) to 5 (good).  Four
conditioning actions move it up or down at random; hard actions move it
further and risk destroying it.  We compare three policies by discounted
return from the usual start states:

* uniform random, evaluated exactly by solving the linear Bellman system,
* double Q-learning with epsilon-greedy exploration,
* the optimum from value iteration.

    python demos/tip_conditioning.py --episodes 3000
"""

import argparse

import numpy as np

from autoscope import agent


def main(episodes: int, gamma: float = 0.95):
    env = agent.tip_env()
    start = env.start_dist

    v_random = start @ agent.policy_evaluation(env, agent.uniform_policy(env), gamma)
    v_star = agent.value_iteration(env, gamma)
    q_star = agent.q_values(env, v_star, gamma)

    tables, curve = agent.train_double_q(env, gamma=gamma, lr=0.1, n_episodes=episodes, seed=0)
    v_learned = start @ agent.policy_evaluation(env, agent.greedy_matrix(tables.combined), gamma)
    sampled = agent.evaluate_returns(env, agent.greedy_policy(tables.combined), 1000, gamma, seed=1)

    print("expected discounted return from the start states")
    print(f"  random policy (exact)     {v_random:7.3f}")
    print(f"  double-Q greedy (exact)   {v_learned:7.3f}   sampled: {sampled.mean():.3f} +- "
          f"{sampled.std(ddof=1) / np.sqrt(len(sampled)):.3f}")
    print(f"  optimal (value iteration) {start @ v_star:7.3f}")

    print("\nbest action per quality level")
    print("  quality  learned         optimal")
    for s in range(1, 5):
        learned = env.action_names[int(np.argmax(tables.combined[s]))]
        best = env.action_names[int(np.argmax(q_star[s]))]
        print(f"  {s:>7}  {learned:<14}  {best}")

    returns = np.array([row["return"] for row in curve])
    win = max(1, episodes // 10)
    print("\nlearning curve (mean return per tenth of training)")
    print("  " + " ".join(f"{returns[i:i + win].mean():5.2f}" for i in range(0, episodes, win)))


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--episodes", type=int, default=3000)
    main(p.parse_args().episodes)
