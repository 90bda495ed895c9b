# Solving a small identical-interest game exactly

# Every agent shares one reward, so the best the team can do is described by a
# single optimal Q-table over (state, joint action). Value iteration finds it.

import numpy as np

from effq.game import random_game
from effq.solver import greedy_profile, solve_q_star, softmax_error_bound

game = random_game(n=2, num_states=2, actions_per_agent=2, gamma=0.8, seed=0)
print("joint actions per state:", game.num_joint_actions)
print("reward table:\n", np.round(game.reward, 3))

# Value iteration from zero. The stopping rule turns the step size into a
# guarantee on the distance to the true fixed point.

res = solve_q_star(game, tol=1e-10)
print("iterations:", res.iterations, " last step:", res.final_residual)
print("Q*:\n", np.round(res.q_star, 4))

# The greedy joint action in each state, decoded into one action per agent.

for s, a in enumerate(greedy_profile(res.q_star)):
    print(f"state {s}: joint action {a} -> {game.decode(int(a))}")

# Softmax play at temperature tau costs at most tau ln|A| per stage, which the
# discount accumulates into tau ln|A| / (1 - gamma).

for tau in (0.01, 0.05, 0.1):
    print(f"tau={tau}: bound {softmax_error_bound(tau, game.num_joint_actions, game.gamma):.4f}")
