# Learning the optimal Q-table from play

# One agent at a time revises its action with a softmax response, everyone
# else repeats what they last played, and the shared Q-table is pushed toward
# the value of the profiles most recently played in every state.

import numpy as np

from effq.dynamics import RunConfig, run
from effq.experiments import tail_statistics
from effq.game import random_game
from effq.schedules import HarmonicSchedule, check_conditions
from effq.solver import solve_q_star, softmax_error_bound

game = random_game(2, 2, 2, gamma=0.8, seed=0)
q_star = solve_q_star(game).q_star

# The stepsize 1/(t+2) decays slowly enough to keep learning and fast enough
# that late stages only nudge the table.

schedule = HarmonicSchedule(2)
for name, verdict in check_conditions(schedule).as_dict().items():
    print(f"{name:16s} holds={verdict['holds']}  ({verdict['note']})")

cfg = RunConfig(schedule, tau=0.05, stages=1_000_000, seed=1, stride=100)
final, traj = run(game, cfg, q_star)

# The error is logged every 100 stages; the tail window stands in for the
# long-run worst case.

for t in (0, 1_000, 10_000, 100_000, 999_900):
    j = t // cfg.stride
    print(f"t={traj.t[j]:>7d}  max|Q_t - Q*| = {traj.q_err_max[j]:.4f}")

stats = tail_statistics(traj, 0.1)
bound = softmax_error_bound(cfg.tau, game.num_joint_actions, game.gamma)
print(f"tail max error {stats['tail_max_err']:.4f} vs bound {bound:.4f}")
print(f"optimal profile played in {100 * stats['tail_opt_frac']:.1f}% of tail stages")
print("final Q:\n", np.round(final.q, 3))
