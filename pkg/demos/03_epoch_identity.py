# Grouping updates into epochs

# Over a block of T stages the per-stage updates collapse into one update with
# stepsize 1 - prod(1 - beta_t). The weights inside the block are
# non-increasing whenever consecutive stepsizes fall at least as fast as their
# product, which the harmonic family does with equality.

import numpy as np

from effq.dynamics import RunConfig, epoch_slices, run, verify_epoch_identity
from effq.game import random_game
from effq.schedules import ConstantSchedule, HarmonicSchedule, epoch_weights, weight_monotonicity_check
from effq.solver import solve_q_star

for sched in (HarmonicSchedule(1), ConstantSchedule(0.5)):
    w = epoch_weights(sched, k=0, T=4)
    print(sched.to_string(), "weights", np.round(w.alphas, 4), "sum", round(w.total, 4),
          "non-increasing:", weight_monotonicity_check(w))

# On a recorded run, the error after an epoch is rebuilt from the error at
# its start and the values of the profiles played inside it. Only rounding
# separates the two sides.

game = random_game(2, 2, 2, gamma=0.8, seed=0)
q_star = solve_q_star(game, tol=1e-12).q_star
sched = HarmonicSchedule(2)
T = 8
cfg = RunConfig(sched, 0.1, 20 * T, seed=3, record_snapshots=True)
_, traj = run(game, cfg, q_star)
res = [verify_epoch_identity(game, *epoch_slices(traj, k, T), sched, k, T, q_star) for k in range(20)]
print("largest residual over 20 epochs:", max(res))
