# Coupling the learning chain with its frozen copy

# Two copies of stage play run side by side: one keeps learning, the other
# keeps the Q-table it had at the start of the epoch. While they agree, the
# next moves are drawn from a maximal coupling, so they split only with
# probability equal to the distance between their one-step laws.

import numpy as np

from effq.chain import coupled_run, coupling_experiment, mismatch_bound, measure_lipschitz, sub_error_bounds
from effq.dynamics import RunConfig, run
from effq.game import random_game
from effq.schedules import ConstantSchedule, HarmonicSchedule

game = random_game(2, 2, 2, gamma=0.8, seed=0)
sched = HarmonicSchedule(2)
tau = 0.5

# Learn for a while, then freeze the table at an epoch boundary.

start = 200_000
state, _ = run(game, RunConfig(sched, tau, start, seed=0))
frozen = state.q.copy()
res = coupled_run(game, frozen, sched, tau, start, 200, seed=1)
print("largest one-step distance between the two chains:", res.max_tv)
print("stages matched:", int(res.matched.sum()), "of", res.matched.size)

# With both chains frozen and started apart, the mismatch decays as they meet.

res = coupling_experiment(game, frozen, ConstantSchedule(0.0), 1.0, 0, 80, pairs=500,
                          freeze_both=True, fictional_init=None)
rate = res.mismatch_rate()
print("mismatch at t = 0, 20, 40, 80:", np.round(rate[[0, 20, 40, 80]], 3))

# The analytic envelope uses a uniform floor on transition probabilities. It
# is honest but loose: the floor raised to kappa is tiny at this scale.

eps, kappa = res.epsilon, res.kappa
print(f"eps={eps:.2e} kappa={kappa} envelope at m=20: {mismatch_bound(eps, 1.0, kappa, 20)[1]:.6f}")

C = measure_lipschitz(game, frozen, tau, samples=50)
rep = sub_error_bounds(game, sched, k=2000, T=100, tau=tau, lipschitz=C)
print(f"measured C={C:.3f}  lambda at epoch 2000: {rep.lam:.4f}  isolation bound {rep.e_a_bound:.3f}")
