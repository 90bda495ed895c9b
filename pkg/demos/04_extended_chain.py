# Stage play with the Q-table frozen

# Freezing Q makes play a Markov chain on pairs (current state, last profile
# played in every state). In a one-state game the stored profile settles into
# the softmax of Q; with several states this becomes a question we can
# measure.

import numpy as np

from effq.chain import build_extended_chain, joint_softmax, stationary_distribution, state_action_marginal
from effq.game import StochasticGame, random_game
from effq.solver import solve_q_star

reward = np.array([[1.0, 0.0, 0.2, 0.6]])
repeated = StochasticGame((2, 2), reward, np.ones((1, 4, 1)), 0.5)
for tau in (0.1, 0.5):
    chain = build_extended_chain(repeated, reward, tau)
    pi = stationary_distribution(chain)
    marg = state_action_marginal(pi, chain.space, 0)
    print(f"tau={tau}: stationary {np.round(marg, 5)}  softmax {np.round(joint_softmax(reward[0], tau), 5)}")

# Two states: the chain has 2 * 4^2 = 32 extended states.

game = random_game(2, 2, 2, gamma=0.8, seed=0)
q = solve_q_star(game).q_star
chain = build_extended_chain(game, q, 1.0)
pi = stationary_distribution(chain)
print("extended states:", chain.size, " nonzeros per row:", chain.matrix.getnnz(axis=1).max())
for s in range(game.num_states):
    gap = np.abs(state_action_marginal(pi, chain.space, s) - joint_softmax(q[s], 1.0)).sum()
    print(f"state {s}: L1 distance between stored-profile law and softmax {gap:.2e}")
