"""Exact dynamic-programming oracle for identical-interest games.

Value iteration on the joint-action Bellman optimality operator gives the
optimal Q-table; the stopping rule converts the step residual into a
certified sup-norm error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .game import StochasticGame


class SolverError(RuntimeError):
    """Iteration budget exhausted before the requested tolerance."""

    def __init__(self, message, last_residual):
        super().__init__(message)
        self.last_residual = last_residual


@dataclass
class SolveResult:
    q_star: np.ndarray
    iterations: int
    final_residual: float


def bellman_operator(game: StochasticGame, q: np.ndarray) -> np.ndarray:
    """``(TQ)(s,a) = r(s,a) + gamma * sum_s' p(s'|s,a) max_a' Q(s',a')``."""
    v = np.max(q, axis=1)
    return game.reward + game.gamma * (game.kernel @ v)


def _stop_threshold(tol: float, gamma: float) -> float:
    # ||Q_k - Q*|| <= gamma/(1-gamma) * ||Q_k - Q_{k-1}||; ask for tol/2
    if gamma == 0.0:
        return tol
    return min(tol, tol * (1.0 - gamma) / (2.0 * gamma))


def solve_q_star(game: StochasticGame, tol: float = 1e-10, max_iter: int = 100_000) -> SolveResult:
    """Value iteration from ``Q = 0`` until the returned table is within ``tol/2`` of Q*.

    Raises
    ------
    SolverError
        If ``max_iter`` sweeps do not reach the stopping threshold.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    q = np.zeros_like(game.reward)
    if game.gamma == 0.0:
        q = bellman_operator(game, q)
        return SolveResult(q, 1, float(np.max(np.abs(bellman_operator(game, q) - q))))
    threshold = _stop_threshold(tol, game.gamma)
    residual = math.inf
    for it in range(1, max_iter + 1):
        q_next = bellman_operator(game, q)
        residual = float(np.max(np.abs(q_next - q)))
        q = q_next
        if residual <= threshold:
            return SolveResult(q, it, residual)
    raise SolverError(
        f"value iteration did not converge in {max_iter} iterations (last residual {residual:.3e})",
        residual,
    )


def greedy_profile(q: np.ndarray) -> np.ndarray:
    """Per-state argmax joint action; ties go to the lowest flat index."""
    return np.argmax(np.asarray(q), axis=1)


def evaluate_joint_strategy(game: StochasticGame, pi, tol: float = 1e-12, max_iter: int = 1_000_000):
    """Value of a stationary joint strategy and its Q-table.

    ``pi`` is an ``(S, |A|)`` array of distributions over joint actions.
    Iterates ``v <- E_pi[r + gamma P v]`` to a certified ``tol`` and returns
    ``(v, q)`` with ``q = r + gamma P v``.
    """
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != game.reward.shape:
        raise ValueError(f"strategy shape {pi.shape}, expected {game.reward.shape}")
    if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > 1e-12):
        raise ValueError("each pi(s) must be a probability distribution over joint actions")
    r_pi = np.sum(pi * game.reward, axis=1)
    p_pi = np.einsum("sa,sat->st", pi, game.kernel)
    v = np.zeros(game.num_states)
    threshold = _stop_threshold(tol, game.gamma)
    for _ in range(max_iter):
        v_next = r_pi + game.gamma * (p_pi @ v)
        step = float(np.max(np.abs(v_next - v)))
        v = v_next
        if step <= threshold or game.gamma == 0.0:
            break
    else:
        raise SolverError("policy evaluation did not converge", step)
    q = game.reward + game.gamma * (game.kernel @ v)
    return v, q


def point_mass_strategy(profile, num_joint_actions: int) -> np.ndarray:
    """Deterministic joint strategy playing ``profile[s]`` at each state ``s``."""
    profile = np.asarray(profile, dtype=np.int64)
    pi = np.zeros((profile.size, num_joint_actions))
    pi[np.arange(profile.size), profile] = 1.0
    return pi


def softmax_error_bound(tau: float, joint_action_count: int, gamma: float) -> float:
    """Asymptotic error bound ``tau * ln|A| / (1 - gamma)``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    return tau * math.log(joint_action_count) / (1.0 - gamma)
