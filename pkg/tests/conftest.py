import numpy as np
import pytest
from scipy import stats

from effq.game import StochasticGame, random_game

CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def two_action_mdp():
    """One state, one agent, actions {a1, a2}, r = [0, 1], gamma = 0.5."""
    return StochasticGame((2,), [[0.0, 1.0]], [[[1.0], [1.0]]], 0.5)


@pytest.fixture
def small_game():
    return random_game(2, 2, 2, min_transition_prob=0.05, gamma=0.8, seed=0)


def binomial_halfwidth(p, n, z=3.0):
    return z * np.sqrt(p * (1 - p) / n)


def binomial_interval(successes, trials, z=3.0):
    """Exact (Clopper-Pearson) interval with the two-sided coverage of ``z`` sigma.

    Counts may be fractional when ``trials`` is an effective sample size.
    """
    alpha = 2 * stats.norm.sf(z)
    lo = stats.beta.ppf(alpha / 2, successes, trials - successes + 1) if successes > 0 else 0.0
    hi = stats.beta.ppf(1 - alpha / 2, successes + 1, trials - successes) if successes < trials else 1.0
    return float(lo), float(hi)


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for an acceptance criterion and assert it."""
    lines = request.config.stash.setdefault(CRITERIA, {})

    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
