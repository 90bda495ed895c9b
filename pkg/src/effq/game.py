"""Finite identical-interest stochastic games.

A game is the tuple (states, per-agent action sets, common reward, transition
kernel, discount).  Joint actions are stored by a flat row-major index with
agent 0 as the most significant coordinate; every table in the package
(rewards, kernels, Q-tables, file formats) uses that ordering.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

ROW_SUM_TOL = 1e-12


class GameFormatError(ValueError):
    """Raised when a game file cannot be parsed into a valid game."""


@dataclass(frozen=True, eq=False)
class StochasticGame:
    """An n-agent identical-interest stochastic game.

    Parameters
    ----------
    actions_per_agent : tuple of int
        ``|A^i|`` for each agent, in agent order.
    reward : (S, A) ndarray
        Common stage payoff ``r(s, a)`` indexed by flat joint action.
    kernel : (S, A, S) ndarray
        Transition probabilities ``p(s' | s, a)``.
    gamma : float
        Discount factor in ``[0, 1)``.

    The arrays are copied and made read-only on construction, so a game can be
    shared freely between readers.  Construction does not validate; call
    :func:`validate_game` for that.
    """

    actions_per_agent: tuple[int, ...]
    reward: np.ndarray
    kernel: np.ndarray
    gamma: float

    def __post_init__(self):
        apa = tuple(int(m) for m in self.actions_per_agent)
        reward = np.array(self.reward, dtype=np.float64)
        kernel = np.array(self.kernel, dtype=np.float64)
        reward.setflags(write=False)
        kernel.setflags(write=False)
        object.__setattr__(self, "actions_per_agent", apa)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n(self) -> int:
        return len(self.actions_per_agent)

    @property
    def num_states(self) -> int:
        return self.reward.shape[0]

    @property
    def num_joint_actions(self) -> int:
        return math.prod(self.actions_per_agent)

    @property
    def reward_bound(self) -> float:
        """``max |r(s, a)|``."""
        return float(np.max(np.abs(self.reward))) if self.reward.size else 0.0

    @property
    def q_bound(self) -> float:
        """``r_max / (1 - gamma)``, the sup-norm bound on every Q-iterate."""
        return self.reward_bound / (1.0 - self.gamma)

    def encode(self, profile) -> int:
        """Flat index of a per-agent action tuple."""
        return encode_joint_action(profile, self.actions_per_agent)

    def decode(self, index: int) -> tuple[int, ...]:
        """Per-agent action tuple of a flat joint-action index."""
        return decode_joint_action(index, self.actions_per_agent)

    def __eq__(self, other):
        if not isinstance(other, StochasticGame):
            return NotImplemented
        return (
            self.actions_per_agent == other.actions_per_agent
            and self.gamma == other.gamma
            and self.reward.shape == other.reward.shape
            and self.kernel.shape == other.kernel.shape
            and np.array_equal(self.reward, other.reward)
            and np.array_equal(self.kernel, other.kernel)
        )

    __hash__ = None


def encode_joint_action(profile, actions_per_agent) -> int:
    profile = tuple(int(a) for a in profile)
    if len(profile) != len(actions_per_agent):
        raise ValueError(
            f"profile has {len(profile)} coordinates, expected {len(actions_per_agent)}"
        )
    return int(np.ravel_multi_index(profile, tuple(actions_per_agent)))


def decode_joint_action(index: int, actions_per_agent) -> tuple[int, ...]:
    return tuple(int(a) for a in np.unravel_index(int(index), tuple(actions_per_agent)))


def joint_action_table(actions_per_agent) -> np.ndarray:
    """``(|A|, n)`` array whose row ``a`` is the decoded profile of ``a``."""
    shape = tuple(actions_per_agent)
    grids = np.indices(shape).reshape(len(shape), -1)
    return grids.T.copy()


def deviation_table(actions_per_agent) -> list[np.ndarray]:
    """Unilateral-deviation index tables.

    Entry ``i`` is an ``(|A|, |A^i|)`` int array; row ``a`` lists the flat
    joint actions obtained from ``a`` by setting agent ``i``'s coordinate to
    ``0 .. |A^i|-1`` while every other agent keeps its action.
    """
    return list(_deviation_tables(tuple(int(m) for m in actions_per_agent)))


@lru_cache(maxsize=64)
def _deviation_tables(shape: tuple) -> tuple:
    profiles = joint_action_table(shape)
    strides = np.ones(len(shape), dtype=np.int64)
    for i in range(len(shape) - 2, -1, -1):
        strides[i] = strides[i + 1] * shape[i + 1]
    flat = np.arange(profiles.shape[0])
    tables = []
    for i, m in enumerate(shape):
        base = flat - profiles[:, i] * strides[i]
        tab = base[:, None] + strides[i] * np.arange(m)[None, :]
        tab.setflags(write=False)
        tables.append(tab)
    return tuple(tables)


@dataclass
class ValidationReport:
    """Every invariant violation found in a game; empty means valid."""

    issues: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def __len__(self):
        return len(self.issues)

    def __iter__(self):
        return iter(self.issues)


def validate_game(game: StochasticGame) -> ValidationReport:
    issues = []
    S = game.reward.shape[0] if game.reward.ndim >= 1 else 0
    A = game.num_joint_actions
    if game.n < 1:
        issues.append("n: need at least one agent")
    if any(m < 1 for m in game.actions_per_agent):
        issues.append(f"actions_per_agent: every entry must be >= 1, got {list(game.actions_per_agent)}")
    if S < 1:
        issues.append("num_states: need at least one state")
    if game.reward.shape != (S, A):
        issues.append(f"reward: shape {game.reward.shape}, expected {(S, A)}")
    elif not np.all(np.isfinite(game.reward)):
        bad = np.argwhere(~np.isfinite(game.reward))
        for s, a in bad[:10]:
            issues.append(f"reward[{s}][{a}] is not finite")
    if game.kernel.shape != (S, A, S):
        issues.append(f"kernel: shape {game.kernel.shape}, expected {(S, A, S)}")
    else:
        if not np.all(np.isfinite(game.kernel)):
            issues.append("kernel: contains non-finite entries")
        neg = np.argwhere(game.kernel < 0)
        for s, a, s2 in neg[:10]:
            issues.append(f"kernel[{s}][{a}][{s2}] is negative")
        sums = game.kernel.sum(axis=2)
        bad = np.argwhere(~(np.abs(sums - 1.0) <= ROW_SUM_TOL))
        for s, a in bad:
            issues.append(f"kernel row (s={s}, a={a}) sums to {sums[s, a]!r}, expected 1")
    if not (0.0 <= game.gamma < 1.0):
        issues.append(f"gamma: discount {game.gamma!r} out of range [0, 1)")
    return ValidationReport(issues)


def is_irreducible(game: StochasticGame) -> bool:
    """True iff every transition probability is strictly positive."""
    return bool(np.all(game.kernel > 0))


def random_game(
    n: int,
    num_states: int,
    actions_per_agent,
    reward_range=(0.0, 1.0),
    min_transition_prob: float = 0.05,
    gamma: float = 0.9,
    seed: int = 0,
) -> StochasticGame:
    """Draw a random irreducible game.

    Rewards are i.i.d. uniform on ``reward_range``.  Each kernel row is a
    flat-Dirichlet draw ``d`` mapped to ``min_p + (1 - S * min_p) * d``, so
    every entry is at least ``min_transition_prob`` and rows sum to one.
    ``actions_per_agent`` may be a single int shared by all agents.
    """
    if np.isscalar(actions_per_agent):
        actions_per_agent = (int(actions_per_agent),) * n
    actions_per_agent = tuple(int(m) for m in actions_per_agent)
    if len(actions_per_agent) != n:
        raise ValueError(f"actions_per_agent has {len(actions_per_agent)} entries for {n} agents")
    if num_states < 1 or n < 1:
        raise ValueError("need at least one state and one agent")
    if not min_transition_prob > 0:
        raise ValueError("min_transition_prob must be positive")
    if min_transition_prob * num_states > 1.0 + 1e-15:
        raise ValueError(
            f"min_transition_prob={min_transition_prob} infeasible for {num_states} states: "
            f"{num_states} * {min_transition_prob} > 1"
        )
    rng = np.random.default_rng(seed)
    A = math.prod(actions_per_agent)
    lo, hi = reward_range
    reward = rng.uniform(lo, hi, size=(num_states, A))
    d = rng.dirichlet(np.ones(num_states), size=(num_states, A))
    slack = max(1.0 - num_states * min_transition_prob, 0.0)
    kernel = min_transition_prob + slack * d
    return StochasticGame(actions_per_agent, reward, kernel, gamma)


# -- persistence ------------------------------------------------------------

def game_to_dict(game: StochasticGame) -> dict:
    return {
        "n": game.n,
        "num_states": game.num_states,
        "actions_per_agent": list(game.actions_per_agent),
        "gamma": game.gamma,
        "reward": game.reward.tolist(),
        "kernel": game.kernel.tolist(),
    }


def save_game(game: StochasticGame, path) -> None:
    # json writes floats with repr(), which round-trips float64 exactly
    text = json.dumps(game_to_dict(game), indent=1)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _require(obj: dict, key: str, kind, source: str):
    if key not in obj:
        raise GameFormatError(f"{source}: missing field '{key}'")
    val = obj[key]
    if kind is int and (not isinstance(val, int) or isinstance(val, bool)):
        raise GameFormatError(f"{source}: field '{key}' must be an integer, got {val!r}")
    if kind is float and (not isinstance(val, (int, float)) or isinstance(val, bool)):
        raise GameFormatError(f"{source}: field '{key}' must be a number, got {val!r}")
    return val


def _numeric_array(val, shape, name: str, source: str) -> np.ndarray:
    try:
        arr = np.array(val, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise GameFormatError(f"{source}: field '{name}' is not a numeric array ({exc})") from None
    if arr.shape != shape:
        raise GameFormatError(
            f"{source}: field '{name}' has shape {arr.shape}, expected {shape} "
            "from num_states and actions_per_agent"
        )
    return arr


def game_from_dict(obj, source: str = "<game>") -> StochasticGame:
    if not isinstance(obj, dict):
        raise GameFormatError(f"{source}: top level must be a JSON object")
    n = _require(obj, "n", int, source)
    S = _require(obj, "num_states", int, source)
    apa = _require(obj, "actions_per_agent", list, source)
    gamma = _require(obj, "gamma", float, source)
    if not all(isinstance(m, int) and not isinstance(m, bool) and m >= 1 for m in apa):
        raise GameFormatError(f"{source}: field 'actions_per_agent' must hold positive integers")
    if len(apa) != n:
        raise GameFormatError(f"{source}: field 'actions_per_agent' has length {len(apa)}, but n={n}")
    if S < 1:
        raise GameFormatError(f"{source}: field 'num_states' must be >= 1")
    A = math.prod(apa)
    reward = _numeric_array(_require(obj, "reward", list, source), (S, A), "reward", source)
    kernel = _numeric_array(_require(obj, "kernel", list, source), (S, A, S), "kernel", source)
    return StochasticGame(tuple(apa), reward, kernel, gamma)


def load_game(path) -> StochasticGame:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GameFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return game_from_dict(obj, str(path))
