"""Efficient-Q learning dynamics.

Each stage: one uniformly picked agent softmax-responds, at the current
state, to the other agents' most recent actions there (everyone else
replays); the Q-table then moves toward the one-step lookahead built from
the last profile played at every state; finally the game transitions.

Random draws per stage are three uniforms taken in a fixed order -- agent
pick, action sample, state transition -- from a numpy ``Generator``
(PCG64) seeded with the run seed.  Initialisation draws (start state, then
initial profiles) happen before stage 0 when they are random.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .game import StochasticGame, deviation_table
from .schedules import Schedule, epoch_weights
from .solver import greedy_profile


def softmax_response(q_row, tau: float) -> np.ndarray:
    """Logit choice ``exp(z/tau) / sum exp(z/tau)`` with max-subtraction."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    z = np.asarray(q_row, dtype=np.float64) / tau
    e = np.exp(z - np.max(z))
    return e / np.sum(e)


def q_update(game: StochasticGame, q: np.ndarray, last_profiles, beta: float) -> np.ndarray:
    """Synchronous update of every ``(s, a)`` toward ``r + gamma * sum p Q(s', a_t(s'))``."""
    last_profiles = np.asarray(last_profiles, dtype=np.int64)
    cont = q[np.arange(game.num_states), last_profiles]
    target = game.reward + game.gamma * (game.kernel @ cont)
    return q + beta * (target - q)


@dataclass
class RunConfig:
    schedule: Schedule
    tau: float
    stages: int
    seed: int = 0
    initial_state: int | None = None  # None: uniform random
    initial_profile: str | int = "uniform"  # "uniform" or a fixed flat index
    stride: int = 100
    record_snapshots: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.stages < 0:
            raise ValueError("stages must be non-negative")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


@dataclass
class RunState:
    t: int
    state: int
    profiles: np.ndarray  # last joint action played at each state
    q: np.ndarray
    rng: np.random.Generator

    @property
    def extended_state(self) -> tuple[int, tuple[int, ...]]:
        return self.state, tuple(int(a) for a in self.profiles)


@dataclass
class Trajectory:
    t: np.ndarray
    state: np.ndarray
    joint_action: np.ndarray
    q_err_max: np.ndarray | None
    opt_play: np.ndarray | None
    q_snapshots: list = field(default_factory=list)
    profile_history: list = field(default_factory=list)

    def __len__(self):
        return self.t.size

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "state", "joint_action", "q_err_max", "opt_play"])
            for j in range(self.t.size):
                err = "" if self.q_err_max is None else repr(float(self.q_err_max[j]))
                opt = "" if self.opt_play is None else str(int(self.opt_play[j]))
                w.writerow([int(self.t[j]), int(self.state[j]), int(self.joint_action[j]), err, opt])


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    has_err = bool(rows) and rows[0]["q_err_max"] != ""
    return Trajectory(
        np.array([int(r["t"]) for r in rows], dtype=np.int64),
        np.array([int(r["state"]) for r in rows], dtype=np.int64),
        np.array([int(r["joint_action"]) for r in rows], dtype=np.int64),
        np.array([float(r["q_err_max"]) for r in rows]) if has_err else None,
        np.array([int(r["opt_play"]) for r in rows], dtype=bool) if has_err else None,
    )


class _Engine:
    """Precomputed lookup tables shared by every stage of a run."""

    def __init__(self, game: StochasticGame, tau: float):
        self.game = game
        self.n = game.n
        self.tau = float(tau)
        self.dev = deviation_table(game.actions_per_agent)
        self.state_idx = np.arange(game.num_states)
        self.kernel_cdf = np.cumsum(game.kernel, axis=2)
        self.reward = game.reward
        self.gamma = game.gamma
        self.kernel = game.kernel

    def play(self, q, profiles, s, u_agent, u_action):
        """Stage-game revision at state ``s``; returns the new flat profile."""
        i = min(int(u_agent * self.n), self.n - 1)
        cand = self.dev[i][profiles[s]]
        z = q[s, cand] / self.tau
        e = np.exp(z - z.max())
        cdf = np.cumsum(e)
        j = int(np.searchsorted(cdf, u_action * cdf[-1], side="right"))
        return int(cand[min(j, cand.size - 1)])

    def update(self, q, profiles, beta):
        cont = q[self.state_idx, profiles]
        target = self.reward + self.gamma * (self.kernel @ cont)
        q += beta * (target - q)

    def transition(self, s, a, u_next):
        cdf = self.kernel_cdf[s, a]
        j = int(np.searchsorted(cdf, u_next * cdf[-1], side="right"))
        return min(j, cdf.size - 1)

    def advance(self, q, profiles, s, beta, u):
        """One full stage in place; returns ``(played profile, next state)``."""
        a = self.play(q, profiles, s, u[0], u[1])
        profiles[s] = a
        if beta != 0.0:
            self.update(q, profiles, beta)
        return a, self.transition(s, a, u[2])


def initial_run_state(game: StochasticGame, cfg: RunConfig) -> RunState:
    rng = np.random.default_rng(cfg.seed)
    S, A = game.num_states, game.num_joint_actions
    if cfg.initial_state is None:
        s0 = int(rng.integers(S))
    else:
        s0 = int(cfg.initial_state)
        if not 0 <= s0 < S:
            raise ValueError(f"initial_state {s0} out of range")
    if cfg.initial_profile == "uniform":
        profiles = rng.integers(A, size=S).astype(np.int64)
    else:
        a0 = int(cfg.initial_profile)
        if not 0 <= a0 < A:
            raise ValueError(f"initial_profile {a0} out of range")
        profiles = np.full(S, a0, dtype=np.int64)
    return RunState(0, s0, profiles, np.zeros((S, A)), rng)


def _clone_rng(rng: np.random.Generator) -> np.random.Generator:
    bg = type(rng.bit_generator)()
    bg.state = rng.bit_generator.state
    return np.random.Generator(bg)


def step(state: RunState, game: StochasticGame, cfg: RunConfig) -> RunState:
    """Advance one stage; the input state is left untouched."""
    eng = _Engine(game, cfg.tau)
    q = state.q.copy()
    profiles = state.profiles.copy()
    rng = _clone_rng(state.rng)
    beta = cfg.schedule.beta(state.t)
    _, s_next = eng.advance(q, profiles, state.state, beta, rng.random(3))
    return RunState(state.t + 1, s_next, profiles, q, rng)


BLOCK = 1 << 16


def run(game: StochasticGame, cfg: RunConfig, q_star=None, state: RunState | None = None,
        engine: str = "auto"):
    """Run ``cfg.stages`` stages and log every ``cfg.stride``-th one.

    Logged rows hold the stage ``t``, the state visited, the joint action
    played there, and (with ``q_star``) ``max |Q_t - Q*|`` for the table in
    force at stage ``t`` plus whether the played profile is greedy for Q*.
    With ``record_snapshots`` the trajectory also keeps every ``Q_t``
    (``stages + 1`` tables) and every post-play profile map.

    ``engine`` selects the numpy reference loop (``"python"``) or the
    compiled loop (``"numba"``); ``"auto"`` uses the compiled loop unless
    snapshots are requested.  Both consume identical random draws.

    Returns ``(final RunState, Trajectory)``.
    """
    if state is None:
        state = initial_run_state(game, cfg)
    else:
        state = RunState(state.t, state.state, state.profiles.copy(), state.q.copy(),
                         _clone_rng(state.rng))
    if engine == "auto":
        engine = "python" if cfg.record_snapshots else "numba"
    if engine == "numba" and cfg.record_snapshots:
        raise ValueError("snapshot recording needs the python engine")
    if engine not in ("python", "numba"):
        raise ValueError(f"unknown engine {engine!r}")

    eng = _Engine(game, cfg.tau)
    q, profiles, s, rng = state.q, state.profiles, state.state, state.rng
    t0 = state.t
    stride = cfg.stride
    has_star = q_star is not None
    q_star = np.zeros_like(q) if q_star is None else np.asarray(q_star, dtype=np.float64)
    greedy = greedy_profile(q_star)

    n_log = len(range(-t0 % stride, cfg.stages, stride))
    log_t = np.empty(n_log, dtype=np.int64)
    log_s = np.empty(n_log, dtype=np.int64)
    log_a = np.empty(n_log, dtype=np.int64)
    log_err = np.empty(n_log)
    log_opt = np.empty(n_log, dtype=np.bool_)
    snaps, hist = [], []
    if cfg.record_snapshots:
        snaps.append(q.copy())

    j = 0
    if engine == "numba":
        from ._kernels import run_block

        width = max(game.actions_per_agent)
        dev = np.zeros((game.n, game.num_joint_actions, width), dtype=np.int64)
        for i, tab in enumerate(eng.dev):
            dev[i, :, :tab.shape[1]] = tab
        dev_len = np.array(game.actions_per_agent, dtype=np.int64)
        reward = np.ascontiguousarray(game.reward)
        kernel = np.ascontiguousarray(game.kernel)
        for b0 in range(0, cfg.stages, BLOCK):
            b1 = min(b0 + BLOCK, cfg.stages)
            betas = cfg.schedule.betas(t0 + b0, t0 + b1)
            uniforms = rng.random((b1 - b0, 3))
            s, j = run_block(q, profiles, s, betas, uniforms, dev, dev_len, game.n, eng.tau,
                             reward, kernel, game.gamma, eng.kernel_cdf, q_star, greedy,
                             has_star, t0 + b0, stride, log_t, log_s, log_a, log_err,
                             log_opt, j)
    else:
        for b0 in range(0, cfg.stages, BLOCK):
            b1 = min(b0 + BLOCK, cfg.stages)
            betas = cfg.schedule.betas(t0 + b0, t0 + b1)
            uniforms = rng.random((b1 - b0, 3))
            for k in range(b1 - b0):
                t = t0 + b0 + k
                logged = t % stride == 0
                if logged and has_star:
                    log_err[j] = float(np.max(np.abs(q - q_star)))
                s_here = s
                a, s = eng.advance(q, profiles, s, float(betas[k]), uniforms[k])
                if logged:
                    log_t[j], log_s[j], log_a[j] = t, s_here, a
                    log_opt[j] = a == greedy[s_here]
                    j += 1
                if cfg.record_snapshots:
                    snaps.append(q.copy())
                    hist.append(profiles.copy())

    final = RunState(t0 + cfg.stages, int(s), profiles, q, rng)
    traj = Trajectory(log_t, log_s, log_a, log_err if has_star else None,
                      log_opt if has_star else None, snaps, hist)
    return final, traj


def verify_epoch_identity(game: StochasticGame, q_snapshots, profiles, schedule: Schedule,
                          k: int, T: int, q_star) -> float:
    """Max residual of the epoch-level recursion for the error ``Q - Q*``.

    ``q_snapshots`` holds ``Q_{kT}, ..., Q_{(k+1)T}`` and ``profiles`` the
    post-play profile maps of stages ``kT .. (k+1)T - 1``.  The right side is
    ``(1 - alpha_(k)) * err_(k) + alpha_(k) * gamma * P V_(k+1)`` with
    ``V_(k+1)(s') = sum_t (alpha_t / alpha_(k)) (Q_t(s', a_t(s')) - max Q*(s', .))``.
    Unrolling the per-stage update makes this an exact identity, so the
    residual is pure rounding.
    """
    if len(q_snapshots) != T + 1:
        raise ValueError(f"need T+1 = {T + 1} Q snapshots, got {len(q_snapshots)}")
    if len(profiles) != T:
        raise ValueError(f"need T = {T} profile maps, got {len(profiles)}")
    q_star = np.asarray(q_star, dtype=np.float64)
    w = epoch_weights(schedule, k, T)
    v_star = np.max(q_star, axis=1)
    idx = np.arange(game.num_states)
    err_start = q_snapshots[0] - q_star
    lhs = q_snapshots[-1] - q_star
    rhs = (1.0 - w.total) * err_start
    if w.total > 0.0:
        diffs = np.array([q_snapshots[j][idx, np.asarray(profiles[j])] - v_star for j in range(T)])
        v_next = w.normalized @ diffs
        rhs = rhs + w.total * game.gamma * (game.kernel @ v_next)
    return float(np.max(np.abs(lhs - rhs)))


def epoch_slices(trajectory: Trajectory, k: int, T: int):
    """Snapshots and profile maps of epoch ``k`` from a recorded run started at t=0."""
    if not trajectory.q_snapshots:
        raise ValueError("trajectory was recorded without snapshots")
    snaps = trajectory.q_snapshots[k * T:(k + 1) * T + 1]
    profs = trajectory.profile_history[k * T:(k + 1) * T]
    return snaps, profs
