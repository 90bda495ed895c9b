"""Multi-seed learning runs and their convergence summaries."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .dynamics import RunConfig, Trajectory, run
from .game import StochasticGame
from .solver import softmax_error_bound

FORMAT_VERSION = "1.0"


def worker_count(jobs: int) -> int:
    cap = os.environ.get("EFFQ_THREADS")
    limit = os.cpu_count() or 1
    if cap:
        limit = max(1, int(cap))
    return max(1, min(jobs, limit))


def _one_seed(args):
    game, cfg, q_star = args
    _, traj = run(game, cfg, q_star)
    return traj


def run_seeds(game: StochasticGame, cfg: RunConfig, seeds, q_star=None, workers=None) -> list[Trajectory]:
    """Run the same configuration under each seed; results come back in seed order."""
    jobs = [(game, _with_seed(cfg, s), q_star) for s in seeds]
    workers = worker_count(len(jobs)) if workers is None else workers
    if workers <= 1:
        return [_one_seed(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_one_seed, jobs))


def _with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return RunConfig(cfg.schedule, cfg.tau, cfg.stages, seed, cfg.initial_state,
                     cfg.initial_profile, cfg.stride, cfg.record_snapshots)


def tail_statistics(traj: Trajectory, tail_frac: float = 0.1) -> dict | None:
    """Tail-window summary of one logged run; ``None`` when nothing was logged.

    The window is the last ``ceil(tail_frac * rows)`` logged rows; the max
    error over it stands in for the limsup.
    """
    if not 0 < tail_frac <= 1:
        raise ValueError("tail_frac must lie in (0, 1]")
    rows = len(traj)
    if rows == 0 or traj.q_err_max is None:
        return None
    w = max(1, math.ceil(tail_frac * rows))
    return {
        "initial_err": float(traj.q_err_max[0]),
        "tail_max_err": float(np.max(traj.q_err_max[-w:])),
        "final_err": float(traj.q_err_max[-1]),
        "tail_opt_frac": float(np.mean(traj.opt_play[-w:])),
        "tail_rows": w,
    }


def _agg(values):
    values = np.asarray(values, dtype=np.float64)
    return {"median": float(np.median(values)), "min": float(values.min()), "max": float(values.max())}


def convergence_report(game: StochasticGame, q_star, cfg: RunConfig, seeds, trajectories,
                       tail_frac: float = 0.1, slack: float | None = None) -> dict:
    """Tail statistics per seed and against ``tau ln|A| / (1 - gamma)`` plus slack.

    The default slack is ``0.1 * max|Q*|``.  A seed passes when its tail max
    error is within bound + slack; the aggregate verdict uses the median.
    """
    q_star = np.asarray(q_star, dtype=np.float64)
    bound = softmax_error_bound(cfg.tau, game.num_joint_actions, game.gamma)
    if slack is None:
        slack = 0.1 * float(np.max(np.abs(q_star)))
    threshold = bound + slack
    report = {
        "spec_version": FORMAT_VERSION,
        "game": {
            "num_states": game.num_states,
            "actions_per_agent": list(game.actions_per_agent),
            "num_joint_actions": game.num_joint_actions,
            "gamma": game.gamma,
        },
        "tau": cfg.tau,
        "schedule": cfg.schedule.to_string(),
        "stages": cfg.stages,
        "stride": cfg.stride,
        "tail_frac": tail_frac,
        "seeds": [int(s) for s in seeds],
        "q_star_max_abs": float(np.max(np.abs(q_star))),
        "bound": bound,
        "slack": slack,
        "threshold": threshold,
    }
    per_seed = []
    for seed, traj in zip(seeds, trajectories):
        st = tail_statistics(traj, tail_frac)
        if st is None:
            continue
        st["seed"] = int(seed)
        st["pass"] = st["tail_max_err"] <= threshold
        per_seed.append(st)
    if not per_seed:
        report.update(status="no data", per_seed=[], aggregate={}, passed=None)
        return report
    aggregate = {key: _agg([p[key] for p in per_seed])
                 for key in ("tail_max_err", "final_err", "tail_opt_frac", "initial_err")}
    med = aggregate["tail_max_err"]["median"]
    report.update(
        status="ok",
        per_seed=per_seed,
        aggregate=aggregate,
        tail_to_initial=med / report["q_star_max_abs"] if report["q_star_max_abs"] > 0 else None,
        passed=med <= threshold,
    )
    return report
