"""Command line front end: ``effq {gen,solve,run,chain,couple,report}``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import chain as ch
from .dynamics import RunConfig, run
from .experiments import FORMAT_VERSION, convergence_report, run_seeds
from .game import StochasticGame, load_game, random_game, save_game, validate_game, is_irreducible
from .schedules import ConstantSchedule, parse_schedule
from .solver import greedy_profile, solve_q_star


class CLIError(Exception):
    pass


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, allow_nan=True) + "\n", encoding="utf-8")


def save_q(path, q, **extra) -> None:
    q = np.asarray(q, dtype=np.float64)
    obj = {"spec_version": FORMAT_VERSION, "num_states": q.shape[0],
           "num_joint_actions": q.shape[1], "q": q.tolist()}
    obj.update(extra)
    _write_json(path, obj)


def load_q(path, game: StochasticGame | None = None) -> np.ndarray:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if "q" not in obj:
        raise CLIError(f"{path}: missing field 'q'")
    q = np.array(obj["q"], dtype=np.float64)
    if game is not None and q.shape != game.reward.shape:
        raise CLIError(f"{path}: Q-table shape {q.shape} does not match game {game.reward.shape}")
    return q


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


# -- subcommands ------------------------------------------------------------

def cmd_gen(args) -> int:
    actions = _int_list(args.actions)
    if len(actions) == 1:
        actions = actions * args.agents
    game = random_game(args.agents, args.states, actions,
                       reward_range=(args.reward_low, args.reward_high),
                       min_transition_prob=args.min_prob, gamma=args.gamma, seed=args.seed)
    save_game(game, args.out)
    report = validate_game(game)
    print(args.out)
    print(f"valid: {report.ok}  irreducible: {is_irreducible(game)}  "
          f"|S|={game.num_states} n={game.n} |A|={game.num_joint_actions} gamma={game.gamma}")
    return 0


def _load_valid_game(path) -> StochasticGame:
    game = load_game(path)
    report = validate_game(game)
    if not report.ok:
        raise CLIError(f"{path}: invalid game: " + "; ".join(report.issues))
    return game


def cmd_solve(args) -> int:
    game = _load_valid_game(args.game)
    res = solve_q_star(game, tol=args.tol, max_iter=args.max_iter)
    greedy = greedy_profile(res.q_star)
    save_q(args.out, res.q_star, iterations=res.iterations, final_residual=res.final_residual,
           greedy=[int(a) for a in greedy])
    print(f"iterations: {res.iterations}")
    print(f"residual: {res.final_residual!r}")
    for s in range(game.num_states):
        row = ", ".join(repr(float(x)) for x in res.q_star[s])
        print(f"Q*[{s}] = [{row}]")
    for s, a in enumerate(greedy):
        print(f"greedy[{s}] = {int(a)} {game.decode(int(a))}")
    return 0


def _run_config(args, seed: int) -> RunConfig:
    init_profile = "uniform" if args.initial_profile == "uniform" else int(args.initial_profile)
    return RunConfig(parse_schedule(args.schedule), args.tau, args.stages, seed,
                     args.initial_state, init_profile, args.stride)


def cmd_run(args) -> int:
    game = _load_valid_game(args.game)
    if args.check_bound and not args.qstar:
        raise CLIError("bound comparison requested but no --qstar given")
    q_star = load_q(args.qstar, game) if args.qstar else None
    seeds = list(range(args.seed, args.seed + args.seeds))
    cfg = _run_config(args, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trajs = run_seeds(game, cfg, seeds, q_star)
    for seed, traj in zip(seeds, trajs):
        traj.write_csv(out / f"trajectory_seed{seed}.csv")
    if q_star is None:
        report = {"spec_version": FORMAT_VERSION, "status": "no Q* supplied", "seeds": seeds,
                  "stages": args.stages, "tau": args.tau, "schedule": cfg.schedule.to_string()}
    else:
        report = convergence_report(game, q_star, cfg, seeds, trajs, args.tail_frac, args.slack)
    _write_json(out / "report.json", report)
    status = report.get("status")
    if status == "ok":
        agg = report["aggregate"]
        print(f"bound {report['bound']:.4f} + slack {report['slack']:.4f}; "
              f"median tail max error {agg['tail_max_err']['median']:.4f}; "
              f"median tail optimal play {agg['tail_opt_frac']['median']:.3f}; "
              f"{'PASS' if report['passed'] else 'FAIL'}")
    else:
        print(status)
    return 0


def _chain_q(args, game):
    if args.zero_q:
        return np.zeros_like(game.reward)
    if args.q:
        return load_q(args.q, game)
    return solve_q_star(game).q_star


def cmd_chain(args) -> int:
    game = _load_valid_game(args.game)
    q = _chain_q(args, game)
    chain = ch.build_extended_chain(game, q, args.tau, budget=args.budget)
    pi = ch.stationary_distribution(chain, tol=args.tol)
    states = []
    for s in range(game.num_states):
        marg = ch.state_action_marginal(pi, chain.space, s, conditional=not args.joint)
        soft = ch.joint_softmax(q[s], args.tau)
        gap = float(np.abs(marg - soft).sum())
        states.append({"state": s, "marginal": marg.tolist(), "softmax": soft.tolist(), "l1_gap": gap})
        print(f"state {s}: L1 gap to softmax {gap:.3e}")
    result = {"spec_version": FORMAT_VERSION, "tau": args.tau, "extended_states": chain.size,
              "conditional": not args.joint, "states": states}
    if args.out:
        _write_json(args.out, result)
    return 0


def cmd_couple(args) -> int:
    game = _load_valid_game(args.game)
    schedule = ConstantSchedule(0.0) if args.beta_zero else parse_schedule(args.schedule)
    T = args.epoch_length
    start = args.epoch * T
    init = None
    if args.q:
        frozen = load_q(args.q, game)
    elif args.freeze_both or args.beta_zero:
        frozen = solve_q_star(game).q_star
    else:
        # live mode: learn up to the epoch boundary, then freeze there
        cfg = RunConfig(schedule, args.tau, start, args.seed, stride=max(start, 1))
        state, _ = run(game, cfg)
        frozen = state.q.copy()
        init = ch.ExtendedSpace.of(game).encode(state.state, state.profiles)
    fictional = args.fictional_start
    if fictional == "auto":
        fictional = "stationary" if args.freeze_both else "same"
    fictional_init = "same"
    if fictional == "stationary":
        chain = ch.build_extended_chain(game, frozen, args.tau, budget=args.budget)
        fictional_init = ch.stationary_distribution(chain)
    q_bound = float(np.max(np.abs(frozen))) if args.freeze_both else max(
        game.q_bound, float(np.max(np.abs(frozen))))
    res = ch.coupling_experiment(game, frozen, schedule, args.tau, start, args.stages, args.pairs,
                                 base_seed=args.seed, init=init, fictional_init=fictional_init,
                                 freeze_both=args.freeze_both, q_bound=q_bound)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "coupling.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair", "t", "m_epoch", "matched"])
        for p in range(res.pairs):
            for t in range(res.matched.shape[1]):
                w.writerow([p, start + t, int(res.m_index[t]), int(res.matched[p, t])])
    lam_measured = min(1.0, max(1.0 - res.max_tv, 0.0))
    lam_c = None
    if args.lipschitz is not None:
        lam_c = 1.0 - args.lipschitz * q_bound * T * schedule.beta(start)
    ms, rate, hw = res.per_m()
    rows = []
    for m, r, h in zip(ms, rate, hw):
        row = {"m": int(m), "mismatch": float(r), "half_width_3sigma": float(h)}
        if lam_measured > 0 and res.epsilon > 0:
            raw, clamped = ch.mismatch_bound(res.epsilon, lam_measured, res.kappa, int(m))
            row.update(bound_raw=raw, bound_clamped=clamped,
                       below_bound=bool(r <= clamped + h))
        rows.append(row)
    summary = {"spec_version": FORMAT_VERSION, "epsilon": res.epsilon, "kappa": res.kappa,
               "lambda_measured": lam_measured, "max_one_step_tv": res.max_tv,
               "lambda_lipschitz": lam_c, "pairs": res.pairs, "epoch_start": start,
               "stages": args.stages, "tau": args.tau, "schedule": schedule.to_string(),
               "freeze_both": bool(args.freeze_both), "fictional_start": fictional,
               "per_m": rows}
    _write_json(out / "summary.json", summary)
    print(f"epsilon={res.epsilon:.3e} kappa={res.kappa} lambda={lam_measured:.6f} "
          f"final mismatch={float(res.mismatch_rate()[-1]):.4f}")
    return 0


REPORT_COLUMNS = ["source", "num_states", "num_joint_actions", "gamma", "tau", "schedule",
                  "stages", "seeds", "bound", "slack", "threshold", "median_tail_max_err",
                  "median_tail_opt_frac", "passed"]


def cmd_report(args) -> int:
    files = []
    for inp in args.inputs:
        p = Path(inp)
        if p.is_file():
            files.append(p)
        elif p.is_dir():
            files.extend(sorted(p.rglob("report.json")))
    reports = []
    for f in files:
        rep = json.loads(f.read_text(encoding="utf-8"))
        if rep.get("status") == "ok":
            reports.append((f, rep))
    if not reports:
        raise CLIError("no convergence reports found in " + ", ".join(args.inputs))
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for f, rep in reports:
            agg = rep["aggregate"]
            w.writerow([str(f), rep["game"]["num_states"], rep["game"]["num_joint_actions"],
                        repr(rep["game"]["gamma"]), repr(rep["tau"]), rep["schedule"],
                        rep["stages"], len(rep["seeds"]), repr(rep["bound"]), repr(rep["slack"]),
                        repr(rep["threshold"]), repr(agg["tail_max_err"]["median"]),
                        repr(agg["tail_opt_frac"]["median"]), int(rep["passed"])])
    print(f"{len(reports)} reports -> {args.out}")
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="effq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a random irreducible game")
    p.add_argument("--agents", type=int, default=2)
    p.add_argument("--states", type=int, default=2)
    p.add_argument("--actions", default="2", help="actions per agent: one int or a comma list")
    p.add_argument("--min-prob", type=float, default=0.05)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--reward-low", type=float, default=0.0)
    p.add_argument("--reward-high", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", default="game.json")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="value iteration for the optimal Q-table")
    p.add_argument("--game", required=True)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=100_000)
    p.add_argument("-o", "--out", default="qstar.json")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("run", help="learning runs over a seed list")
    p.add_argument("--game", required=True)
    p.add_argument("--qstar")
    p.add_argument("--check-bound", action="store_true")
    p.add_argument("--stages", type=int, default=100_000)
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--schedule", default="harmonic:c=2")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--stride", type=int, default=100)
    p.add_argument("--tail-frac", type=float, default=0.1)
    p.add_argument("--slack", type=float, default=None)
    p.add_argument("--initial-state", type=int, default=None)
    p.add_argument("--initial-profile", default="uniform")
    p.add_argument("-o", "--out", default="run_out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("chain", help="stationary law of the frozen-Q extended chain")
    p.add_argument("--game", required=True)
    p.add_argument("--tau", type=float, default=0.05)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--q", help="Q-table JSON (default: solve for Q*)")
    g.add_argument("--zero-q", action="store_true")
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--budget", type=int, default=ch.DEFAULT_BUDGET)
    p.add_argument("--joint", action="store_true", help="unconditional marginal")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_chain)

    p = sub.add_parser("couple", help="coupled evolving/frozen chains against the mismatch bound")
    p.add_argument("--game", required=True)
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--schedule", default="harmonic:c=2")
    p.add_argument("--epoch-length", type=int, default=100)
    p.add_argument("--epoch", type=int, default=0)
    p.add_argument("--stages", type=int, default=84, help="coupled stages per pair")
    p.add_argument("--pairs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--q", help="frozen Q-table JSON")
    p.add_argument("--freeze-both", action="store_true")
    p.add_argument("--beta-zero", action="store_true")
    p.add_argument("--fictional-start", choices=["auto", "same", "stationary"], default="auto")
    p.add_argument("--lipschitz", type=float, default=None)
    p.add_argument("--budget", type=int, default=ch.DEFAULT_BUDGET)
    p.add_argument("-o", "--out", default="couple_out")
    p.set_defaults(func=cmd_couple)

    p = sub.add_parser("report", help="merge convergence reports into one CSV")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--out", default="summary.csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one machine-parsable line, nonzero exit
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
