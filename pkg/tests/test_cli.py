import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from effq.cli import main
from effq.dynamics import read_trajectory_csv
from effq.game import StochasticGame, load_game, save_game


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def _gen(path, *extra):
    assert main(["gen", "--agents", "2", "--states", "2", "--actions", "2", "--gamma", "0.8",
                 "--seed", "7", "-o", str(path), *extra]) == 0


def test_gen_is_deterministic(workdir, capsys):
    _gen("a.json")
    _gen("b.json")
    assert (workdir / "a.json").read_bytes() == (workdir / "b.json").read_bytes()
    assert "valid: True" in capsys.readouterr().out


def test_gen_infeasible_floor(workdir, capsys):
    assert main(["gen", "--min-prob", "0.6", "--states", "2", "-o", "x.json"]) != 0
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: ") and "infeasible" in err[0]


def test_solve_fixture(workdir, capsys):
    save_game(StochasticGame((2,), [[0.0, 1.0]], [[[1.0], [1.0]]], 0.5), "one.json")
    assert main(["solve", "--game", "one.json", "--tol", "1e-10", "-o", "q.json"]) == 0
    out = capsys.readouterr().out
    obj = json.loads((workdir / "q.json").read_text())
    assert obj["spec_version"]
    assert np.allclose(obj["q"], [[1.0, 2.0]], atol=1e-10)
    assert obj["final_residual"] <= 1e-10
    assert obj["greedy"] == [1]
    assert "greedy[0] = 1" in out


def test_solve_zero_discount_writes_reward(workdir):
    reward = [[0.25, -1.5, 3.0, 0.125]]
    save_game(StochasticGame((2, 2), reward, np.ones((1, 4, 1)), 0.0), "g0.json")
    assert main(["solve", "--game", "g0.json", "-o", "q0.json"]) == 0
    assert json.loads((workdir / "q0.json").read_text())["q"] == reward


def test_pipeline_run_and_report(workdir):
    _gen("g.json")
    assert main(["solve", "--game", "g.json", "-o", "q.json"]) == 0
    args = ["run", "--game", "g.json", "--qstar", "q.json", "--stages", "20000", "--tau", "0.05",
            "--schedule", "harmonic:c=2", "--seeds", "2", "--stride", "10"]
    assert main(args + ["-o", "r1"]) == 0
    assert main(args + ["-o", "r2"]) == 0
    for name in ("trajectory_seed0.csv", "trajectory_seed1.csv", "report.json"):
        assert (workdir / "r1" / name).read_bytes() == (workdir / "r2" / name).read_bytes()
    rep = json.loads((workdir / "r1" / "report.json").read_text())
    assert rep["bound"] == pytest.approx(0.05 * math.log(4) / 0.2)
    assert round(rep["bound"], 4) == 0.3466
    # the verdict is recomputable from the trajectory CSVs alone
    tails = []
    for seed in (0, 1):
        traj = read_trajectory_csv(workdir / "r1" / f"trajectory_seed{seed}.csv")
        w = math.ceil(rep["tail_frac"] * len(traj))
        tails.append(traj.q_err_max[-w:].max())
    assert (np.median(tails) <= rep["threshold"]) == rep["passed"]
    for p, t in zip(rep["per_seed"], tails):
        assert p["tail_max_err"] == t

    assert main(["report", "r1", "r2", "-o", "summary.csv"]) == 0
    rows = list(csv.DictReader(open(workdir / "summary.csv")))
    assert len(rows) == 2


def test_run_zero_stages(workdir):
    _gen("g.json")
    main(["solve", "--game", "g.json", "-o", "q.json"])
    assert main(["run", "--game", "g.json", "--qstar", "q.json", "--stages", "0", "-o", "r"]) == 0
    assert (workdir / "r" / "trajectory_seed0.csv").read_text().strip() == \
        "t,state,joint_action,q_err_max,opt_play"
    assert json.loads((workdir / "r" / "report.json").read_text())["status"] == "no data"


def test_run_errors(workdir, capsys):
    _gen("g.json")
    assert main(["run", "--game", "g.json", "--schedule", "cosine:c=1", "-o", "r"]) == 1
    assert main(["run", "--game", "g.json", "--check-bound", "-o", "r"]) == 1
    errs = capsys.readouterr().err.strip().splitlines()
    assert len(errs) == 2 and all(e.startswith("error: ") for e in errs)


def test_tau_sweep_bound_linear(workdir):
    _gen("g.json")
    main(["solve", "--game", "g.json", "-o", "q.json"])
    for tau in ("0.02", "0.05", "0.1"):
        assert main(["run", "--game", "g.json", "--qstar", "q.json", "--stages", "2000",
                     "--tau", tau, "-o", f"sweep/tau{tau}"]) == 0
    assert main(["report", "sweep", "-o", "sweep.csv"]) == 0
    rows = list(csv.DictReader(open(workdir / "sweep.csv")))
    ratios = [float(r["bound"]) / float(r["tau"]) for r in rows]
    assert len(rows) == 3
    assert np.allclose(ratios, ratios[0], rtol=1e-12)


def test_report_empty_directory(workdir, capsys):
    (workdir / "empty").mkdir()
    assert main(["report", "empty", "-o", "s.csv"]) != 0
    assert "no convergence reports" in capsys.readouterr().err


def test_chain_commands(workdir, capsys):
    save_game(StochasticGame((2, 2), [[0.1, 0.4, 0.9, 0.3]], np.ones((1, 4, 1)), 0.5), "one.json")
    assert main(["chain", "--game", "one.json", "--tau", "0.2", "-o", "c.json"]) == 0
    obj = json.loads((workdir / "c.json").read_text())
    assert obj["states"][0]["l1_gap"] <= 1e-8
    _gen("g.json")
    assert main(["chain", "--game", "g.json", "--zero-q", "--tau", "0.5", "-o", "z.json"]) == 0
    for st in json.loads((workdir / "z.json").read_text())["states"]:
        assert np.allclose(st["marginal"], 0.25, atol=1e-8)


def test_chain_budget_error(workdir, capsys):
    assert main(["gen", "--agents", "2", "--states", "3", "--actions", "4", "-o", "big.json"]) == 0
    capsys.readouterr()
    assert main(["chain", "--game", "big.json", "--zero-q", "--budget", "10000"]) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: BudgetError") and "12288" in err


def test_couple_modes(workdir):
    _gen("g.json")
    assert main(["couple", "--game", "g.json", "--beta-zero", "--pairs", "20", "--stages", "40",
                 "-o", "bz"]) == 0
    rows = list(csv.DictReader(open(workdir / "bz" / "coupling.csv")))
    assert rows and all(r["matched"] == "1" for r in rows)

    assert main(["couple", "--game", "g.json", "--freeze-both", "--tau", "1.0", "--pairs", "200",
                 "--stages", "40", "-o", "fb"]) == 0
    summary = json.loads((workdir / "fb" / "summary.json").read_text())
    assert summary["lambda_measured"] == 1.0
    for row in summary["per_m"]:
        assert row["below_bound"]
        assert row["bound_raw"] == pytest.approx((1 - summary["epsilon"] ** summary["kappa"]) ** row["m"])

    assert main(["couple", "--game", "g.json", "--epoch", "50", "--epoch-length", "100",
                 "--tau", "0.5", "--pairs", "20", "--stages", "40", "--lipschitz", "2", "-o", "lv"]) == 0
    summary = json.loads((workdir / "lv" / "summary.json").read_text())
    assert 0 < summary["lambda_measured"] <= 1
    assert summary["lambda_lipschitz"] is not None
    assert all("bound_clamped" in r for r in summary["per_m"])


def test_every_command_is_byte_reproducible(workdir):
    def outputs(tag):
        (workdir / tag).mkdir()
        _gen(f"{tag}/g.json")
        main(["solve", "--game", f"{tag}/g.json", "-o", f"{tag}/q.json"])
        main(["run", "--game", f"{tag}/g.json", "--qstar", f"{tag}/q.json", "--stages", "5000",
              "-o", f"{tag}/run"])
        main(["chain", "--game", f"{tag}/g.json", "--tau", "0.3", "-o", f"{tag}/chain.json"])
        main(["couple", "--game", f"{tag}/g.json", "--pairs", "10", "--stages", "20",
              "--epoch", "3", "--epoch-length", "10", "-o", f"{tag}/couple"])
        main(["report", f"{tag}/run", "-o", f"{tag}/summary.csv"])
        return {p.relative_to(workdir / tag): p.read_bytes()
                for p in sorted((workdir / tag).rglob("*")) if p.is_file()}

    a, b = outputs("a"), outputs("b")
    assert set(a) == set(b) and len(a) >= 8
    for key in a:
        if key.name == "summary.csv":
            # the source column names the input directory
            assert a[key].replace(b"a/", b"") == b[key].replace(b"b/", b"")
        else:
            assert a[key] == b[key], key


def test_console_script_entry_point(workdir):
    res = subprocess.run([sys.executable, "-m", "effq.cli", "gen", "-o", "m.json"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert load_game(workdir / "m.json").n == 2
