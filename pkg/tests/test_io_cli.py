import numpy as np
import pytest

from tdrope import io as tio
from tdrope.adaptive import BootstrapInterval, LepskiOutcome
from tdrope.cli import main
from tdrope.density_ratio import DensityRatioTable
from tdrope.estimators import EstimatorResult, TruncationSchedule
from tdrope.mdp import ChainMdp, PolicyTable, Trajectory, make_rng, sample_trajectory
from tdrope.value_learning import DIFFERENTIAL, QTable


def test_trajectory_round_trip(tmp_path):
    traj = sample_trajectory(ChainMdp(), PolicyTable.constant(0.2), 40, 1, make_rng(0))
    tio.write_trajectory(tmp_path / "t.csv", traj)
    text = (tmp_path / "t.csv").read_text()
    assert text.startswith("t,state,action,reward\n") and text.endswith(f"40,{traj.terminal_state},,\n")
    back = tio.read_trajectory(tmp_path / "t.csv")
    for a, b in zip((traj.states, traj.actions, traj.rewards, traj.next_states),
                    (back.states, back.actions, back.rewards, back.next_states)):
        assert np.array_equal(a, b)


def test_trajectory_errors(tmp_path):
    gap = Trajectory(np.array([1, 1]), np.array([0, 1]), np.zeros(2), np.array([2, 1]))
    with pytest.raises(ValueError):
        tio.write_trajectory(tmp_path / "x.csv", gap)
    (tmp_path / "bad.csv").write_text("t,state,action,reward\n0,1,0,1.0\n2,1,,\n")
    with pytest.raises(ValueError):
        tio.read_trajectory(tmp_path / "bad.csv")
    (tmp_path / "hdr.csv").write_text("a,b\n")
    with pytest.raises(ValueError):
        tio.read_trajectory(tmp_path / "hdr.csv")


def test_qtable_round_trip(tmp_path):
    q = QTable(np.random.default_rng(0).normal(size=(4, 2)), DIFFERENTIAL, None, 1.25)
    tio.write_qtable(tmp_path / "q.csv", q)
    assert (tmp_path / "q.csv").read_text().splitlines()[1] == "state,action,value"
    back = tio.read_qtable(tmp_path / "q.csv")
    assert np.array_equal(back.values, q.values) and back.kind == DIFFERENTIAL and back.theta_hat == 1.25
    q2 = QTable(np.ones((2, 2)), gamma=0.5)
    tio.write_qtable(tmp_path / "q2.csv", q2)
    assert tio.read_qtable(tmp_path / "q2.csv").gamma == 0.5


def test_omega_round_trip(tmp_path):
    w = DensityRatioTable(np.array([0.0, 1.5, 2.25]))
    tio.write_omega(tmp_path / "w.csv", w)
    assert np.array_equal(tio.read_omega(tmp_path / "w.csv").values, w.values)


def test_result_rows(tmp_path):
    res = EstimatorResult("TDR", 1.5, TruncationSchedule("t", 0.7), 3, 2.0, 100)
    tio.write_estimator_results(tmp_path / "e.csv", [res])
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines == ["estimator,schedule_mode,alpha,T,estimate,variance,n_truncated", "TDR,t,0.7,100,1.5,2.0,3"]
    ci = BootstrapInterval(1.0, 0.5, 0.5, 1.5)
    out = LepskiOutcome(1, [ci, ci], [1.0, 1.1], (TruncationSchedule("t", 1.0), TruncationSchedule("t", 0.5)))
    tio.write_lepski(tmp_path / "l.csv", out)
    lines = (tmp_path / "l.csv").read_text().splitlines()
    assert lines[1] == "grid_index,alpha,mean,sd,lo,hi,selected" and lines[3].endswith(",1")


class TestCli:
    def test_pipeline(self, tmp_path, capsys):
        cfg = tmp_path / "e.ini"
        assert main(["config", "--preset", "exp4", "--out", str(cfg)]) == 0
        assert main(["simulate", "--config", str(cfg), "--T", "300", "--seed", "3",
                     "--out", str(tmp_path / "t.csv")]) == 0
        assert main(["nuisances", "--config", str(cfg), "--q-out", str(tmp_path / "q.csv"),
                     "--omega-out", str(tmp_path / "w.csv")]) == 0
        args = ["--config", str(cfg), "--trajectory", str(tmp_path / "t.csv"), "--q", str(tmp_path / "q.csv"),
                "--omega", str(tmp_path / "w.csv")]
        assert main(["estimate", *args, "--schedule", "none", "--schedule", "t:0.7",
                     "--out", str(tmp_path / "e.csv")]) == 0
        assert len((tmp_path / "e.csv").read_text().splitlines()) == 3
        assert main(["lepski", *args, "--B", "20", "--out", str(tmp_path / "l.csv")]) == 0
        assert len((tmp_path / "l.csv").read_text().splitlines()) == 7
        assert "selected" in capsys.readouterr().out

    def test_experiment(self, tmp_path):
        out = tmp_path / "r.csv"
        assert main(["experiment", "--preset", "exp1", "--replications", "4", "--horizons", "50", "80",
                     "--threads", "2", "--out", str(out)]) == 0
        assert len([l for l in out.read_text().splitlines() if not l.startswith("#")]) == 7

    def test_config_error(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("[nonsense]\n")
        assert main(["experiment", "--config", str(bad), "--out", str(tmp_path / "r.csv")]) == 2
        assert main(["experiment", "--out", str(tmp_path / "r.csv")]) == 2
        assert main(["estimate", "--preset", "exp1", "--trajectory", str(tmp_path / "none.csv"),
                     "--q", "q", "--omega", "w"]) == 2

    def test_numerical_failure(self, tmp_path):
        traj = sample_trajectory(ChainMdp(), PolicyTable.constant(0.2), 20, 1, make_rng(0))
        tio.write_trajectory(tmp_path / "t.csv", traj)
        tio.write_qtable(tmp_path / "q.csv", QTable.zeros(21, DIFFERENTIAL))
        tio.write_omega(tmp_path / "w.csv", DensityRatioTable(np.zeros(21)))
        cfg = tmp_path / "lr.ini"
        cfg.write_text("[experiment]\nhorizons = 20\n[setup]\nkind = chain\n[policy]\nbehavior = 0.2\n"
                       "evaluation = 1\n[objective]\nkind = longrun\n")
        code = main(["estimate", "--config", str(cfg), "--trajectory", str(tmp_path / "t.csv"),
                     "--q", str(tmp_path / "q.csv"), "--omega", str(tmp_path / "w.csv")])
        assert code == 3

    def test_module_entry(self):
        import subprocess
        import sys
        out = subprocess.run([sys.executable, "-m", "tdrope", "config", "--preset", "exp1"],
                             capture_output=True, text=True, check=True)
        assert out.stdout.startswith("[experiment]")
