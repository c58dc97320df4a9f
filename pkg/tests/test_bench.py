import math

import numpy as np
import pytest

from ikforge import bench
from ikforge import datasets as ds
from ikforge import distal as dt
from ikforge.bench import Report, Thresholds


class GarbageSolver(bench.Solver):
    """Claims success but returns a fixed configuration."""

    name = "garbage"

    def __call__(self, pose, seed_config=None):
        return np.full(self.chain.dof, 0.123)


class OutOfLimits(bench.Solver):
    name = "wild"

    def __call__(self, pose, seed_config=None):
        return np.full(self.chain.dof, 3.0)


def test_thresholds_validation():
    with pytest.raises(ValueError):
        Thresholds(0.0, 0.1)


def test_analytical_planar3_solves_everything(planar3):
    data = ds.sample_uniform(planar3, 300, seed=0)
    report = bench.evaluate(bench.make_solver(planar3, "analytical"), data)
    assert report.solve_rate == 1.0 and report.eta == 0.0 and report.n_queries == 300
    assert report.eps_pos_mean < 1e-9


def test_garbage_solver_is_not_believed(arm6):
    data = ds.sample_uniform(arm6, 50, seed=1)
    report = bench.evaluate(GarbageSolver(arm6), data)
    assert report.solve_rate == 0.0


def test_eta_counts_infeasible_predictions(planar3):
    data = ds.sample_uniform(planar3, 20, seed=1)
    assert bench.evaluate(OutOfLimits(planar3), data).eta == 1.0


def test_chain_mismatch(planar3, arm6):
    data = ds.sample_uniform(arm6, 5, seed=1)
    with pytest.raises(bench.ChainMismatchError):
        bench.evaluate(bench.make_solver(planar3, "analytical"), data)


def test_mean_target_norm(planar3):
    data = ds.make_unreachable_set(planar3, 100, seed=0)
    report = bench.evaluate(bench.make_solver(planar3, "analytical"), data)
    assert report.mean_target_norm == pytest.approx(np.linalg.norm(data.positions, axis=1).mean())
    assert report.solve_rate == 0.0


def test_count_discontinuities():
    assert bench.count_discontinuities([np.zeros(3)] * 5) == 0
    seq = [np.zeros(3), np.zeros(3), np.array([0.0, math.pi, 0.0]), np.array([0.0, math.pi, 0.0])]
    assert bench.count_discontinuities(seq) == 1
    with pytest.raises(ValueError):
        bench.count_discontinuities([np.zeros(3)])
    with pytest.raises(ValueError):
        bench.count_discontinuities([np.zeros(3), np.zeros(4)])


def test_numerical_trajectory_is_seeded(planar3):
    from ikforge.chain import Pose
    from ikforge import quaternion as quat
    a = Pose([0.9, 0.3, 0.0], quat.from_axis_angle([0, 0, 1], 0.4))
    b = Pose([0.6, 0.7, 0.0], quat.from_axis_angle([0, 0, 1], 1.0))
    traj = ds.make_line_trajectory(planar3, a, b, 30)
    report, configs = bench.evaluate_trajectory(bench.make_solver(planar3, "numerical"), traj)
    assert report.discontinuities == 0 and report.solve_rate == 1.0
    assert configs.shape == (30, 3)


def test_batched_mode_matches_sequential(planar3):
    model = dt.TrainedModel("planar3", 3, dt.MlpSpec.for_chain(planar3, hidden=(8,)),
                            dt.init_mlp(dt.MlpSpec.for_chain(planar3, hidden=(8,))), 1 / 1.3)
    data = ds.sample_uniform(planar3, 70, seed=0)
    solver = bench.make_solver(planar3, "distal", model)
    seq = bench.evaluate(solver, data)
    bat = bench.evaluate(solver, data, batch_size=32)
    assert bat.solver == "distal-batch32"
    assert seq.eps_pos_mean == pytest.approx(bat.eps_pos_mean, rel=1e-12)
    with pytest.raises(ValueError):
        bench.run_batched(bench.make_solver(planar3, "analytical"), data)


def test_distal_solver_rejects_other_chain(arm6, planar3):
    spec = dt.MlpSpec.for_chain(planar3, hidden=(4,))
    model = dt.TrainedModel("planar3", 3, spec, dt.init_mlp(spec), 1.0)
    with pytest.raises(bench.ChainMismatchError):
        bench.make_solver(arm6, "distal", model)


def _report(**kw):
    base = dict(solver="numerical-combined", dataset="planar3-uniform", n_queries=1000, solve_rate=0.987654321,
                eta=0.0, eps_pos_mean=1.23456789e-5, eps_pos_std=2e-6, eps_ori_mean=3.3e-5, eps_ori_std=1e-6,
                mean_target_norm=0.912345678, time_ms_mean=0.4321, time_ms_std=0.1, discontinuities=None)
    base.update(kw)
    return Report(**base)


def test_csv_header_schema():
    text = bench.emit_report(_report())
    assert text.splitlines()[0] == ("solver,dataset,n_queries,solve_rate,eta,eps_pos_mean,eps_pos_std,"
                                    "eps_ori_mean,eps_ori_std,mean_target_norm,time_ms_mean,time_ms_std,"
                                    "discontinuities")
    assert "0.987654," in text and "1.23457e-05" in text


@pytest.mark.parametrize("fmt", ["csv", "markdown"])
def test_report_roundtrip(fmt):
    reports = [_report(), _report(solver="distal", discontinuities=3)]
    back = bench.parse_report(bench.emit_report(reports, fmt))
    again = bench.emit_report(back, fmt)
    assert again == bench.emit_report(reports, fmt)
    assert back[1].discontinuities == 3 and back[0].discontinuities is None
    assert back[0].solve_rate == pytest.approx(0.987654, abs=1e-12)


def test_report_output_deterministic():
    assert bench.emit_report(_report(), "markdown") == bench.emit_report(_report(), "markdown")
    with pytest.raises(ValueError):
        bench.emit_report(_report(), "html")
