import math

import numpy as np
import pytest

from ikforge import datasets, numerical
from ikforge import quaternion as quat
from ikforge.chain import Pose, forward_kinematics, is_feasible, parse_chain_spec, random_config
from ikforge.numerical import NumericalOptions, Status

ONE_JOINT = parse_chain_spec("name one\njoint j xyz 0 0 0 axis 0 0 1 limits -pi pi\ntool xyz 1 0 0\n")


def test_twist_error_examples():
    p = Pose(np.zeros(3))
    assert np.array_equal(numerical.pose_twist_error(p, p), np.zeros(6))
    moved = Pose([0.1, 0.0, 0.0])
    assert np.allclose(numerical.pose_twist_error(p, moved), [0.1, 0, 0, 0, 0, 0], atol=1e-15)
    turned = Pose(np.zeros(3), quat.from_axis_angle([0.0, 0.0, 1.0], math.pi / 2))
    assert np.allclose(numerical.pose_twist_error(p, turned), [0, 0, 0, 0, 0, math.pi / 2], atol=1e-15)


def test_pinv_step_examples(arm6, rng):
    q = random_config(arm6, rng)
    assert np.allclose(numerical.pinv_step(arm6, q, forward_kinematics(arm6, q)), 0.0, atol=1e-15)

    delta = 0.01
    target = forward_kinematics(ONE_JOINT, [delta])
    step = numerical.pinv_step(ONE_JOINT, [0.0], target, damping=1e-6)
    assert step[0] == pytest.approx(delta, rel=1e-4)


def test_undamped_step_solves_linear_system(rng):
    jac = rng.normal(size=(6, 6))
    err = rng.normal(size=6)
    assert np.allclose(jac @ numerical._dls(jac, err, 0.0), err, atol=1e-9)


@pytest.mark.parametrize("strategy", ["pinv", "sqp", "combined"])
def test_exact_seed_returns_immediately(arm6, rng, strategy):
    q = random_config(arm6, rng)
    opts = NumericalOptions(strategy=strategy)
    result = numerical.solve(arm6, forward_kinematics(arm6, q), opts, seed_config=q)
    assert result.solved and result.iterations == 0 and result.restarts == 0
    assert np.array_equal(result.config, q)


@pytest.mark.parametrize("strategy", ["pinv", "sqp", "combined"])
def test_solutions_are_feasible_and_accurate(chain, rng, strategy):
    opts = NumericalOptions(strategy=strategy, max_time=0.05)
    for i in range(20):
        target = forward_kinematics(chain, random_config(chain, rng))
        result = numerical.solve(chain, target, opts)
        assert is_feasible(chain, result.config)
        pose = forward_kinematics(chain, result.config)
        assert np.linalg.norm(pose.position - target.position) == pytest.approx(result.eps_pos, abs=1e-12)
        if result.solved:
            assert result.eps_pos <= opts.pos_tolerance and result.eps_ori <= opts.ori_tolerance


def test_planar3_solve_rate(planar3, rng):
    solved = 0
    for i in range(200):
        target = forward_kinematics(planar3, random_config(planar3, rng))
        solved += numerical.solve(planar3, target, NumericalOptions(restart_seed=i, max_time=0.05)).solved
    assert solved == 200


def test_unreachable_target_reports_distance(planar3):
    target = Pose([2.0, 0.0, 0.0])
    result = numerical.solve(planar3, target, NumericalOptions(max_time=0.01))
    assert result.status is Status.NOT_SOLVED
    assert result.eps_pos >= 2.0 - 1.3 - 1e-9
    assert result.eps_pos < 2.0 - 1.3 + 0.05


def test_restart_cap_status(planar3):
    opts = NumericalOptions(max_time=1.0, max_restarts=2)
    result = numerical.solve(planar3, Pose([3.0, 0.0, 0.0]), opts)
    assert result.status is Status.UNREACHABLE_BUDGET
    assert result.restarts <= 4  # two per stage


def test_sqp_accepted_steps_never_increase_phi(arm6, rng):
    for i in range(100):
        trace = []
        target = forward_kinematics(arm6, random_config(arm6, rng))
        numerical.solve_sqp(arm6, target, opts=NumericalOptions(max_time=0.02, restart_seed=i), trace=trace)
        last = math.inf
        for kind, phi in trace:
            if kind == "start":
                last = phi
            else:
                assert phi <= last
                last = phi


def test_sqp_active_limit():
    chain = parse_chain_spec("""\
name bounded
joint a xyz 0 0 0 axis 0 0 1 limits -pi pi
joint b xyz 0.6 0 0 axis 0 0 1 limits 0.5 2.6
joint c xyz 0.4 0 0 axis 0 0 1 limits -2.6 2.6
tool xyz 0.3 0 0
""")
    target = forward_kinematics(chain, [0.2, 0.5, -0.4])
    opts = NumericalOptions(strategy="sqp", max_time=1.0, pos_tolerance=1e-13, ori_tolerance=1e-13,
                            max_iterations=200, max_restarts=20, restart_seed=3)
    result = numerical.solve_sqp(chain, target, seed_config=[0.0, 1.5, 0.0], opts=opts)
    assert result.config[1] == pytest.approx(0.5, abs=1e-9)
    assert result.eps_pos < 1e-9


def test_combined_matches_pinv_when_first_stage_succeeds(arm6, rng):
    target = forward_kinematics(arm6, random_config(arm6, rng))
    seed = random_config(arm6, rng)
    a = numerical.solve(arm6, target, NumericalOptions(strategy="combined", max_time=1.0), seed_config=seed)
    b = numerical.solve_pinv(arm6, target, seed, NumericalOptions(max_time=1.0))
    if a.solved and a.restarts == b.restarts:
        assert np.array_equal(a.config, b.config)


def test_deterministic_with_restart_cap(arm6, rng):
    target = forward_kinematics(arm6, random_config(arm6, rng))
    opts = NumericalOptions(max_time=10.0, max_restarts=5, restart_seed=9)
    a = numerical.solve(arm6, target, opts)
    b = numerical.solve(arm6, target, opts)
    assert np.array_equal(a.config, b.config) and a.iterations == b.iterations


def test_wall_time_respects_budget(arm6):
    result = numerical.solve(arm6, Pose([5.0, 0.0, 0.0]), NumericalOptions(max_time=0.005))
    assert result.wall_time < 0.005 + 0.005


@pytest.mark.parametrize("bad", [
    dict(max_time=0.0), dict(pos_tolerance=0.0), dict(max_iterations=0),
    dict(damping=-1.0), dict(strategy="newton"), dict(max_restarts=-1),
])
def test_option_validation(bad):
    with pytest.raises(ValueError):
        NumericalOptions(**bad).validate()


def _effort(chain, data):
    solved, iters = 0, []
    for i, (p, q) in enumerate(zip(data.positions, data.orientations)):
        result = numerical.solve(chain, Pose(p, q), NumericalOptions(restart_seed=i, max_time=0.05))
        solved += result.solved
        iters.append(result.iterations)
    return solved / len(iters), float(np.mean(iters))


def test_singular_targets_cost_more(planar3):
    # iteration counts stand in for wall time so the check does not depend on machine load
    rate_s, work_s = _effort(planar3, datasets.make_singular_set(planar3, 200, 7))
    rate_n, work_n = _effort(planar3, datasets.make_nonsingular_set(planar3, 200, 7))
    assert rate_s < rate_n or work_s > work_n
