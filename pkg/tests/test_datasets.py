import io
import math

import numpy as np
import pytest

from ikforge import datasets as ds
from ikforge import quaternion as quat
from ikforge.chain import Pose, builtin_chain, fk_batch, limit_violations, min_singular_value


def test_uniform_reproducible(chain):
    a = ds.sample_uniform(chain, 1, seed=4)
    b = ds.sample_uniform(chain, 1, seed=4)
    assert np.array_equal(a.configs, b.configs) and np.array_equal(a.positions, b.positions)
    assert not np.array_equal(a.configs, ds.sample_uniform(chain, 1, seed=5).configs)


def test_uniform_statistics_and_feasibility(chain):
    data = ds.sample_uniform(chain, 10_000, seed=1)
    width = chain.upper - chain.lower
    sigma = width / math.sqrt(12.0) / math.sqrt(len(data))
    assert np.all(np.abs(data.configs.mean(axis=0) - chain.midpoint()) < 3 * sigma)
    assert not limit_violations(chain, data.configs).any()


def test_samples_match_forward_kinematics(chain):
    data = ds.sample_uniform(chain, 200, seed=2)
    p, q = fk_batch(chain, data.configs)
    assert np.abs(p - data.positions).max() <= 1e-12
    assert np.abs(q - data.orientations).max() <= 1e-12
    sample = data[3]
    assert isinstance(sample.pose, Pose) and sample.config is not None


def test_uniform_rejects_empty(planar3):
    with pytest.raises(ValueError):
        ds.sample_uniform(planar3, 0, seed=0)


@pytest.mark.parametrize("name, bound", [("planar3", 1e-9), ("arm6", 1e-6), ("chain15", 0.01)])
def test_singular_sets(name, bound):
    chain = builtin_chain(name)
    data = ds.make_singular_set(chain, 200, seed=3)
    assert len(data) == 200 and data.kind == "singular"
    assert np.all(min_singular_value(chain, data.configs) < bound)
    assert not limit_violations(chain, data.configs).any()


def test_arm6_singular_set_covers_both_manifolds(arm6):
    data = ds.make_singular_set(arm6, 10, seed=0)
    assert np.all(data.configs[0::2, 2] == 0.0)
    assert np.all(data.configs[1::2, 4] == 0.0)


def test_singular_rejection_budget(chain15):
    with pytest.raises(RuntimeError, match="budget"):
        ds.make_singular_set(chain15, 50, seed=0, max_draws=10)


def test_filter_nonsingular(planar3):
    singular = ds.make_singular_set(planar3, 100, seed=0)
    assert len(ds.filter_nonsingular(planar3, singular, 0.1)) == 0

    uniform = ds.sample_uniform(planar3, 2000, seed=0)
    kept = ds.filter_nonsingular(planar3, uniform)
    assert 0 < len(kept) < len(uniform)
    assert kept.kind == "nonsingular"
    assert len(ds.filter_nonsingular(planar3, uniform, 0.0)) == len(uniform)


def test_nonsingular_set_is_topped_up(arm6):
    data = ds.make_nonsingular_set(arm6, 300, seed=1)
    assert len(data) == 300
    assert np.all(min_singular_value(arm6, data.configs) > ds.NONSINGULAR)


def test_unreachable_set(chain):
    data = ds.make_unreachable_set(chain, 2000, seed=5)
    norms = np.linalg.norm(data.positions, axis=1)
    assert np.all(norms > chain.total_length)
    assert not data.has_configs.any()
    assert np.allclose(np.linalg.norm(data.orientations, axis=1), 1.0)
    again = ds.make_unreachable_set(chain, 2000, seed=5)
    assert np.array_equal(again.positions, data.positions)


@pytest.mark.parametrize("name, mean", [("planar3", 3.25), ("arm6", 1.95), ("chain15", 5.28)])
def test_unreachable_mean_distance(name, mean):
    data = ds.make_unreachable_set(builtin_chain(name), 5000, seed=0)
    assert np.linalg.norm(data.positions, axis=1).mean() == pytest.approx(mean, rel=0.1)


def test_unreachable_planar_targets_stay_in_plane(planar3):
    data = ds.make_unreachable_set(planar3, 100, seed=1)
    assert np.all(data.positions[:, 2] == 0.0)
    assert np.all(data.orientations[:, 1:3] == 0.0)


def test_unreachable_rejects_inner_radius(planar3):
    with pytest.raises(ValueError):
        ds.make_unreachable_set(planar3, 10, radius_range=(1.0, 2.0))


def test_line_trajectory(arm6):
    a = Pose([0.5, 0.1, 0.6], quat.from_rpy(0.1, 0.2, 0.3))
    b = Pose([0.3, -0.4, 0.8], quat.from_rpy(-0.5, 0.4, 1.2))
    two = ds.make_line_trajectory(arm6, a, b, 2)
    assert np.array_equal(two.positions, [a.position, b.position])
    assert np.array_equal(two.orientations, [a.orientation, b.orientation])

    line = ds.make_line_trajectory(arm6, a, b, 101)
    assert np.allclose(line.positions[50], 0.5 * (a.position + b.position), atol=1e-15)
    steps = quat.angle_between(line.orientations[:-1], line.orientations[1:])
    assert np.abs(steps - steps[0]).max() < 1e-9
    with pytest.raises(ValueError):
        ds.make_line_trajectory(arm6, a, b, 1)


def test_line_trajectory_antipodal(planar3):
    a = Pose([1.0, 0.0, 0.0])
    b = Pose([0.5, 0.0, 0.0], quat.from_axis_angle([0.0, 0.0, 1.0], math.pi))
    with pytest.raises(ValueError, match="antipodal"):
        ds.make_line_trajectory(planar3, a, b, 10)


def test_csv_roundtrip(arm6):
    data = ds.sample_uniform(arm6, 1000, seed=8)
    back = ds.read_csv(io.StringIO(ds.write_csv(data)), arm6)
    assert np.array_equal(back.configs, data.configs)
    assert np.array_equal(back.positions, data.positions)
    assert np.array_equal(back.orientations, data.orientations)
    assert back.seed == 8 and back.kind == "uniform"


def test_csv_pose_only_rows(planar3, tmp_path):
    data = ds.make_unreachable_set(planar3, 5, seed=0)
    path = tmp_path / "u.csv"
    ds.write_csv(data, path)
    rows = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    assert rows[0] == "q1,q2,q3,px,py,pz,qw,qx,qy,qz"
    assert all(r.startswith(",,,") for r in rows[1:])
    back = ds.read_csv(path, planar3)
    assert back.kind == "unreachable" and not back.has_configs.any()
    assert np.array_equal(back.positions, data.positions)


def test_csv_column_mismatch(planar3, arm6):
    text = ds.write_csv(ds.sample_uniform(planar3, 3, seed=0))
    with pytest.raises(ValueError, match="column"):
        ds.read_csv(io.StringIO(text), arm6)


def test_csv_non_numeric(planar3):
    text = ds.write_csv(ds.sample_uniform(planar3, 3, seed=0))
    lines = text.splitlines()
    lines[2] = "x," + lines[2].split(",", 1)[1]
    with pytest.raises(ValueError, match="non-numeric"):
        ds.read_csv(io.StringIO("\n".join(lines) + "\n"), planar3)


def test_swap_in_unreachable(planar3):
    data = ds.sample_uniform(planar3, 50, seed=0)
    far = ds.make_unreachable_set(planar3, 10, seed=1)
    mixed = ds.swap_in_unreachable(data, far, seed=2)
    assert len(mixed) == 50 and (~mixed.has_configs).sum() == 10
    assert (np.linalg.norm(mixed.positions, axis=1) > planar3.total_length).sum() == 10
    assert np.array_equal(data.configs, ds.sample_uniform(planar3, 50, seed=0).configs)
