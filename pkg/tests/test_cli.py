import subprocess
import sys

from ikforge import __version__
from ikforge import datasets as ds
from ikforge import distal
from ikforge.chain import builtin_chain, forward_kinematics
from ikforge.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_info(capsys):
    code, out, _ = run(capsys, "info", "--chain", "planar3")
    assert code == 0
    assert "dof: 3" in out and "reach: 1.3 m" in out


def test_info_from_file(capsys, tmp_path):
    path = tmp_path / "one.chain"
    path.write_text("name one\njoint j axis 0 0 1 limits -1 1\ntool xyz 0.5 0 0\n")
    code, out, _ = run(capsys, "info", "--chain", str(path))
    assert code == 0 and "dof: 1" in out


def test_usage_errors_exit_1(capsys):
    assert run(capsys, "info", "--bogus")[0] == 1
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys)[0] == 1
    assert run(capsys, "solve", "--pose", "1", "2")[0] == 1


def test_runtime_errors_exit_2(capsys, tmp_path):
    assert run(capsys, "info", "--chain", str(tmp_path / "missing.chain"))[0] == 2
    assert run(capsys, "eval", "--data", str(tmp_path / "missing.csv"))[0] == 2


def test_gen_is_reproducible_and_self_describing(capsys, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(capsys, "gen", "--chain", "arm6", "--count", "20", "--seed", "7", "--out", str(a))[0] == 0
    assert run(capsys, "gen", "--chain", "arm6", "--count", "20", "--seed", "7", "--out", str(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    head = a.read_text().splitlines()[0]
    assert "chain=arm6" in head and "seed=7" in head and f"version={__version__}" in head
    data = ds.read_csv(a, builtin_chain("arm6"))
    assert len(data) == 20


def test_gen_kinds(capsys, tmp_path):
    for kind in ("singular", "nonsingular", "unreachable"):
        out = tmp_path / f"{kind}.csv"
        assert run(capsys, "gen", "--kind", kind, "--count", "10", "--out", str(out))[0] == 0
        assert ds.read_csv(out, builtin_chain("planar3")).kind == kind
    out = tmp_path / "t.csv"
    code = run(capsys, "gen", "--kind", "trajectory", "--count", "5", "--out", str(out),
               "--start", "1", "0", "0", "1", "0", "0", "0", "--end", "0.5", "0.5", "0", "1", "0", "0", "0")[0]
    assert code == 0 and len(ds.read_csv(out, builtin_chain("planar3"))) == 5
    assert run(capsys, "gen", "--kind", "trajectory", "--count", "5")[0] == 1


def test_solve_analytical_prints_branches(capsys):
    arm6 = builtin_chain("arm6")
    pose = forward_kinematics(arm6, [0.1, 0.4, -0.8, 0.3, 0.6, -0.2]).as_array()
    code, out, _ = run(capsys, "solve", "--chain", "arm6", "--method", "analytical",
                       "--pose", *(repr(float(v)) for v in pose))
    assert code == 0
    assert "branches: 8" in out
    assert out.count("eps_pos=") == 8


def test_solve_numerical(capsys):
    code, out, _ = run(capsys, "solve", "--method", "numerical", "--pose", "0.8", "0.4", "0", "1", "0", "0", "0")
    assert code == 0 and "[0]" in out and "chain=planar3" in out


def test_train_uses_chain_presets(capsys, tmp_path):
    data = tmp_path / "d.csv"
    model = tmp_path / "m.txt"
    assert run(capsys, "gen", "--chain", "chain15", "--count", "20", "--out", str(data))[0] == 0
    code, _, _ = run(capsys, "train", "--chain", "chain15", "--data", str(data), "--hidden", "4",
                     "--epochs", "1", "--out", str(model), "--quiet")
    assert code == 0
    loaded = distal.load_model(str(model), builtin_chain("chain15"))
    assert loaded.spec.activation == "tanh" and loaded.meta["weight_decay"] == 0.03
    code, _, _ = run(capsys, "train", "--chain", "chain15", "--data", str(data), "--hidden", "4",
                     "--epochs", "1", "--activation", "relu", "--weight-decay", "0", "--out", str(model), "--quiet")
    loaded = distal.load_model(str(model), builtin_chain("chain15"))
    assert loaded.spec.activation == "relu" and loaded.meta["weight_decay"] == 0.0


def test_train_eval_and_traj(capsys, tmp_path):
    data = tmp_path / "d.csv"
    model = tmp_path / "m.txt"
    assert run(capsys, "gen", "--count", "200", "--seed", "1", "--out", str(data))[0] == 0
    code, out, _ = run(capsys, "train", "--data", str(data), "--hidden", "8", "--epochs", "2",
                       "--out", str(model), "--quiet")
    assert code == 0 and model.exists()
    assert "seed=0" in model.read_text()

    code, out, _ = run(capsys, "eval", "--data", str(data), "--method", "distal", "--model", str(model),
                       "--batch", "32")
    assert code == 0
    lines = [ln for ln in out.splitlines() if not ln.startswith("#")]
    assert lines[0].startswith("solver,dataset,n_queries")
    assert lines[1].startswith("distal,d,200,") and lines[2].startswith("distal-batch32,d,200,")

    code, out, _ = run(capsys, "eval", "--data", str(data), "--method", "analytical", "--format", "markdown")
    assert code == 0 and "| analytical | d | 200 | 1 |" in out

    code, out, _ = run(capsys, "traj", "--method", "numerical", "--waypoints", "10",
                       "--start", "1", "0", "0", "1", "0", "0", "0", "--end", "0.6", "0.6", "0", "1", "0", "0", "0")
    assert code == 0
    row = [ln for ln in out.splitlines() if ln.startswith("numerical")][0]
    assert row.endswith(",0")


def test_distal_requires_model(capsys, tmp_path):
    assert run(capsys, "solve", "--method", "distal", "--pose", "1", "0", "0", "1", "0", "0", "0")[0] == 1


def test_chain_dataset_mismatch(capsys, tmp_path):
    data = tmp_path / "d.csv"
    run(capsys, "gen", "--count", "5", "--out", str(data))
    assert run(capsys, "eval", "--chain", "arm6", "--data", str(data))[0] == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ikforge", "info", "--chain", "chain15"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and "dof: 15" in proc.stdout
