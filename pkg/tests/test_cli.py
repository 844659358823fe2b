import numpy as np
import pytest

from sampledsde import cli, presets
from sampledsde.tables import read_csv

LINEAR_DOC = """
n_paths = 50
seed = 3

[model]
name = "scalar_linear"
params = {a = 2.0, k = 1.0}

[simulation]
epsilon = 0.25
delta = 0.25
horizon = 1.0
dt = 0.0078125

[sweep]
pairs = [[0.25, 0.25], [0.125, 0.125], [0.0625, 0.0625]]

[outputs]
directory = "unused"
trajectory_path_id = 2
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(LINEAR_DOC.replace('dt = 0.0078125', 'dt = 0.0078125\nx0 = [1.0]'))
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_run_writes_all_tables(tmp_path, config_file, capsys):
    out = tmp_path / "out"
    assert run("run", config_file, "--out", out) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["ratefit.csv", "summaries.csv", "trajectories_00_eps_0.25.csv",
                     "trajectories_01_eps_0.125.csv", "trajectories_02_eps_0.0625.csv"]
    columns, rows = read_csv(out / "summaries.csv")
    assert len(rows) == 3 and columns[0] == "epsilon"
    columns, rows = read_csv(out / "trajectories_02_eps_0.0625.csv")
    assert columns == ["t", "X_1", "x_1", "Z_1", "err_1"]
    assert len(rows) == 129
    for t, X, x, Z, err in rows:
        assert err == pytest.approx(X - x - 0.0625 * Z, abs=1e-15)


def test_rerun_is_byte_identical_across_threads(tmp_path, config_file):
    assert run("run", config_file, "--out", tmp_path / "a", "--threads", 1) == 0
    assert run("run", config_file, "--out", tmp_path / "b", "--threads", 3) == 0
    for path in (tmp_path / "a").iterdir():
        assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes()


def test_existing_outputs_need_overwrite(tmp_path, config_file, capsys):
    out = tmp_path / "out"
    assert run("run", config_file, "--out", out) == 0
    before = (out / "summaries.csv").read_bytes()
    assert run("run", config_file, "--out", out, "--seed", 9) == 1
    assert "overwrite" in capsys.readouterr().err
    assert (out / "summaries.csv").read_bytes() == before
    assert run("run", config_file, "--out", out, "--seed", 9, "--overwrite") == 0
    assert (out / "summaries.csv").read_bytes() != before


def test_flags_override_config(tmp_path, config_file):
    out = tmp_path / "out"
    assert run("run", config_file, "--out", out, "--paths", 7, "--grid-mode", "grid-snap") == 0
    _, rows = read_csv(out / "summaries.csv")
    assert all(row[4] == 7 for row in rows)


def test_validation_errors_exit_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(LINEAR_DOC)  # no x0
    assert run("run", bad, "--out", tmp_path / "o") != 0
    assert "simulation.x0" in capsys.readouterr().err
    assert run("run", tmp_path / "missing.toml") != 0
    assert "missing.toml" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        run("preset", "pendulum-sweep", "--out", tmp_path / "o", "--seed", -1)
    assert info.value.code != 0


def test_all_paths_diverging_exits_nonzero(tmp_path, capsys):
    doc = LINEAR_DOC.replace("a = 2.0, k = 1.0", "a = 1e300, k = 1e300").replace(
        "dt = 0.0078125", "dt = 0.0078125\nx0 = [1.0]")
    path = tmp_path / "exp.toml"
    path.write_text(doc)
    assert run("run", path, "--out", tmp_path / "o") == 1
    assert "diverged" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_unwritable_output_exits_nonzero(tmp_path, config_file, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("run", config_file, "--out", blocker / "sub") == 1
    assert "error" in capsys.readouterr().err


def test_check_jacobians_verb(capsys):
    assert run("check-jacobians", "pendulum") == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 3
    assert run("check-jacobians", "scalar_linear", "--param", "a=3", "--param", "k=0.5") == 0
    assert run("check-jacobians", "scalar_linear", "--param", "q=1") == 2


def test_pendulum_preset_files(tmp_path):
    written = cli.run_preset_pendulum_sweep(tmp_path, n_paths=20, threads=2)
    names = sorted(p.name for p in written)
    assert names == ["ratefit.csv", "summaries.csv", "trajectories_02_eps_0.125.csv",
                     "trajectories_04_eps_0.03125.csv"]
    _, rows = read_csv(tmp_path / "summaries.csv")
    assert [r[0] for r in rows] == list(presets.PENDULUM_EPSILONS)
    grid = presets.pendulum_sweep_config().simulation.grid()
    columns, rows = read_csv(tmp_path / "trajectories_04_eps_0.03125.csv")
    assert len(rows) == grid.n_nodes == 257
    assert columns == ["t", "X_1", "X_2", "x_1", "x_2", "Z_1", "Z_2", "err_1", "err_2"]
    assert np.all(np.isfinite(np.array(rows)))


def test_pendulum_preset_cli_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run("preset", "pendulum-sweep", "--out", tmp_path / name, "--paths", 20,
                   "--threads", 2 if name == "a" else 1) == 0
    for path in (tmp_path / "a").iterdir():
        assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes()


def test_linear_oracle_preset_small(tmp_path, monkeypatch):
    monkeypatch.setattr(presets, "RATE_DT", 2.0 ** -10)
    monkeypatch.setattr(presets, "RATE_EPSILONS", (2.0 ** -2, 2.0 ** -3, 2.0 ** -4))
    assert run("preset", "linear-oracle", "--out", tmp_path, "--paths", 200) == 0
    columns, rows = read_csv(tmp_path / "oracle.csv")
    assert columns == ["quantity", "estimate", "se", "exact", "z_score"]
    assert [r[0] for r in rows] == ["mean_Z_T", "var_Z_T"]
    _, rows = read_csv(tmp_path / "summaries.csv")
    assert len(rows) == 3
