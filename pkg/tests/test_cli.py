"""Command-line interface: exit codes, artifacts, configuration handling."""

import os
import subprocess
import sys

import pytest

from tvcontrol.cli import ConfigError, main, parse_config_file

FAST_ARGS = [
    "--problem", "example1",
    "--n-rings", "6",
    "--n-sectors", "24",
]


@pytest.fixture(scope="module")
def solve_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("solve")
    code = main(["solve", *FAST_ARGS, "--out", str(out)])
    return code, out


def test_solve_exit_code_zero(solve_run):
    code, _ = solve_run
    assert code == 0


def test_solve_writes_artifacts(solve_run):
    _, out = solve_run
    assert (out / "trace.csv").is_file()
    assert (out / "fields.vtk").is_file()
    assert (out / "summary.txt").is_file()


def test_trace_csv_header(solve_run):
    _, out = solve_run
    header = (out / "trace.csv").read_text().splitlines()[0]
    assert header == "i,gamma,delta,sigma,newton_steps,control_steps,objective,tau,tau_u,e_j,e_u,e_y,e_p"


def test_vtk_first_line(solve_run):
    _, out = solve_run
    first = (out / "fields.vtk").read_text().splitlines()[0]
    assert first == "# vtk DataFile Version 3.0"


def test_summary_line_format(solve_run, capsys):
    _, out = solve_run
    summary = (out / "summary.txt").read_text().strip()
    parts = summary.split()
    assert len(parts) == 4
    keys = [p.split("=")[0] for p in parts]
    assert keys == ["gamma_final", "it", "it_u", "e_j"]
    assert float(parts[0].split("=")[1]) > 0
    assert int(parts[1].split("=")[1]) > 0
    assert int(parts[2].split("=")[1]) > 0
    assert float(parts[3].split("=")[1]) >= 0


def test_config_file_unknown_key_names_it(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("gamm = 0.01\n")
    with pytest.raises(ConfigError, match="gamm"):
        parse_config_file(str(cfg))


def test_config_file_bad_syntax_reports_line(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("# comment\nnot-an-assignment\n")
    with pytest.raises(ConfigError, match=":2"):
        parse_config_file(str(cfg))


def test_config_file_parses_values(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "problem = example2\n"
        "beta = 1e-4       # misfit weight\n"
        "n = 16\n"
        "adapt_sigma = false\n"
        "nested_thresholds = 1e-2, 1e-4\n"
    )
    values = parse_config_file(str(cfg))
    assert values == {
        "problem": "example2",
        "beta": 1e-4,
        "n": 16,
        "adapt_sigma": False,
        "nested_thresholds": [1e-2, 1e-4],
    }


def test_bad_config_exit_code_one(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("no_such_key = 1\n")
    code = main(["solve", "--config", str(cfg), "--out", str(tmp_path)])
    assert code == 1
    assert "no_such_key" in capsys.readouterr().err


def test_missing_config_file_exit_code_one(tmp_path, capsys):
    code = main(["solve", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)])
    assert code == 1
    assert "configuration error" in capsys.readouterr().err


def test_unknown_problem_exit_code_one(tmp_path, capsys):
    code = main(["solve", "--problem", "example1", "--kappa", "-1", "--out", str(tmp_path)])
    assert code == 1


def test_solver_failure_exit_code_two(tmp_path, capsys):
    # A one-stage outer budget cannot reach the increment test.
    cfg = tmp_path / "hard.cfg"
    cfg.write_text("problem = example1\nn_rings = 6\nn_sectors = 24\nkappa = 1e-30\n")
    import tvcontrol.cli as cli_mod
    from tvcontrol.path_following import PathConfig

    orig = cli_mod._path_config

    def tiny_budget(cfg_obj, problem):
        pconf = orig(cfg_obj, problem)
        pconf.max_outer = 2
        return pconf

    cli_mod._path_config = tiny_budget
    try:
        code = main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")])
    finally:
        cli_mod._path_config = orig
    assert code == 2
    assert "solver failure" in capsys.readouterr().err
    assert (tmp_path / "o" / "trace.csv").is_file()  # partial trace is kept


def test_flag_overrides_config(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("problem = example1\nn_rings = 6\nn_sectors = 24\ngamma0 = 0.01\n")
    out = tmp_path / "o"
    code = main(["solve", "--config", str(cfg), "--gamma0", "0.02", "--out", str(out)])
    assert code == 0
    first_row = (out / "trace.csv").read_text().splitlines()[1]
    assert float(first_row.split(",")[1]) == pytest.approx(0.02)


def test_out_dir_from_environment(tmp_path, monkeypatch):
    target = tmp_path / "env_out"
    monkeypatch.setenv("TVC_OUT_DIR", str(target))
    code = main(["solve", *FAST_ARGS])
    assert code == 0
    assert (target / "summary.txt").is_file()


def test_output_determinism(tmp_path):
    """Two runs from the same configuration produce byte-identical artifacts."""
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["solve", *FAST_ARGS, "--out", str(out)]) == 0
        outs.append(out)
    for fname in ("trace.csv", "fields.vtk", "summary.txt"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()


def test_sweep_creates_per_value_runs(tmp_path):
    out = tmp_path / "sweep"
    code = main([
        "sweep", *FAST_ARGS, "--parameter", "sigma", "--values", "0.5,0.7",
        "--out", str(out),
    ])
    assert code == 0
    assert (out / "sweep.csv").is_file()
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "sigma,exit_code,directory"
    assert len(lines) == 3
    for value in ("0.5", "0.7"):
        assert (out / f"sigma_{value}" / "summary.txt").is_file()


def test_sweep_fixed_sigma_is_constant(tmp_path):
    out = tmp_path / "sweep"
    assert main([
        "sweep", *FAST_ARGS, "--parameter", "sigma", "--values", "0.5",
        "--out", str(out),
    ]) == 0
    rows = (out / "sigma_0.5" / "trace.csv").read_text().splitlines()[1:]
    sigmas = {row.split(",")[3] for row in rows}
    assert len(sigmas) == 1


def test_verify_suites_pass(capsys):
    assert main(["verify", "--suite", "all", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "suite gradients: ok" in out
    assert "suite psi: ok" in out


def test_verify_unknown_suite(capsys):
    assert main(["verify", "--suite", "nonsense"]) == 1
    assert "nonsense" in capsys.readouterr().err


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "tvcontrol.cli", "verify", "--suite", "psi"],
        capture_output=True, text=True,
        env={**os.environ, "TVC_OUT_DIR": str(tmp_path)},
    )
    assert proc.returncode == 0
    assert "suite psi: ok" in proc.stdout
