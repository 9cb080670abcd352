import io
import json
import os
import pathlib
from contextlib import redirect_stdout

import pytest

from contrast_homog import cli

SMALL = {
    "name": "small",
    "delta_grid": [0.1, 10.0],
    "eps_grid": [0.25],
    "mesh": {"cell_n": 16, "m_ref": 4},
    "outputs": {"dir": "results"},
}


def _run_cli(tokens: list[str], *, meta: bool = False) -> int:
    """
    Run the Cyclopts app and return its exit code.

    Depending on the Cyclopts version, commands either return their result
    or exit via SystemExit.
    """
    entry = cli.app.meta if meta else cli.app
    try:
        result = entry(tokens)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else 0
    return result if isinstance(result, int) else 0


@pytest.fixture
def small_config(tmp_path: pathlib.Path) -> pathlib.Path:
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


def test_cli_help() -> None:
    """Help output lists every command."""
    f = io.StringIO()
    with redirect_stdout(f):
        _run_cli(["--help"])
    output = f.getvalue()
    for command in (
        "cell",
        "flux",
        "np-spectrum",
        "rate-eps",
        "rate-delta",
        "lipschitz-probe",
        "diagnostics",
        "run",
        "configs",
    ):
        assert command in output


def test_configs_list() -> None:
    assert _run_cli(["configs", "list"]) == 0


def test_configs_export(tmp_path: pathlib.Path) -> None:
    assert _run_cli(["configs", "export", "--target", str(tmp_path), "--name", "smoke"]) == 0
    assert json.loads((tmp_path / "smoke.json").read_text())["name"] == "smoke"
    assert not (tmp_path / "reference.json").exists()


def test_configs_export_dry_run(tmp_path: pathlib.Path) -> None:
    assert _run_cli(["configs", "export", "--target", str(tmp_path), "--dry-run"]) == 0
    assert list(tmp_path.iterdir()) == []


def test_cell_writes_mesh_and_correctors(tmp_path: pathlib.Path) -> None:
    mesh_path = tmp_path / "cell-mesh.txt"
    out = tmp_path / "chi"
    tokens = ["cell", "--delta", "0.1", "--n", "16", "--mesh-dump", str(mesh_path)]
    tokens += ["--out", str(out)]
    assert _run_cli(tokens) == 0
    assert mesh_path.read_text().startswith("2 289 512")
    assert len(list(out.glob("chi-*.txt"))) == 2


def test_cell_limits() -> None:
    assert _run_cli(["cell", "--limit", "zero", "--n", "16"]) == 0
    assert _run_cli(["cell", "--limit", "infinity", "--n", "16"]) == 0


def test_launcher_sets_solver_environment(monkeypatch) -> None:
    monkeypatch.setenv("CH_SOLVER", "direct")
    monkeypatch.setenv("CH_TOL", "1e-10")
    assert _run_cli(["--solver", "cg", "--tol", "1e-11", "cell", "--n", "16"], meta=True) == 0
    assert os.environ["CH_SOLVER"] == "cg"
    assert float(os.environ["CH_TOL"]) == 1e-11


def test_flux_and_spectrum() -> None:
    assert _run_cli(["flux", "--delta", "0.1", "--delta", "10", "--n", "16"]) == 0
    assert _run_cli(["np-spectrum", "--n", "16", "--delta", "0.1", "--delta", "10"]) == 0


def test_run_command(small_config: pathlib.Path) -> None:
    assert _run_cli(["run", "--config", str(small_config), "--jobs", "1"]) == 0
    summary = json.loads((small_config.parent / "results" / "summary.json").read_text())
    assert summary["passed"] is True


def test_run_command_rejects_invalid_config(tmp_path: pathlib.Path) -> None:
    path = tmp_path / "invalid.json"
    path.write_text(json.dumps({"geometry": {"radius": 0.2}}))
    assert _run_cli(["run", "--config", str(path)]) == 2


def test_rate_eps_writes_csv(small_config: pathlib.Path, tmp_path: pathlib.Path) -> None:
    out = tmp_path / "eps"
    tokens = ["rate-eps", "--config", str(small_config), "--out", str(out), "--jobs", "1"]
    assert _run_cli(tokens) == 0
    assert (out / "results.csv").read_text().startswith("eps,delta,h1_error")


def test_diagnostics(small_config: pathlib.Path) -> None:
    assert _run_cli(["diagnostics", "--config", str(small_config), "--jobs", "1"]) == 0
    assert (small_config.parent / "results" / "results.csv").is_file()


def test_lipschitz_probe_compare(small_config: pathlib.Path) -> None:
    tokens = [
        "lipschitz-probe",
        "--config",
        str(small_config),
        "--eps",
        "0.25",
        "--lo",
        "0.1",
        "--hi",
        "10",
        "--count",
        "3",
        "--compare",
    ]
    assert _run_cli(tokens) == 0
    results = small_config.parent / "results"
    modified = (results / "lipschitz-eps0p25.csv").read_text().splitlines()
    assert modified[0] == "delta,sup_all,sup_inclusion,sup_matrix"
    # delta = 1 joins the grid unless geomspace already hit it exactly
    assert len(modified) in (4, 5)
    assert (results / "lipschitz-unmodified-eps0p25.csv").is_file()


def test_rate_delta_rejects_unknown_config() -> None:
    assert _run_cli(["rate-delta", "--config", "no-such-config"]) == 2
