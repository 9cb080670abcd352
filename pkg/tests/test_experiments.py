import csv
import json
import math
import pathlib

import pytest

from contrast_homog import config, experiments
from contrast_homog.lab import DiscrepancyReport

SMALL = {
    "name": "small",
    "delta_grid": [0.1, 10.0],
    "eps_grid": [0.25],
    "mesh": {"cell_n": 16, "m_ref": 4},
}


def _row(eps: float, delta: float, scale: float = 1.0, **overrides: float) -> DiscrepancyReport:
    values = {
        "eps": eps,
        "delta": delta,
        "h1_error": scale * eps,
        "uncorrected_error": 2.0 * scale * eps**0.5,
        "corrector_norm": 1.0,
        "P_l2": scale * eps,
        "Q_l2": scale * eps,
        "R_l2": scale,
        "aux_norm": 0.0,
        "energy": 1.0,
        "grad_sup": 3.0,
    }
    values.update(overrides)
    return DiscrepancyReport(**values)


def _rows(scales: dict[float, float]) -> tuple[DiscrepancyReport, ...]:
    return tuple(
        _row(eps, delta, scale)
        for eps in (0.25, 0.125, 0.0625)
        for delta, scale in sorted(scales.items())
    )


def test_exit_codes_are_distinct() -> None:
    assert (experiments.EXIT_OK, experiments.EXIT_FAILED, experiments.EXIT_CONFIG) == (0, 1, 2)


def test_check_catalogue() -> None:
    assert set(experiments.CHECKS) == set(config.CHECK_DEFAULTS)
    assert len(experiments.CHECKS) == 9


def test_grid_slopes_per_contrast() -> None:
    slopes = experiments.grid_slopes(_rows({0.01: 1.0, 100.0: 2.0}))
    assert list(slopes) == [0.01, 100.0]
    for s in slopes.values():
        assert s["h1_error"] == pytest.approx(1.0)
        assert s["uncorrected"] == pytest.approx(0.5)
        # eps * R grows like eps, P and Q like eps
        assert s["pqr"] == pytest.approx(1.0)
        assert s["R_l2"] == pytest.approx(0.0, abs=1e-12)
        assert s["aux_norm"] is None


def test_grid_slopes_need_three_periods() -> None:
    rows = [_row(0.25, 1.0), _row(0.125, 1.0)]
    assert experiments.grid_slopes(rows)[1.0]["h1_error"] is None


def test_write_csv_layout(tmp_path: pathlib.Path) -> None:
    rows = _rows({1.0: 1.0})
    path = experiments.write_csv(
        rows, experiments.grid_slopes(rows), tmp_path / "nested" / "results.csv"
    )
    with path.open() as handle:
        table = list(csv.reader(handle))
    assert tuple(table[0]) == experiments.COLUMNS
    assert len(table) == 1 + len(rows) + 1
    assert table[1][:3] == ["0.25", "1", "0.25"]
    summary = table[-1]
    assert summary[0] == experiments.SUMMARY_LABEL
    assert float(summary[2]) == pytest.approx(1.0)
    assert summary[7] == ""
    assert summary[8] == ""


def test_number_format_uses_twelve_digits() -> None:
    assert experiments._number(1.0 / 3.0) == "0.333333333333"
    assert experiments._number(None) == ""


def test_ratio() -> None:
    assert experiments._ratio([1.0, 4.0, 2.0]) == 4.0
    assert experiments._ratio([0.0, 0.0]) == 1.0
    assert math.isinf(experiments._ratio([0.0, 1.0]))


def test_corrected_rate_check_passes_uniform_rows() -> None:
    params = config.CHECK_DEFAULTS["corrected_rate"]
    result = experiments.check_corrected_rate(
        config.parse({}), params, _rows({0.01: 1.0, 100.0: 2.0})
    )
    assert result.passed
    assert result.values["delta_ratios"]["0.25"] == pytest.approx(2.0)


def test_corrected_rate_check_fails_nonuniform_rows() -> None:
    params = config.CHECK_DEFAULTS["corrected_rate"]
    result = experiments.check_corrected_rate(
        config.parse({}), params, _rows({0.01: 1.0, 100.0: 10.0})
    )
    assert not result.passed
    assert "delta_ratio:10.000" in result.message


def test_grid_check_without_slope_fails() -> None:
    params = config.CHECK_DEFAULTS["pqr_rate"]
    rows = [_row(0.25, 1.0), _row(0.125, 1.0)]
    result = experiments.check_pqr_rate(config.parse({}), params, rows)
    assert not result.passed
    assert "n/a" in result.message
    assert not experiments.check_pqr_rate(config.parse({}), params, ()).passed


def test_check_errors_become_failures() -> None:
    cfg = config.parse({"acceptance": {"cell_soft_rate": {"deltas": [0.1, 0.01], "n": 16}}})
    result = experiments._evaluate("cell_soft_rate", cfg, ())
    assert not result.passed
    assert result.message.startswith("error:")
    assert "count:2" in result.message


def test_run_result_summary() -> None:
    rows = _rows({1.0: 1.0})
    result = experiments.RunResult(
        name="x",
        rows=rows,
        slopes=experiments.grid_slopes(rows),
        checks=(
            experiments.CheckResult("a", True, "ok"),
            experiments.CheckResult("b", False, "bad", {"v": 1}),
        ),
    )
    assert not result.passed
    summary = result.summary()
    assert summary["passed"] is False
    assert list(summary["slopes"]) == ["1.0"]
    assert summary["checks"][1] == {
        "name": "b",
        "passed": False,
        "message": "bad",
        "values": {"v": 1},
    }
    json.dumps(summary)


def test_run_result_without_checks_passes() -> None:
    assert experiments.RunResult("x", (), {}, ()).passed


def test_run_grid_empty_grid() -> None:
    assert experiments.run_grid(config.parse({}), jobs=1) == ()


def test_run_checks_without_acceptance() -> None:
    assert experiments.run_checks(config.parse({}), ()) == ()


def test_load_run_config_reports_problems(tmp_path: pathlib.Path) -> None:
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    invalid = tmp_path / "invalid.json"
    invalid.write_text(json.dumps({"geometry": {"radius": 0.2}}))
    assert experiments.load_run_config(broken) is None
    assert experiments.load_run_config(invalid) is None
    assert experiments.load_run_config("no-such-config") is None


def test_load_run_config_overrides_output_dir(tmp_path: pathlib.Path) -> None:
    cfg = experiments.load_run_config("smoke", out=tmp_path)
    assert cfg is not None
    assert cfg.name == "smoke"
    assert cfg.outputs.dir == tmp_path


def test_run_config_rejects_invalid_config(tmp_path: pathlib.Path) -> None:
    path = tmp_path / "invalid.json"
    path.write_text(json.dumps({"mesh": {"m_ref": 0}}))
    assert experiments.run_config(path) == experiments.EXIT_CONFIG


def test_run_small_grid(tmp_path: pathlib.Path) -> None:
    cfg = config.parse(SMALL).with_output_dir(tmp_path)
    result = experiments.run(cfg, jobs=1)
    assert [(r.eps, r.delta) for r in result.rows] == [(0.25, 0.1), (0.25, 10.0)]
    assert all(r.h1_error >= 0.0 for r in result.rows)
    assert result.slopes[0.1]["h1_error"] is None
    assert result.checks == ()
    assert result.passed


def test_run_config_writes_reports(tmp_path: pathlib.Path) -> None:
    path = tmp_path / "small.json"
    path.write_text(json.dumps({**SMALL, "outputs": {"dir": "results"}}))
    assert experiments.run_config(path, jobs=1) == experiments.EXIT_OK
    lines = (tmp_path / "results" / "results.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 + 2
    summary = json.loads((tmp_path / "results" / "summary.json").read_text())
    assert summary["name"] == "small"
    assert summary["passed"] is True
    assert len(summary["rows"]) == 2


def test_run_config_fails_on_failed_check(tmp_path: pathlib.Path) -> None:
    path = tmp_path / "failing.json"
    path.write_text(json.dumps({**SMALL, "acceptance": {"corrected_rate": True}}))
    assert experiments.run_config(path, out=tmp_path / "out", jobs=1) == experiments.EXIT_FAILED
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["checks"][0]["name"] == "corrected_rate"
    assert summary["checks"][0]["passed"] is False


def test_mesh_dump_writes_one_file_per_period(tmp_path: pathlib.Path) -> None:
    data = {**SMALL, "delta_grid": [10.0], "mesh": {**SMALL["mesh"], "dump": True}}
    experiments.run_grid(config.parse(data).with_output_dir(tmp_path), jobs=1)
    assert (tmp_path / "mesh-eps0p25.txt").read_text().startswith("2 ")


@pytest.mark.slow
def test_representation_check_passes() -> None:
    cfg = config.parse({"acceptance": {"representation": {"n": 16}}})
    result = experiments._evaluate("representation", cfg, ())
    assert result.passed, result.message


def test_run_config_empty_grid_writes_header(tmp_path: pathlib.Path) -> None:
    path = tmp_path / "empty.json"
    path.write_text(json.dumps({"name": "empty"}))
    assert experiments.run_config(path, jobs=1) == experiments.EXIT_OK
    assert (tmp_path / "out" / "results.csv").read_text() == ",".join(experiments.COLUMNS) + "\n"
