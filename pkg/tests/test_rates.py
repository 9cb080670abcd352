import math

import pytest

from contrast_homog import rates


def test_fit_rate_recovers_power_law() -> None:
    report = rates.fit_rate([(h, 3.0 * h**1.5) for h in (0.5, 0.25, 0.125, 0.0625)])
    assert report.slope == pytest.approx(1.5)
    assert report.constant == pytest.approx(3.0)
    assert report.r2 == pytest.approx(1.0)
    assert [p for p, _ in report.series] == [0.0625, 0.125, 0.25, 0.5]


def test_fit_rate_reports_poor_fit() -> None:
    report = rates.fit_rate([(1.0, 1.0), (2.0, 8.0), (4.0, 2.0)])
    assert report.r2 < 0.9


def test_fit_rate_needs_three_points() -> None:
    with pytest.raises(ValueError, match="count:2"):
        rates.fit_rate([(1.0, 1.0), (2.0, 2.0)])


def test_fit_rate_rejects_nonpositive_values() -> None:
    with pytest.raises(ValueError, match="positive"):
        rates.fit_rate([(1.0, 1.0), (2.0, 0.0), (4.0, 2.0)])


def test_rate_report_as_dict() -> None:
    report = rates.fit_rate([(1.0, 1.0), (2.0, 2.0), (4.0, 4.0)])
    assert report.as_dict()["series"] == [[1.0, 1.0], [2.0, 2.0], [4.0, 4.0]]
    assert report.as_dict()["slope"] == pytest.approx(1.0)


def test_log_grid_includes_endpoints() -> None:
    grid = rates.log_grid(1e-3, 1e3, 7)
    assert len(grid) == 7
    assert grid[0] == pytest.approx(1e-3)
    assert grid[-1] == pytest.approx(1e3)
    assert grid[3] == pytest.approx(1.0)


def test_log_grid_rejects_nonpositive_bounds() -> None:
    with pytest.raises(ValueError, match="lo:0"):
        rates.log_grid(0, 1.0, 3)


def test_slope_between() -> None:
    assert rates.slope_between((0.5, 0.25), (0.25, 0.0625)) == pytest.approx(2.0)
    assert math.isfinite(rates.slope_between((1.0, 2.0), (2.0, 2.0)))
