import math
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np
from lfp_logging import logs

"""
Log-log rate fitting for convergence studies.
"""

LOG = logs.logger(__name__)

MIN_POINTS = 3


@dataclass(frozen=True)
class RateReport:
    """
    Fitted power law ``error ~ constant * parameter ** slope``.

    Attributes
    ----------
    series
        ``(parameter, error)`` pairs sorted by parameter.
    slope
        Least-squares slope of ``log(error)`` against ``log(parameter)``.
    r2
        Coefficient of determination of the log-log fit.
    constant
        ``exp(intercept)`` of the fit.
    """

    series: tuple[tuple[float, float], ...]
    slope: float
    r2: float
    constant: float

    def as_dict(self) -> dict[str, object]:
        return {
            "series": [list(point) for point in self.series],
            "slope": self.slope,
            "r2": self.r2,
            "constant": self.constant,
        }


def fit_rate(series: Iterable[tuple[float, float]]) -> RateReport:
    """
    Fit a power law to ``series`` by ordinary least squares on logarithms.

    Raises
    ------
    ValueError
        With fewer than three points or any nonpositive parameter or error.
    """
    points = sorted((float(p), float(e)) for p, e in series)
    if len(points) < MIN_POINTS:
        raise ValueError(f"Rate fit needs at least {MIN_POINTS} points - count:{len(points)}")
    data = np.array(points)
    if np.any(data <= 0.0) or not np.all(np.isfinite(data)):
        raise ValueError(f"Rate fit needs positive finite values - series:{points}")
    x = np.log(data[:, 0])
    y = np.log(data[:, 1])
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 1.0
    report = RateReport(
        series=tuple(points),
        slope=float(slope),
        r2=r2,
        constant=math.exp(intercept),
    )
    LOG.debug("Rate fitted - points:%s slope:%.4f r2:%.4f", len(points), report.slope, report.r2)
    return report


def log_grid(lo: float, hi: float, count: int) -> list[float]:
    """``count`` log-spaced values from ``lo`` to ``hi`` inclusive."""
    if lo <= 0.0 or hi <= 0.0 or count < 1:
        raise ValueError(
            f"Log grid needs positive bounds and count - lo:{lo} hi:{hi} count:{count}"
        )
    return [float(v) for v in np.geomspace(lo, hi, count)]


def slope_between(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Two-point log-log slope."""
    (p0, e0), (p1, e1) = a, b
    return math.log(e1 / e0) / math.log(p1 / p0)
