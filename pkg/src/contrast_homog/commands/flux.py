from lfp_logging import logs

from contrast_homog.cell import solve_cell
from contrast_homog.commands import _common
from contrast_homog.flux import DIVERGENCE_TOLERANCE, build_flux

"""
Implements ``contrast-homog flux``.

Builds the flux corrector at each requested contrast and reports its size,
weak divergence defect and skew-symmetry residual.
"""

LOG = logs.logger(__name__)


def flux(
    *,
    delta: list[float] | None = None,
    coefficient: _common.Coefficient = "identity",
    amplitude: float = 0.5,
    shape: _common.Shape = "square",
    r: float = 0.25,
    n: int = 32,
    div_tol: float = DIVERGENCE_TOLERANCE,
) -> None:
    """
    Report flux corrector diagnostics over a contrast list.

    Parameters
    ----------
    delta
        Contrasts (repeatable). Defaults to ``0.01 1 100``.
    coefficient, amplitude, shape, r, n
        Cell problem, as for ``cell``.
    div_tol
        Divergence defect above which a warning is logged.
    """
    A, omega = _common.cell_inputs(coefficient, amplitude, shape, r)
    for d in delta or [0.01, 1.0, 100.0]:
        data = build_flux(solve_cell(A, omega, n, d), div_tol=div_tol)
        record = data.as_dict()
        record["div_rms"] = data.div_rms
        record["uncorrected_div_rms"] = data.uncorrected_div_rms
        _common.emit(record)
