from lfp_logging import logs

from contrast_homog.commands import _common
from contrast_homog.layer import np_operator, resolvent_sweep

"""
Implements ``contrast-homog np-spectrum``.
"""

LOG = logs.logger(__name__)


def np_spectrum(
    *,
    coefficient: _common.Coefficient = "identity",
    amplitude: float = 0.5,
    shape: _common.Shape = "square",
    r: float = 0.25,
    n: int = 32,
    delta: list[float] | None = None,
    full: bool = False,
) -> None:
    """
    Spectrum of the Neumann-Poincare operator on the inclusion interface.

    Parameters
    ----------
    coefficient, amplitude, shape, r, n
        Cell problem, as for ``cell``.
    delta
        Contrasts (repeatable) for the resolvent distance to the limits.
    full
        Include every eigenvalue in the report.
    """
    A, omega = _common.cell_inputs(coefficient, amplitude, shape, r)
    operator = np_operator(A, omega, n)
    eigenvalues = operator.eigenvalues()
    record = {
        "n": n,
        "count": int(len(eigenvalues)),
        "min": float(eigenvalues.min()),
        "max": float(eigenvalues.max()),
        "self_adjoint_residual": operator.self_adjoint_residual,
        "jump_residual": operator.jump_residual,
    }
    if full:
        record["eigenvalues"] = [float(v) for v in eigenvalues]
    if delta:
        sweep = resolvent_sweep(delta, operator=operator)
        record["resolvent_gaps"] = [[d, g] for d, g in zip(sweep.deltas, sweep.gaps)]
        record["zero_slope"] = sweep.zero_rate.slope if sweep.zero_rate else None
        record["infinity_slope"] = sweep.infinity_rate.slope if sweep.infinity_rate else None
    _common.emit(record)
