import math
import pathlib
from typing import Literal

from lfp_logging import logs

from contrast_homog import names
from contrast_homog.cell import (
    hashin_shtrikman_bounds,
    homogenized_tensor,
    inclusion_fraction,
    solve_cell,
    solve_cell_limit_infinity,
    solve_cell_limit_zero,
)
from contrast_homog.commands import _common
from contrast_homog.fem import dump_function
from contrast_homog.mesh import dump_mesh

"""
Implements ``contrast-homog cell``.

Solves the cell problems at one contrast or in one of the two limits and
reports the homogenized tensor. For scalar isotropic coefficients the
two-phase Hashin-Shtrikman bounds are reported alongside.
"""

LOG = logs.logger(__name__)


def cell(
    *,
    delta: float = 1.0,
    limit: Literal["finite", "zero", "infinity"] = "finite",
    coefficient: _common.Coefficient = "identity",
    amplitude: float = 0.5,
    shape: _common.Shape = "square",
    r: float = 0.25,
    n: int = 32,
    mesh_dump: pathlib.Path | None = None,
    out: pathlib.Path | None = None,
) -> None:
    """
    Solve cell correctors and print the homogenized tensor.

    Parameters
    ----------
    delta
        Contrast for ``--limit finite``.
    limit
        ``finite`` solves at ``delta``; ``zero`` and ``infinity`` solve the
        perforated and rigid-inclusion limits.
    coefficient
        Coefficient catalogue entry.
    amplitude
        Oscillation amplitude for ``oscillating`` and ``system``.
    shape, r
        Inclusion shape and size.
    n
        Cell mesh subdivisions per side.
    mesh_dump
        Write the cell mesh to this file.
    out
        Write every corrector field into this directory.
    """
    A, omega = _common.cell_inputs(coefficient, amplitude, shape, r)
    if limit == "zero":
        cc = solve_cell_limit_zero(A, omega, n)
    elif limit == "infinity":
        cc = solve_cell_limit_infinity(A, omega, n)
    else:
        cc = solve_cell(A, omega, n, delta)
    Ahat = homogenized_tensor(cc)
    record = {
        "label": cc.label,
        "delta": cc.delta,
        "n": n,
        "Ahat": Ahat.row_major(),
        "mu1": Ahat.mu1,
        "symmetry_defect": Ahat.symmetry_defect,
    }
    if coefficient == "identity":
        inclusion = {"zero": 0.0, "infinity": math.inf}.get(limit, delta)
        lower, upper = hashin_shtrikman_bounds(1.0, inclusion, inclusion_fraction(cc.mesh))
        record["hashin_shtrikman"] = [lower, upper if math.isfinite(upper) else None]
    _common.emit(record)

    if mesh_dump is not None:
        dump_mesh(cc.mesh, mesh_dump)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        stem = names.run_name("chi", cc.label)
        for i, row in enumerate(cc.chi):
            for alpha, chi in enumerate(row):
                dump_function(chi, out / f"{stem}-{i}{alpha}.txt")
        LOG.info("Correctors written - dir:%s label:%s", out, cc.label)
