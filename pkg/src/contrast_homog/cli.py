import os
import pathlib
from typing import Annotated, Literal

import cyclopts
from lfp_logging import logs

from contrast_homog.commands import cell, flux, np_spectrum, run, sweeps

"""
Top-level entry point for the ``contrast-homog`` CLI.

Commands:
- ``cell``: cell correctors and the homogenized tensor at one contrast or limit.
- ``flux``: flux corrector diagnostics over a contrast list.
- ``np-spectrum``: Neumann-Poincare spectrum and resolvent distances.
- ``rate-eps``: corrected error over the period grid of a config.
- ``rate-delta``: cell corrector rates toward the soft and stiff limits.
- ``lipschitz-probe``: largest gradient over a contrast sweep.
- ``diagnostics``: P, Q, R norms over the grid of a config.
- ``run``: a full config with acceptance checks, CSV and JSON summary.
- ``configs list|export``: bundled run configurations.
"""

LOG = logs.logger(__name__)

app = cyclopts.App(default_parameter=cyclopts.Parameter(negative=""))


@app.meta.default
def launcher(
    *tokens: Annotated[str, cyclopts.Parameter(show=False, allow_leading_hyphen=True)],
    working_directory: pathlib.Path | None = None,
    solver: Literal["direct", "cg"] | None = None,
    tol: float | None = None,
) -> int:
    """
    Top-level launcher with global solver options.

    Parameters
    ----------
    working_directory
        Set the current working directory before dispatching to a subcommand.
    solver
        Linear solver backend; sets ``CH_SOLVER`` for this process and its workers.
    tol
        Relative residual tolerance; sets ``CH_TOL``.
    """
    if working_directory:
        working_directory = working_directory.resolve()
        LOG.debug("Changing working directory to: %s", working_directory)
        os.chdir(working_directory)
    if solver is not None:
        os.environ["CH_SOLVER"] = solver
    if tol is not None:
        os.environ["CH_TOL"] = repr(tol)

    return app(tokens)


app.command(cell.cell, name="cell")
app.command(flux.flux, name="flux")
app.command(np_spectrum.np_spectrum, name="np-spectrum")
app.command(sweeps.rate_eps, name="rate-eps")
app.command(sweeps.rate_delta, name="rate-delta")
app.command(sweeps.lipschitz_probe, name="lipschitz-probe")
app.command(sweeps.diagnostics, name="diagnostics")
app.command(run.run, name="run")
app.command(run.configs_app, name="configs")


def main() -> None:
    app.meta()


if __name__ == "__main__":
    main()
