import pathlib
from typing import Annotated

import cyclopts
from lfp_logging import logs

from contrast_homog import bundle, experiments

"""
Implements ``contrast-homog run`` and the ``configs`` group.

``run`` executes a full config: the ``(eps, delta)`` grid, the enabled
acceptance checks, the CSV and the JSON summary. ``configs list`` and
``configs export`` expose the bundled configs for editing.
"""

LOG = logs.logger(__name__)

configs_app = cyclopts.App(
    help="Bundled run configurations.",
    default_parameter=cyclopts.Parameter(negative=""),
)


def run(
    *,
    config: str = "acceptance",
    out: pathlib.Path | None = None,
    jobs: int | None = None,
) -> int:
    """
    Run a config and exit nonzero if any acceptance check fails.

    Parameters
    ----------
    config
        Config file or bundled config name.
    out
        Output directory; overrides ``outputs.dir``.
    jobs
        Worker processes. Defaults to CPU count - 1.
    """
    return experiments.run_config(config, out=out, jobs=jobs)


@configs_app.command(name="list")
def list_configs() -> None:
    """List the bundled config names."""
    for name in bundle.list_bundled_names():
        LOG.info("%s", name)


@configs_app.command()
def export(
    *,
    target: pathlib.Path = pathlib.Path("."),
    name: list[str] | None = None,
    force: Annotated[bool, cyclopts.Parameter(alias="-f", negative="")] = False,
    dry_run: bool = False,
) -> None:
    """
    Copy bundled configs into a directory.

    Parameters
    ----------
    target
        Destination directory.
    name
        Restrict to specific configs (repeatable).
    force
        Overwrite existing files whose content differs.
    dry_run
        Report without writing.
    """
    report = bundle.export(target, names=name, force=force, dry_run=dry_run)
    for path in report.written:
        LOG.info("%s %s", "Would write" if dry_run else "Wrote", path)
    for path in report.skipped:
        LOG.info("Skipped %s", path)
