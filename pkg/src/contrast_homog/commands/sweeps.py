import csv
import dataclasses
import pathlib

from lfp_logging import logs

from contrast_homog import experiments, names, rates
from contrast_homog.commands import _common
from contrast_homog.config import CHECK_DEFAULTS, RunConfig
from contrast_homog.lab import gradient_sup_probe

"""
Implements the sweep verbs ``rate-eps``, ``rate-delta``, ``lipschitz-probe``
and ``diagnostics``.

Each verb reads a run config (a path or a bundled name, ``reference`` by
default) and ignores its ``acceptance`` section except where a verb reuses a
check's parameters. Return values are process exit codes.
"""

LOG = logs.logger(__name__)

_DEFAULT_CONFIG = "reference"


def rate_eps(
    *,
    config: str = _DEFAULT_CONFIG,
    out: pathlib.Path | None = None,
    jobs: int | None = None,
) -> int:
    """
    Corrected and uncorrected errors over the ``eps`` grid of a config.

    Parameters
    ----------
    config
        Config file or bundled config name.
    out
        Output directory; overrides ``outputs.dir``.
    jobs
        Worker processes. Defaults to CPU count - 1.
    """
    cfg = experiments.load_run_config(config, out=out)
    if cfg is None:
        return experiments.EXIT_CONFIG
    rows = experiments.run_grid(cfg, jobs=jobs)
    slopes = experiments.grid_slopes(rows)
    path = experiments.write_csv(rows, slopes, cfg.outputs.csv_path)
    for delta, s in slopes.items():
        _common.emit({"delta": delta, "h1_error": s["h1_error"], "uncorrected": s["uncorrected"]})
    LOG.info("Eps rates written - csv:%s rows:%s", path, len(rows))
    return experiments.EXIT_OK


def rate_delta(
    *,
    config: str = _DEFAULT_CONFIG,
    jobs: int | None = None,
) -> int:
    """
    Cell corrector convergence to the soft and stiff limits.

    Parameters come from the config's ``cell_soft_rate`` and
    ``cell_stiff_rate`` acceptance entries, with their defaults otherwise.

    Parameters
    ----------
    config
        Config file or bundled config name.
    jobs
        Worker processes. Defaults to CPU count - 1.
    """
    cfg = experiments.load_run_config(config)
    if cfg is None:
        return experiments.EXIT_CONFIG
    acceptance = {
        name: dict(cfg.acceptance.get(name, CHECK_DEFAULTS[name]))
        for name in ("cell_soft_rate", "cell_stiff_rate")
    }
    results = experiments.run_checks(_with_acceptance(cfg, acceptance), (), jobs=jobs)
    for result in results:
        _common.emit(result.as_dict())
    return experiments.EXIT_OK if all(r.passed for r in results) else experiments.EXIT_FAILED


def lipschitz_probe(
    *,
    config: str = _DEFAULT_CONFIG,
    eps: float = 0.125,
    lo: float = 1e-3,
    hi: float = 1e3,
    count: int = 7,
    compare: bool = False,
    out: pathlib.Path | None = None,
) -> int:
    """
    Largest elementwise gradient over a contrast sweep.

    Parameters
    ----------
    config
        Config file or bundled config name; supplies geometry, coefficient and data.
    eps
        Period.
    lo, hi, count
        Log-spaced contrast grid; ``delta = 1`` is always added.
    compare
        Repeat the sweep without the source modification.
    out
        Output directory; overrides ``outputs.dir``.
    """
    cfg = experiments.load_run_config(config, out=out)
    if cfg is None:
        return experiments.EXIT_CONFIG
    spec = cfg.problem_spec(eps, 1.0)
    deltas = rates.log_grid(lo, hi, count)
    variants = [True, False] if compare else [True]
    cfg.outputs.dir.mkdir(parents=True, exist_ok=True)
    for modify_f in variants:
        probe = gradient_sup_probe(
            spec, deltas, modify_f=modify_f, backend=cfg.solver.backend, tol=cfg.solver.tol
        )
        kind = "lipschitz" if modify_f else "lipschitz-unmodified"
        path = cfg.outputs.dir / names.artifact_name(kind, ".csv", eps=eps)
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["delta", "sup_all", "sup_inclusion", "sup_matrix"])
            for row in probe.rows:
                values = (row.delta, row.sup_all, row.sup_inclusion, row.sup_matrix)
                writer.writerow([f"{v:.12g}" for v in values])
        _common.emit({"modify_f": modify_f, "ratio": probe.ratio, "baseline": probe.baseline})
        LOG.info("Gradient probe written - csv:%s", path)
    return experiments.EXIT_OK


def diagnostics(
    *,
    config: str = _DEFAULT_CONFIG,
    out: pathlib.Path | None = None,
    jobs: int | None = None,
) -> int:
    """
    P, Q and R norms over the grid of a config, with their slopes in ``eps``.

    Parameters
    ----------
    config
        Config file or bundled config name.
    out
        Output directory; overrides ``outputs.dir``.
    jobs
        Worker processes. Defaults to CPU count - 1.
    """
    cfg = experiments.load_run_config(config, out=out)
    if cfg is None:
        return experiments.EXIT_CONFIG
    rows = experiments.run_grid(cfg, jobs=jobs)
    slopes = experiments.grid_slopes(rows)
    for row in rows:
        _common.emit(
            {
                "eps": row.eps,
                "delta": row.delta,
                "P_l2": row.P_l2,
                "Q_l2": row.Q_l2,
                "R_l2": row.R_l2,
                "pqr": row.pqr,
            }
        )
    for delta, s in slopes.items():
        _common.emit({"delta": delta, "pqr_slope": s["pqr"]})
    experiments.write_csv(rows, slopes, cfg.outputs.csv_path)
    return experiments.EXIT_OK


def _with_acceptance(cfg: RunConfig, acceptance: dict[str, dict]) -> RunConfig:
    return dataclasses.replace(cfg, acceptance=acceptance)
