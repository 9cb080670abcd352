import csv
import io
import json
import math
import pathlib
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import cpu_count
from os import PathLike
from typing import Any

from lfp_logging import logs

from contrast_homog import bundle, config, names, rates
from contrast_homog.cell import (
    corrector_distance,
    homogenized_tensor,
    second_order_defect,
    solve_cell,
    solve_cell_limit_infinity,
    solve_cell_limit_zero,
    tensor_sweep,
)
from contrast_homog.fem import SolverError, norms
from contrast_homog.flux import build_flux
from contrast_homog.lab import (
    DiscrepancyReport,
    ResolutionError,
    discrepancy,
    domain_mesh,
    gradient_sup_probe,
)
from contrast_homog.layer import corrector_via_potentials, np_operator
from contrast_homog.mesh import dump_mesh

"""
Sweep orchestration, acceptance checks and report files.

A run solves the discrepancy on every ``(eps, delta)`` pair of the config's
grids, one worker per contrast so cell correctors and flux correctors are
built once per ``delta``. Rows are sorted before writing, so the CSV body
only depends on the config. Each key under ``acceptance`` runs the check of
that name from :data:`CHECKS`.

Exit codes: 0 when every check passes, 1 when one fails or a solve
breaks down, 2 for malformed JSON or schema violations.
"""

LOG = logs.logger(__name__)

COLUMNS = (
    "eps",
    "delta",
    "h1_error",
    "uncorrected",
    "P_l2",
    "Q_l2",
    "R_l2",
    "aux_norm",
    "grad_sup",
)
SUMMARY_LABEL = "slope"

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    message: str
    values: dict[str, Any] = field(default_factory=dict)

    def as_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "passed": self.passed,
            "message": self.message,
            "values": self.values,
        }


Check = Callable[[config.RunConfig, Mapping[str, Any], Sequence[DiscrepancyReport]], CheckResult]


@dataclass(frozen=True)
class RunResult:
    """Rows of a grid run, per-contrast slopes and acceptance outcomes."""

    name: str
    rows: tuple[DiscrepancyReport, ...]
    slopes: dict[float, dict[str, float | None]]
    checks: tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def summary(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "passed": self.passed,
            "rows": [row.as_dict() for row in self.rows],
            "slopes": {repr(delta): s for delta, s in self.slopes.items()},
            "checks": [check.as_dict() for check in self.checks],
        }


def default_jobs() -> int:
    return max(1, cpu_count() - 1)


def run_delta(cfg: config.RunConfig, delta: float) -> list[DiscrepancyReport]:
    """
    Discrepancy rows for one contrast over the whole ``eps`` grid.

    Cell correctors, the homogenized tensor and the flux corrector are
    computed once on a cell mesh aligned with the domain grid.
    """
    A = cfg.coefficient.build()
    shape = cfg.geometry.inclusion()
    backend, tol = cfg.solver.backend, cfg.solver.tol
    cc = solve_cell(A, shape, cfg.mesh.cell_n, delta, backend=backend, tol=tol)
    Ahat = homogenized_tensor(cc)
    flux = build_flux(cc, Ahat=Ahat, backend=backend, tol=tol)
    rows = []
    for eps in cfg.eps_grid:
        spec = cfg.problem_spec(eps, delta)
        if cfg.mesh.dump:
            cfg.outputs.dir.mkdir(parents=True, exist_ok=True)
            mesh_path = cfg.outputs.dir / names.artifact_name("mesh", ".txt", eps=eps)
            dump_mesh(domain_mesh(spec), mesh_path)
        rows.append(
            discrepancy(
                spec,
                cc,
                Ahat,
                flux,
                check_resolution=cfg.mesh.resolution_check,
                resolution_tol=cfg.mesh.resolution_tol,
                backend=backend,
                tol=tol,
            )
        )
    return rows


def run_grid(cfg: config.RunConfig, *, jobs: int | None = None) -> tuple[DiscrepancyReport, ...]:
    """All grid rows sorted by ``(eps, delta)``."""
    jobs = jobs or default_jobs()
    if not cfg.eps_grid or not cfg.delta_grid:
        return ()
    LOG.info(
        "Running grid - name:%s eps:%s deltas:%s jobs:%s",
        cfg.name,
        len(cfg.eps_grid),
        len(cfg.delta_grid),
        jobs,
    )
    rows: list[DiscrepancyReport] = []
    if jobs == 1 or len(cfg.delta_grid) == 1:
        for delta in cfg.delta_grid:
            rows.extend(run_delta(cfg, delta))
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(cfg.delta_grid))) as executor:
            for result in executor.map(run_delta, [cfg] * len(cfg.delta_grid), cfg.delta_grid):
                rows.extend(result)
    return tuple(sorted(rows, key=lambda r: (r.eps, r.delta)))


def grid_slopes(rows: Sequence[DiscrepancyReport]) -> dict[float, dict[str, float | None]]:
    """Log-log slopes against ``eps`` per contrast; ``None`` with fewer than three points."""
    out: dict[float, dict[str, float | None]] = {}
    for delta in sorted({row.delta for row in rows}):
        series = [row for row in rows if row.delta == delta]
        out[delta] = {
            key: _slope([(row.eps, getter(row)) for row in series])
            for key, getter in _SLOPE_FIELDS.items()
        }
    return out


def write_csv(
    rows: Sequence[DiscrepancyReport],
    slopes: Mapping[float, Mapping[str, float | None]],
    path: pathlib.Path,
) -> pathlib.Path:
    """
    One row per run, then one ``slope`` row per contrast.

    Numbers are written with twelve significant digits; missing slopes are empty.
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow(
            [
                _number(v)
                for v in (
                    row.eps,
                    row.delta,
                    row.h1_error,
                    row.uncorrected_error,
                    row.P_l2,
                    row.Q_l2,
                    row.R_l2,
                    row.aux_norm,
                    row.grad_sup,
                )
            ]
        )
    for delta, s in slopes.items():
        writer.writerow(
            [
                SUMMARY_LABEL,
                _number(delta),
                _number(s.get("h1_error")),
                _number(s.get("uncorrected")),
                _number(s.get("P_l2")),
                _number(s.get("Q_l2")),
                _number(s.get("R_l2")),
                _number(s.get("aux_norm")),
                "",
            ]
        )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buffer.getvalue())
    return path


def write_summary(result: RunResult, path: pathlib.Path) -> pathlib.Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    return path


def run(cfg: config.RunConfig, *, jobs: int | None = None) -> RunResult:
    """Grid rows, slopes and acceptance checks for a validated config."""
    jobs = jobs or default_jobs()
    rows = run_grid(cfg, jobs=jobs)
    slopes = grid_slopes(rows)
    checks = run_checks(cfg, rows, jobs=jobs)
    result = RunResult(name=cfg.name, rows=rows, slopes=slopes, checks=checks)
    for check in checks:
        (LOG.info if check.passed else LOG.error)(
            "Acceptance check %s - name:%s %s",
            "passed" if check.passed else "failed",
            check.name,
            check.message,
        )
    return result


def load_run_config(
    path: PathLike | str, *, out: pathlib.Path | None = None
) -> config.RunConfig | None:
    """
    Read and validate a config file or bundled config name.

    Returns ``None`` after logging the parse location or key path of the
    problem.
    """
    try:
        text, base_dir = bundle.read_config(path)
        data = json.loads(text)
        cfg = config.parse(data, base_dir=base_dir)
    except json.JSONDecodeError as exc:
        LOG.error(
            "Malformed run config - path:%s line:%s column:%s error:%s",
            path,
            exc.lineno,
            exc.colno,
            exc.msg,
        )
        return None
    except config.ConfigError as exc:
        LOG.error("Invalid run config - path:%s key:%s error:%s", path, exc.path, exc)
        return None
    except (OSError, ValueError) as exc:
        LOG.error("Run config unavailable - path:%s error:%s", path, exc)
        return None
    return cfg if out is None else cfg.with_output_dir(out)


def run_config(
    path: PathLike | str,
    *,
    out: pathlib.Path | None = None,
    jobs: int | None = None,
) -> int:
    """
    Load, run and report a config file or bundled config name.

    Returns the process exit code; see the module docstring.
    """
    cfg = load_run_config(path, out=out)
    if cfg is None:
        return EXIT_CONFIG

    try:
        result = run(cfg, jobs=jobs)
    except (SolverError, ResolutionError) as exc:
        LOG.error("Run aborted - name:%s error:%s", cfg.name, exc)
        return EXIT_FAILED
    csv_path = write_csv(result.rows, result.slopes, cfg.outputs.csv_path)
    summary_path = write_summary(result, cfg.outputs.summary_path)
    LOG.info(
        "Run complete - name:%s rows:%s passed:%s csv:%s summary:%s",
        result.name,
        len(result.rows),
        result.passed,
        csv_path,
        summary_path,
    )
    return EXIT_OK if result.passed else EXIT_FAILED


def run_checks(
    cfg: config.RunConfig,
    rows: Sequence[DiscrepancyReport],
    *,
    jobs: int | None = None,
) -> tuple[CheckResult, ...]:
    """Evaluate the enabled acceptance checks, in name order."""
    enabled = sorted(cfg.acceptance)
    if not enabled:
        return ()
    jobs = jobs or default_jobs()
    args = [(name, cfg, tuple(rows)) for name in enabled]
    if jobs == 1 or len(args) == 1:
        return tuple(_evaluate(*a) for a in args)
    with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as executor:
        return tuple(executor.map(_evaluate, *zip(*args)))


def _evaluate(name: str, cfg: config.RunConfig, rows: tuple[DiscrepancyReport, ...]) -> CheckResult:
    params = cfg.acceptance[name]
    try:
        return CHECKS[name](cfg, params, rows)
    except (SolverError, ResolutionError, ValueError) as exc:
        return CheckResult(name, False, f"error:{exc}")


def check_cell_soft_rate(
    cfg: config.RunConfig, params: Mapping[str, Any], rows: Sequence[DiscrepancyReport]
) -> CheckResult:
    """``|chi_delta - chi_0|_H1`` against ``delta``."""
    A, shape, backend, tol = _cell_inputs(cfg)
    n = params["n"]
    zero = solve_cell_limit_zero(A, shape, n, backend=backend, tol=tol)
    series = [
        (d, corrector_distance(solve_cell(A, shape, n, d, backend=backend, tol=tol), zero))
        for d in params["deltas"]
    ]
    rate = rates.fit_rate(series)
    passed = (
        params["slope_min"] <= rate.slope <= params["slope_max"] and rate.r2 >= params["r2_min"]
    )
    return CheckResult(
        "cell_soft_rate",
        passed,
        f"slope:{rate.slope:.4f} r2:{rate.r2:.5f}",
        {"rate": rate.as_dict()},
    )


def check_cell_stiff_rate(
    cfg: config.RunConfig, params: Mapping[str, Any], rows: Sequence[DiscrepancyReport]
) -> CheckResult:
    """``|chi_delta - chi_inf|_H1`` and the second-order defect against ``1 / delta``."""
    A, shape, backend, tol = _cell_inputs(cfg)
    n = params["n"]
    infinity = solve_cell_limit_infinity(A, shape, n, backend=backend, tol=tol)
    first, second = [], []
    for d in params["deltas"]:
        cc = solve_cell(A, shape, n, d, backend=backend, tol=tol)
        first.append((1.0 / d, corrector_distance(cc, infinity)))
        second.append((1.0 / d, second_order_defect(cc, infinity)))
    rate = rates.fit_rate(first)
    second_rate = rates.fit_rate(second)
    passed = (
        params["slope_min"] <= rate.slope <= params["slope_max"]
        and abs(second_rate.slope - params["second_order_slope"]) <= params["second_order_tol"]
    )
    return CheckResult(
        "cell_stiff_rate",
        passed,
        f"slope:{rate.slope:.4f} second_order_slope:{second_rate.slope:.4f}",
        {"rate": rate.as_dict(), "second_order_rate": second_rate.as_dict()},
    )


def check_tensor_sweep(
    cfg: config.RunConfig, params: Mapping[str, Any], rows: Sequence[DiscrepancyReport]
) -> CheckResult:
    """
    Uniform ellipticity, monotonicity and stiff continuity of the homogenized tensor.

    Without ``baseline_mu1`` the sweep minimum becomes the recorded baseline.
    """
    A, shape, backend, tol = _cell_inputs(cfg)
    deltas = rates.log_grid(params["lo"], params["hi"], params["count"])
    sweep = tensor_sweep(deltas, A=A, shape=shape, n=params["n"], backend=backend, tol=tol)
    mu_min = min(sweep.min_eigenvalues)
    baseline = params["baseline_mu1"] if params["baseline_mu1"] is not None else mu_min
    slope = sweep.infinity_rate.slope if sweep.infinity_rate is not None else math.nan
    floors_hold = all(
        mu >= floor - 1e-12 for mu, floor in zip(sweep.min_eigenvalues, sweep.ellipticity_floors)
    )
    passed = (
        mu_min >= params["floor_fraction"] * baseline
        and sweep.monotonicity_violation <= params["monotonicity_tol"]
        and slope >= params["infinity_slope_min"]
        and floors_hold
    )
    return CheckResult(
        "tensor_sweep",
        passed,
        f"mu_min:{mu_min:.6g} baseline:{baseline:.6g} "
        f"monotonicity:{sweep.monotonicity_violation:.2e} infinity_slope:{slope:.4f}",
        {
            "deltas": list(sweep.deltas),
            "min_eigenvalues": list(sweep.min_eigenvalues),
            "baseline_mu1": baseline,
            "tensors": [t.row_major() for t in sweep.tensors],
        },
    )


def check_flux(
    cfg: config.RunConfig, params: Mapping[str, Any], rows: Sequence[DiscrepancyReport]
) -> CheckResult:
    """Exact skew-symmetry, weak divergence and uniform size of the flux corrector."""
    A, shape, backend, tol = _cell_inputs(cfg)
    records = []
    for d in params["deltas"]:
        cc = solve_cell(A, shape, params["n"], d, backend=backend, tol=tol)
        flux = build_flux(cc, div_tol=params["div_tol"], backend=backend, tol=tol)
        records.append(flux.as_dict())
    sizes = [r["Psi_l2"] for r in records]
    ratio = _ratio(sizes)
    skew = max(r["skew_residual"] for r in records)
    div = max(r["div_residual"] for r in records)
    passed = (
        skew <= params["skew_tol"]
        and div <= params["div_tol"]
        and ratio <= params["psi_ratio_max"]
    )
    return CheckResult(
        "flux",
        passed,
        f"skew:{skew:.2e} div:{div:.2e} psi_ratio:{ratio:.3f}",
        {"records": records},
    )


def check_np_spectrum(
    cfg: config.RunConfig, params: Mapping[str, Any], rows: Sequence[DiscrepancyReport]
) -> CheckResult:
    """Spectrum of the Neumann-Poincare operator inside ``(-1/2, 1/2)``."""
    A, shape, backend, tol = _cell_inputs(cfg)
    operator = np_operator(A, shape, params["n"], backend=backend, tol=tol)
    eigenvalues = operator.eigenvalues()
    radius = float(abs(eigenvalues).max()) if len(eigenvalues) else 0.0
    passed = (
        radius < params["bound"]
        and operator.self_adjoint_residual <= params["self_adjoint_tol"]
        and operator.jump_residual <= params["jump_tol"]
    )
    return CheckResult(
        "np_spectrum",
        passed,
        f"radius:{radius:.6f} self_adjoint:{operator.self_adjoint_residual:.2e} "
        f"jump:{operator.jump_residual:.2e}",
        {
            "min": float(eigenvalues.min()),
            "max": float(eigenvalues.max()),
            "count": len(eigenvalues),
        },
    )


def check_representation(
    cfg: config.RunConfig, params: Mapping[str, Any], rows: Sequence[DiscrepancyReport]
) -> CheckResult:
    """Layer-potential correctors against direct cell solves."""
    A, shape, backend, tol = _cell_inputs(cfg)
    n = params["n"]
    operator = np_operator(A, shape, n, backend=backend, tol=tol)
    unit = solve_cell(A, shape, n, 1.0, backend=backend, tol=tol)
    worst: dict[str, float] = {}
    for d in params["deltas"]:
        direct = solve_cell(A, shape, n, d, backend=backend, tol=tol)
        errors = []
        for i, row in enumerate(direct.chi):
            for alpha, chi in enumerate(row):
                via = corrector_via_potentials(d, i, alpha, operator=operator, unit=unit)
                errors.append(norms(via - chi).full / norms(chi).full)
        worst[repr(d)] = max(errors)
    largest = max(worst.values())
    return CheckResult(
        "representation",
        largest <= params["rel_tol"],
        f"max_relative:{largest:.4f}",
        {"relative": worst},
    )


def check_corrected_rate(
    cfg: config.RunConfig, params: Mapping[str, Any], rows: Sequence[DiscrepancyReport]
) -> CheckResult:
    """Corrected-error slope in ``eps`` per contrast and uniformity across contrasts."""
    return _grid_check("corrected_rate", params, rows, lambda r: r.h1_error, uniform=True)


def check_pqr_rate(
    cfg: config.RunConfig, params: Mapping[str, Any], rows: Sequence[DiscrepancyReport]
) -> CheckResult:
    return _grid_check("pqr_rate", params, rows, lambda r: r.pqr, uniform=False)


def check_lipschitz(
    cfg: config.RunConfig, params: Mapping[str, Any], rows: Sequence[DiscrepancyReport]
) -> CheckResult:
    """Gradient sup across contrasts relative to ``delta = 1`` with modified sources."""
    spec = cfg.problem_spec(params["eps"], 1.0)
    deltas = rates.log_grid(params["lo"], params["hi"], params["count"])
    probe = gradient_sup_probe(
        spec, deltas, modify_f=True, backend=cfg.solver.backend, tol=cfg.solver.tol
    )
    return CheckResult(
        "lipschitz",
        probe.ratio <= params["ratio_max"],
        f"ratio:{probe.ratio:.3f} baseline:{probe.baseline:.4g}",
        {"rows": [[r.delta, r.sup_all, r.sup_inclusion, r.sup_matrix] for r in probe.rows]},
    )


CHECKS: dict[str, Check] = {
    "cell_soft_rate": check_cell_soft_rate,
    "cell_stiff_rate": check_cell_stiff_rate,
    "tensor_sweep": check_tensor_sweep,
    "flux": check_flux,
    "np_spectrum": check_np_spectrum,
    "representation": check_representation,
    "corrected_rate": check_corrected_rate,
    "pqr_rate": check_pqr_rate,
    "lipschitz": check_lipschitz,
}

_SLOPE_FIELDS: dict[str, Callable[[DiscrepancyReport], float]] = {
    "h1_error": lambda r: r.h1_error,
    "uncorrected": lambda r: r.uncorrected_error,
    "P_l2": lambda r: r.P_l2,
    "Q_l2": lambda r: r.Q_l2,
    "R_l2": lambda r: r.R_l2,
    "aux_norm": lambda r: r.aux_norm,
    "pqr": lambda r: r.pqr,
}


def _grid_check(
    name: str,
    params: Mapping[str, Any],
    rows: Sequence[DiscrepancyReport],
    getter: Callable[[DiscrepancyReport], float],
    *,
    uniform: bool,
) -> CheckResult:
    deltas = sorted({r.delta for r in rows})
    if not deltas:
        return CheckResult(name, False, "no grid rows")
    slopes: dict[str, float | None] = {}
    for delta in deltas:
        slopes[repr(delta)] = _slope([(r.eps, getter(r)) for r in rows if r.delta == delta])
    values: dict[str, Any] = {"slopes": slopes}
    passed = all(s is not None and s >= params["slope_min"] for s in slopes.values())
    message = " ".join(f"slope[{d}]:{_number(s) or 'n/a'}" for d, s in slopes.items())
    if uniform:
        ratios = {
            repr(eps): _ratio([getter(r) for r in rows if r.eps == eps])
            for eps in sorted({r.eps for r in rows})
        }
        values["delta_ratios"] = ratios
        worst = max(ratios.values())
        passed = passed and worst <= params["ratio_max"]
        message += f" delta_ratio:{worst:.3f}"
    return CheckResult(name, passed, message, values)


def _cell_inputs(cfg: config.RunConfig) -> tuple[Any, Any, str | None, float | None]:
    return (
        cfg.coefficient.build(),
        cfg.geometry.inclusion(),
        cfg.solver.backend,
        cfg.solver.tol,
    )


def _slope(series: list[tuple[float, float]]) -> float | None:
    usable = [(p, e) for p, e in series if e > 0.0]
    if len(usable) < rates.MIN_POINTS:
        return None
    return rates.fit_rate(usable).slope


def _ratio(values: Sequence[float]) -> float:
    top, bottom = max(values), min(values)
    if bottom > 0.0:
        return top / bottom
    return 1.0 if top == 0.0 else math.inf


def _number(value: float | None) -> str:
    if value is None:
        return ""
    return f"{value:.12g}"
