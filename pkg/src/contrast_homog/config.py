import copy
import dataclasses
import json
import math
import pathlib
from collections.abc import Mapping
from dataclasses import dataclass
from os import PathLike
from typing import Any

import mergedeep
from lfp_logging import logs

from contrast_homog.fem import CoefficientField
from contrast_homog.lab import ProblemSpec, boundary_field, source_field
from contrast_homog.mesh import DomainType, InclusionShape

"""
Run configurations.

A run config is a JSON document deep-merged over :data:`DEFAULTS` and then
validated into frozen dataclasses. Every key is checked: unknown keys and
wrongly typed values raise :class:`ConfigError` carrying the dotted key path.

Acceptance checks are opt-in: each key under ``acceptance`` enables the
check of that name, and its parameters are merged over the check's entry in
:data:`CHECK_DEFAULTS`.
"""

LOG = logs.logger(__name__)

DEFAULTS: dict[str, Any] = {
    "name": "run",
    "geometry": {
        "shape": "square",
        "r": 0.25,
        "n_seg": 64,
        "kappa": 0.1,
        "domain_type": "type2",
    },
    "coefficient": {"name": "identity", "amplitude": 0.5},
    "problem": {"f": "sine", "g": "x1x2", "modify_f": "auto"},
    "delta_grid": [],
    "eps_grid": [],
    "mesh": {
        "cell_n": 32,
        "m_ref": 8,
        "resolution_check": False,
        "resolution_tol": 0.2,
        "dump": False,
    },
    "solver": {"backend": None, "tol": None},
    "outputs": {"dir": "out", "csv": "results.csv", "summary": "summary.json"},
    "acceptance": {},
}

CHECK_DEFAULTS: dict[str, dict[str, Any]] = {
    "cell_soft_rate": {
        "deltas": [1e-1, 3e-2, 1e-2, 3e-3, 1e-3],
        "n": 64,
        "slope_min": 0.85,
        "slope_max": 1.15,
        "r2_min": 0.99,
    },
    "cell_stiff_rate": {
        "deltas": [1e1, 3e1, 1e2, 3e2, 1e3],
        "n": 64,
        "slope_min": 0.85,
        "slope_max": 1.15,
        "second_order_slope": 2.0,
        "second_order_tol": 0.3,
    },
    "tensor_sweep": {
        "lo": 1e-4,
        "hi": 1e4,
        "count": 9,
        "n": 32,
        "baseline_mu1": None,
        "floor_fraction": 0.9,
        "monotonicity_tol": 1e-10,
        "infinity_slope_min": 0.85,
    },
    "flux": {
        "deltas": [1e-2, 1.0, 1e2],
        "n": 32,
        "skew_tol": 0.0,
        "div_tol": 1e-8,
        "psi_ratio_max": 5.0,
    },
    "np_spectrum": {
        "n": 32,
        "bound": 0.499,
        "self_adjoint_tol": 1e-9,
        "jump_tol": 1e-8,
    },
    "representation": {"deltas": [0.1, 10.0], "n": 64, "rel_tol": 0.05},
    "corrected_rate": {"slope_min": 0.45, "ratio_max": 3.0},
    "pqr_rate": {"slope_min": 0.45},
    "lipschitz": {
        "eps": 0.125,
        "lo": 1e-3,
        "hi": 1e3,
        "count": 7,
        "ratio_max": 4.0,
    },
}

COEFFICIENTS = ("identity", "oscillating", "system")


class ConfigError(ValueError):
    """Schema violation in a run config; ``path`` is the dotted key path."""

    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{message} - key:{path}")
        self.path = path


@dataclass(frozen=True)
class GeometryConfig:
    shape: str
    r: float
    n_seg: int
    kappa: float
    domain_type: DomainType

    def inclusion(self) -> InclusionShape:
        if self.shape == "disk":
            return InclusionShape.disk(self.r, self.n_seg)
        return InclusionShape.square(self.r)


@dataclass(frozen=True)
class CoefficientConfig:
    name: str
    amplitude: float

    def build(self) -> CoefficientField:
        """Coefficient from the catalogue ``identity``, ``oscillating``, ``system``."""
        if self.name == "identity":
            return CoefficientField.identity()
        if self.name == "oscillating":
            return CoefficientField.oscillating(self.amplitude)
        return CoefficientField.diagonal_block(
            [CoefficientField.identity(), CoefficientField.oscillating(self.amplitude)]
        )


@dataclass(frozen=True)
class ProblemConfig:
    f: str
    g: str
    modify_f: bool | None


@dataclass(frozen=True)
class MeshConfig:
    cell_n: int
    m_ref: int
    resolution_check: bool
    resolution_tol: float
    dump: bool


@dataclass(frozen=True)
class SolverConfig:
    backend: str | None
    tol: float | None


@dataclass(frozen=True)
class OutputConfig:
    dir: pathlib.Path
    csv: str
    summary: str

    @property
    def csv_path(self) -> pathlib.Path:
        return self.dir / self.csv

    @property
    def summary_path(self) -> pathlib.Path:
        return self.dir / self.summary


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration."""

    name: str
    geometry: GeometryConfig
    coefficient: CoefficientConfig
    problem: ProblemConfig
    delta_grid: tuple[float, ...]
    eps_grid: tuple[float, ...]
    mesh: MeshConfig
    solver: SolverConfig
    outputs: OutputConfig
    acceptance: Mapping[str, Mapping[str, Any]]

    def problem_spec(self, eps: float, delta: float) -> ProblemSpec:
        """Domain problem at ``(eps, delta)``; ``modify_f: auto`` modifies for ``delta < 1``."""
        A = self.coefficient.build()
        modify_f = delta < 1.0 if self.problem.modify_f is None else self.problem.modify_f
        return ProblemSpec(
            A=A,
            shape=self.geometry.inclusion(),
            eps=eps,
            kappa=self.geometry.kappa,
            delta=delta,
            f=source_field(self.problem.f, A.m),
            g=boundary_field(self.problem.g, A.m),
            modify_f=modify_f,
            domain_type=self.geometry.domain_type,
            m_ref=self.mesh.m_ref,
        )

    def with_output_dir(self, out: pathlib.Path) -> "RunConfig":
        outputs = OutputConfig(dir=out, csv=self.outputs.csv, summary=self.outputs.summary)
        return _replace(self, outputs=outputs)


def parse(data: Mapping[str, Any], *, base_dir: pathlib.Path | None = None) -> RunConfig:
    """
    Merge ``data`` over :data:`DEFAULTS` and validate.

    Parameters
    ----------
    data
        Decoded JSON object.
    base_dir
        Directory relative output paths resolve against; the working
        directory when omitted.

    Raises
    ------
    ConfigError
        On unknown keys, wrong types or out-of-range values.
    """
    if not isinstance(data, Mapping):
        raise ConfigError("<root>", "Run config must be a JSON object")
    _check_keys(data, DEFAULTS, "")
    # lists replace rather than extend
    merged = mergedeep.merge({}, copy.deepcopy(DEFAULTS), copy.deepcopy(dict(data)))

    geometry = merged["geometry"]
    shape = _choice(geometry["shape"], ("square", "disk"), "geometry.shape")
    r = _number(geometry["r"], "geometry.r")
    if not 0.0 < r < 0.5:
        raise ConfigError("geometry.r", f"Inclusion size must lie in (0, 1/2) - r:{r}")
    kappa = _number(geometry["kappa"], "geometry.kappa")
    if kappa <= 0.0:
        raise ConfigError("geometry.kappa", f"Boundary separation must be positive - kappa:{kappa}")
    domain_type = DomainType(
        _choice(geometry["domain_type"], tuple(t.value for t in DomainType), "geometry.domain_type")
    )

    coefficient = merged["coefficient"]
    problem = merged["problem"]
    modify_f = problem["modify_f"]
    if modify_f == "auto":
        modify_f = None
    elif not isinstance(modify_f, bool):
        raise ConfigError("problem.modify_f", f"Expected true, false or 'auto' - value:{modify_f}")

    mesh = merged["mesh"]
    solver = merged["solver"]
    outputs = merged["outputs"]
    out_dir = pathlib.Path(_string(outputs["dir"], "outputs.dir"))
    if base_dir is not None and not out_dir.is_absolute():
        out_dir = base_dir / out_dir

    config = RunConfig(
        name=_string(merged["name"], "name"),
        geometry=GeometryConfig(
            shape=shape,
            r=r,
            n_seg=_integer(geometry["n_seg"], "geometry.n_seg"),
            kappa=kappa,
            domain_type=domain_type,
        ),
        coefficient=CoefficientConfig(
            name=_choice(coefficient["name"], COEFFICIENTS, "coefficient.name"),
            amplitude=_number(coefficient["amplitude"], "coefficient.amplitude"),
        ),
        problem=ProblemConfig(
            f=_choice(problem["f"], ("sine", "one", "zero"), "problem.f"),
            g=_choice(problem["g"], ("x1x2", "affine", "zero"), "problem.g"),
            modify_f=modify_f,
        ),
        delta_grid=_grid(merged["delta_grid"], "delta_grid"),
        eps_grid=_grid(merged["eps_grid"], "eps_grid", upper=0.5),
        mesh=MeshConfig(
            cell_n=_integer(mesh["cell_n"], "mesh.cell_n"),
            m_ref=_integer(mesh["m_ref"], "mesh.m_ref"),
            resolution_check=_boolean(mesh["resolution_check"], "mesh.resolution_check"),
            resolution_tol=_number(mesh["resolution_tol"], "mesh.resolution_tol"),
            dump=_boolean(mesh["dump"], "mesh.dump"),
        ),
        solver=SolverConfig(
            backend=_optional(solver["backend"], "solver.backend", _backend),
            tol=_optional(solver["tol"], "solver.tol", _number),
        ),
        outputs=OutputConfig(
            dir=out_dir,
            csv=_string(outputs["csv"], "outputs.csv"),
            summary=_string(outputs["summary"], "outputs.summary"),
        ),
        acceptance=_acceptance(merged["acceptance"]),
    )
    LOG.debug(
        "Run config parsed - name:%s deltas:%s eps:%s checks:%s",
        config.name,
        len(config.delta_grid),
        len(config.eps_grid),
        sorted(config.acceptance),
    )
    return config


def load(path: PathLike | str) -> RunConfig:
    """
    Read and validate a JSON run config.

    Raises
    ------
    json.JSONDecodeError
        On malformed JSON; ``lineno`` and ``colno`` locate the problem.
    ConfigError
        On schema violations.
    """
    path = pathlib.Path(path)
    data = json.loads(path.read_text())
    return parse(data, base_dir=path.parent)


def _acceptance(section: Any) -> Mapping[str, Mapping[str, Any]]:
    if not isinstance(section, Mapping):
        raise ConfigError("acceptance", "Expected an object")
    checks: dict[str, Mapping[str, Any]] = {}
    for name, params in section.items():
        path = f"acceptance.{name}"
        if name not in CHECK_DEFAULTS:
            raise ConfigError(path, f"Unknown acceptance check - known:{sorted(CHECK_DEFAULTS)}")
        params = {} if params is True else params
        if not isinstance(params, Mapping):
            raise ConfigError(path, "Expected an object or true")
        defaults = CHECK_DEFAULTS[name]
        _check_keys(params, defaults, path)
        merged = {**defaults, **params}
        for key, value in merged.items():
            _check_like(value, defaults[key], f"{path}.{key}")
        checks[name] = merged
    return checks


def _check_keys(data: Mapping[str, Any], schema: Mapping[str, Any], prefix: str) -> None:
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in schema:
            raise ConfigError(path, "Unknown key")
        default = schema[key]
        if isinstance(default, dict) and default:
            if not isinstance(value, Mapping):
                raise ConfigError(path, "Expected an object")
            _check_keys(value, default, path)


def _check_like(value: Any, default: Any, path: str) -> None:
    if default is None:
        if value is not None:
            _number(value, path)
    elif isinstance(default, bool):
        _boolean(value, path)
    elif isinstance(default, int):
        _integer(value, path)
    elif isinstance(default, float):
        _number(value, path)
    elif isinstance(default, list):
        _grid(value, path)


def _grid(value: Any, path: str, *, upper: float = math.inf) -> tuple[float, ...]:
    if not isinstance(value, list):
        raise ConfigError(path, "Expected a list of numbers")
    out = tuple(_number(v, f"{path}[{k}]") for k, v in enumerate(value))
    for k, v in enumerate(out):
        if not 0.0 < v <= upper:
            raise ConfigError(f"{path}[{k}]", f"Value out of range (0, {upper}] - value:{v}")
    return out


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, int | float):
        raise ConfigError(path, f"Expected a number - value:{value!r}")
    if not math.isfinite(value):
        raise ConfigError(path, f"Expected a finite number - value:{value!r}")
    return float(value)


def _integer(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"Expected an integer - value:{value!r}")
    if value <= 0:
        raise ConfigError(path, f"Expected a positive integer - value:{value}")
    return value


def _boolean(value: Any, path: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(path, f"Expected true or false - value:{value!r}")
    return value


def _string(value: Any, path: str) -> str:
    if not isinstance(value, str) or not value:
        raise ConfigError(path, f"Expected a non-empty string - value:{value!r}")
    return value


def _choice(value: Any, choices: tuple[str, ...], path: str) -> str:
    if value not in choices:
        raise ConfigError(path, f"Expected one of {list(choices)} - value:{value!r}")
    return value


def _backend(value: Any, path: str) -> str:
    return _choice(value, ("direct", "cg"), path)


def _optional(value: Any, path: str, check: Any) -> Any:
    return None if value is None else check(value, path)


def _replace(config: RunConfig, **changes: Any) -> RunConfig:
    return dataclasses.replace(config, **changes)
