import dataclasses
import functools
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from lfp_logging import logs

from contrast_homog.cell import CellCorrectors, HomogenizedTensor
from contrast_homog.fem import (
    CoefficientField,
    Constraints,
    ContrastWeight,
    FemFunction,
    Solver,
    assemble,
    norms,
    quadrature_norm,
    quadrature_points,
)
from contrast_homog.flux import FluxData
from contrast_homog.mesh import (
    DomainMesh,
    DomainType,
    InclusionShape,
    boundary_distance,
    build_perforated_mesh,
    cell_coordinates,
)
from contrast_homog.smoothing import smooth_and_cut

"""
Domain-level problems on the unit square perforated at scale eps.

The heterogeneous operator is ``-div(Lambda(x) A(x / eps) grad u)`` with
``Lambda = delta`` on the inclusions ``D_eps`` and 1 on the matrix. The
discrepancy against the homogenized solution subtracts the first-order
corrector built from the smoothed, cut-off gradient of ``u_hat`` and the
auxiliary inclusion term ``delta^-1 L_D^-1 f``. The source modification
``f -> Lambda f`` for ``delta < 1`` removes the auxiliary term.
"""

LOG = logs.logger(__name__)

DIM = 2
RESOLUTION_TOLERANCE = 0.2
TYPE_I_EXCLUSION = 2.0

Field = Callable[[np.ndarray], np.ndarray]


class ResolutionError(RuntimeError):
    """Raised when the FEM error estimate is too large against the homogenization error."""

    def __init__(self, ratio: float, tolerance: float) -> None:
        super().__init__(
            f"Domain mesh too coarse for the homogenization error - ratio:{ratio:.3f} "
            f"tolerance:{tolerance}"
        )
        self.ratio = ratio


@dataclass(frozen=True)
class ProblemSpec:
    """
    Dirichlet problem on the perforated unit square.

    Attributes
    ----------
    A
        Periodic coefficient in cell coordinates.
    shape, eps, kappa, domain_type, m_ref
        Geometry and mesh parameters, see :func:`contrast_homog.mesh.build_perforated_mesh`.
    delta
        Contrast.
    f, g
        Source and boundary field as functions of points returning ``(k, m)``;
        ``None`` means zero.
    modify_f
        Replace ``f`` by ``Lambda f`` when ``delta < 1``.
    """

    A: CoefficientField
    shape: InclusionShape
    eps: float
    kappa: float
    delta: float
    f: Field | None = None
    g: Field | None = None
    modify_f: bool = False
    domain_type: DomainType = DomainType.TYPE_II
    m_ref: int = 8

    @property
    def m(self) -> int:
        return self.A.m

    @property
    def source_modified(self) -> bool:
        return self.modify_f and self.delta < 1.0

    def with_delta(self, delta: float, *, modify_f: bool | None = None) -> "ProblemSpec":
        return dataclasses.replace(
            self, delta=delta, modify_f=self.modify_f if modify_f is None else modify_f
        )

    def source_weights(self, mesh: DomainMesh) -> np.ndarray | None:
        """Per-element source multipliers: ``Lambda`` when the source is modified."""
        if not self.source_modified:
            return None
        return ContrastWeight(self.delta).element_weights(mesh)


@dataclass(frozen=True)
class DiscrepancyReport:
    """
    Norms of one discrepancy evaluation.

    ``h1_error`` and ``uncorrected_error`` exclude the ``2 eps`` boundary band
    on ``type1`` domains. ``flagged`` marks runs where the corrector did not
    reduce the error.
    """

    eps: float
    delta: float
    h1_error: float
    uncorrected_error: float
    corrector_norm: float
    P_l2: float
    Q_l2: float
    R_l2: float
    aux_norm: float
    energy: float
    grad_sup: float = 0.0
    resolution_ratio: float | None = None

    @property
    def pqr(self) -> float:
        return self.P_l2 + self.Q_l2 + self.eps * self.R_l2

    @property
    def flagged(self) -> bool:
        return self.h1_error > self.uncorrected_error

    def as_dict(self) -> dict[str, float | None]:
        out = dataclasses.asdict(self)
        out["pqr"] = self.pqr
        return out


@dataclass(frozen=True)
class EnergyTerms:
    """Ingredients of the uniform energy estimate next to ``|u|_H1``."""

    f_l2: float
    inclusion_source: float
    lift_h1: float
    u_h1: float

    @property
    def bound(self) -> float:
        return self.f_l2 + self.inclusion_source + self.lift_h1


@dataclass(frozen=True)
class GradientRow:
    delta: float
    sup_all: float
    sup_inclusion: float
    sup_matrix: float


@dataclass(frozen=True)
class GradientProbe:
    """Largest elementwise gradient per contrast, and the worst ratio to ``delta = 1``."""

    rows: tuple[GradientRow, ...]
    baseline: float
    ratio: float


def reference_problem(
    *,
    eps: float = 0.125,
    delta: float = 1.0,
    coefficient: CoefficientField | None = None,
    r: float = 0.25,
    kappa: float = 0.1,
    modify_f: bool | None = None,
    m_ref: int = 8,
    domain_type: DomainType | str = DomainType.TYPE_II,
) -> ProblemSpec:
    """
    Reference configuration: square inclusions, ``f = sin(pi x1) sin(pi x2)``,
    ``g = x1 x2``. ``modify_f`` defaults to ``delta < 1``.
    """
    A = coefficient or CoefficientField.identity()
    return ProblemSpec(
        A=A,
        shape=InclusionShape.square(r),
        eps=eps,
        kappa=kappa,
        delta=delta,
        f=source_field("sine", A.m),
        g=boundary_field("x1x2", A.m),
        modify_f=delta < 1.0 if modify_f is None else modify_f,
        domain_type=DomainType(domain_type),
        m_ref=m_ref,
    )


def source_field(name: str, m: int = 1) -> Field | None:
    """Source from the catalogue ``sine``, ``one``, ``zero``."""
    functions = {"sine": _sine, "one": _one, "zero": None}
    if name not in functions:
        raise ValueError(f"Unknown source - name:{name} known:{sorted(functions)}")
    function = functions[name]
    return None if function is None else functools.partial(_replicated, function=function, m=m)


def boundary_field(name: str, m: int = 1) -> Field | None:
    """Boundary data from the catalogue ``x1x2``, ``affine``, ``zero``."""
    functions = {"x1x2": _bilinear, "affine": _affine, "zero": None}
    if name not in functions:
        raise ValueError(f"Unknown boundary data - name:{name} known:{sorted(functions)}")
    function = functions[name]
    return None if function is None else functools.partial(_replicated, function=function, m=m)


def scaled_coefficient(A: CoefficientField, eps: float) -> CoefficientField:
    """``A(x / eps)`` in cell coordinates ``frac(x / eps + 1/2) - 1/2``."""
    return CoefficientField(
        m=A.m,
        evaluate=functools.partial(_scaled_values, A=A, eps=float(eps)),
        mu=A.mu,
        holder=A.holder,
        is_symmetric=A.is_symmetric,
        name=f"{A.name}@{eps:g}",
    )


def domain_mesh(spec: ProblemSpec, m_ref: int | None = None) -> DomainMesh:
    return _domain_mesh(
        spec.shape, float(spec.eps), float(spec.kappa), m_ref or spec.m_ref, spec.domain_type
    )


def solve_heterogeneous(
    spec: ProblemSpec,
    mesh: DomainMesh | None = None,
    *,
    backend: str | None = None,
    tol: float | None = None,
) -> FemFunction:
    """
    Solve ``-div(Lambda A(x/eps) grad u) = f`` with ``u = g`` on the boundary.

    Raises
    ------
    SolverError
        When the linear solve misses its tolerance.
    """
    mesh = mesh or domain_mesh(spec)
    system = assemble(
        mesh,
        scaled_coefficient(spec.A, spec.eps),
        ContrastWeight(spec.delta),
        spec.f,
        Constraints.dirichlet(mesh, spec.m, mesh.boundary_vertices, spec.g),
        source_weights=spec.source_weights(mesh),
    )
    u = Solver(system, backend=backend, tol=tol)()
    LOG.debug("Heterogeneous solve - eps:%s delta:%s nv:%s", spec.eps, spec.delta, mesh.nv)
    return u


def solve_homogenized(
    Ahat: HomogenizedTensor | CoefficientField,
    f: Field | None,
    g: Field | None,
    mesh: DomainMesh,
    *,
    source_weights: np.ndarray | None = None,
    backend: str | None = None,
    tol: float | None = None,
) -> FemFunction:
    """Constant-coefficient Dirichlet solve on ``mesh``; inclusion marking is ignored."""
    coefficient = Ahat.as_coefficient() if isinstance(Ahat, HomogenizedTensor) else Ahat
    system = assemble(
        mesh,
        coefficient,
        f=f,
        constraints=Constraints.dirichlet(mesh, coefficient.m, mesh.boundary_vertices, g),
        source_weights=source_weights,
    )
    return Solver(system, backend=backend, tol=tol)()


def aux_inverse(
    spec: ProblemSpec,
    mesh: DomainMesh | None = None,
    *,
    backend: str | None = None,
    tol: float | None = None,
) -> FemFunction:
    """
    Solve ``-div(A(x/eps) grad v) = f`` on every inclusion with ``v = 0`` outside.

    The inclusions decouple; one sparse solve covers all of them.
    """
    mesh = mesh or domain_mesh(spec)
    m = spec.m
    region = mesh.element_region
    interior = mesh.inclusion_vertices & ~mesh.interface_vertices & ~mesh.boundary_vertices
    if spec.f is None or not interior.any():
        return FemFunction(mesh, np.zeros((mesh.nv, m)))
    system = assemble(
        mesh,
        scaled_coefficient(spec.A, spec.eps),
        f=spec.f,
        constraints=Constraints.dirichlet(mesh, m, ~interior),
        element_weights=region.astype(float),
        source_weights=region.astype(float),
    )
    v = Solver(system, backend=backend, tol=tol)()
    LOG.debug(
        "Auxiliary inclusion solve - eps:%s interior_vertices:%s", spec.eps, int(interior.sum())
    )
    return v


def energy_terms(
    spec: ProblemSpec,
    u: FemFunction | None = None,
    *,
    backend: str | None = None,
    tol: float | None = None,
) -> EnergyTerms:
    """
    Right-hand-side ingredients of the energy estimate.

    ``inclusion_source`` is ``eps / delta * |f|_L2(D_eps)`` for unmodified
    sources at ``delta < 1`` and zero otherwise.
    """
    mesh = domain_mesh(spec)
    u = u or solve_heterogeneous(spec, mesh, backend=backend, tol=tol)
    f_values = _sample(spec.f, mesh, spec.m)
    f_l2 = quadrature_norm(mesh, f_values)
    inclusion_source = 0.0
    if spec.delta < 1.0 and not spec.source_modified:
        inclusion_norm = quadrature_norm(mesh, f_values, mesh.element_region)
        inclusion_source = spec.eps / spec.delta * inclusion_norm
    lift = np.zeros((mesh.nv, spec.m)) if spec.g is None else spec.g(mesh.vertices)
    lift_h1 = norms(FemFunction(mesh, lift)).full
    return EnergyTerms(
        f_l2=f_l2, inclusion_source=inclusion_source, lift_h1=lift_h1, u_h1=norms(u).full
    )


def discrepancy(
    spec: ProblemSpec,
    cc: CellCorrectors,
    Ahat: HomogenizedTensor,
    flux: FluxData,
    *,
    check_resolution: bool = False,
    resolution_tol: float = RESOLUTION_TOLERANCE,
    backend: str | None = None,
    tol: float | None = None,
) -> DiscrepancyReport:
    """
    Corrected discrepancy and its diagnostics.

    ``w = u - u_hat - eps chi(x/eps) S_eps(eta grad u_hat) - delta^-1 v``

    Parameters
    ----------
    spec
        Domain problem.
    cc, Ahat, flux
        Cell correctors, homogenized tensor and flux corrector at ``spec.delta``.
    check_resolution
        Re-solve the heterogeneous problem with ``m_ref`` doubled and require the
        FEM error estimate to stay below ``resolution_tol`` times the
        homogenization error.

    Raises
    ------
    ValueError
        When the ingredients were computed at a different contrast.
    ResolutionError
        When the resolution check fails.
    """
    for label, value in (("correctors", cc.delta), ("tensor", Ahat.delta), ("flux", flux.delta)):
        if value is None or not math.isclose(value, spec.delta, rel_tol=1e-12):
            raise ValueError(f"Ingredient contrast mismatch - {label}:{value} delta:{spec.delta}")
    mesh = domain_mesh(spec)
    m = spec.m
    eps = spec.eps

    u = solve_heterogeneous(spec, mesh, backend=backend, tol=tol)
    u_hat = solve_homogenized(
        Ahat,
        spec.f,
        spec.g,
        mesh,
        source_weights=spec.source_weights(mesh),
        backend=backend,
        tol=tol,
    )
    if spec.source_modified:
        aux = FemFunction(mesh, np.zeros((mesh.nv, m)))
    else:
        aux = aux_inverse(spec, mesh, backend=backend, tol=tol) * (1.0 / spec.delta)

    # du[e, j, beta] = d_j u_hat^beta
    du = u_hat.gradients().transpose(0, 2, 1)
    smoothed = smooth_and_cut(du.reshape(mesh.ne, DIM * m), eps, mesh)

    cell_vertices = cell_coordinates(mesh.vertices, eps)
    chi_nodal = np.stack(
        [np.stack([cc.chi[i][alpha].at(cell_vertices) for alpha in range(m)]) for i in range(DIM)]
    )  # [i, alpha, v, beta]
    G_nodal = smoothed.values.reshape(mesh.nv, DIM, m)
    corrector = FemFunction(mesh, eps * np.einsum("iavb,via->vb", chi_nodal, G_nodal))

    w = u - u_hat - corrector - aux
    mask = None
    if mesh.domain_type is DomainType.TYPE_I:
        mask = boundary_distance(mesh.centroids) >= TYPE_I_EXCLUSION * eps
    P, Q, R = _pqr(mesh, spec, cc, Ahat, flux, du, smoothed)
    report = DiscrepancyReport(
        eps=float(eps),
        delta=float(spec.delta),
        h1_error=norms(w, element_mask=mask).full,
        uncorrected_error=norms(u - u_hat, element_mask=mask).full,
        corrector_norm=norms(corrector, element_mask=mask).full,
        P_l2=quadrature_norm(mesh, P),
        Q_l2=quadrature_norm(mesh, Q),
        R_l2=quadrature_norm(mesh, R),
        aux_norm=norms(aux, element_mask=mask).full,
        energy=norms(u).full,
        grad_sup=float(np.sqrt(np.sum(u.gradients() ** 2, axis=(1, 2))).max()),
    )
    if check_resolution:
        ratio = _resolution_ratio(spec, u, report.h1_error, backend=backend, tol=tol)
        report = dataclasses.replace(report, resolution_ratio=ratio)
        if ratio > resolution_tol:
            raise ResolutionError(ratio, resolution_tol)
    if report.flagged:
        LOG.warning(
            "Corrector did not reduce the error - eps:%s delta:%s corrected:%.4g uncorrected:%.4g",
            eps,
            spec.delta,
            report.h1_error,
            report.uncorrected_error,
        )
    LOG.info(
        "Discrepancy evaluated - eps:%s delta:%s h1_error:%.4g uncorrected:%.4g pqr:%.4g",
        eps,
        spec.delta,
        report.h1_error,
        report.uncorrected_error,
        report.pqr,
    )
    return report


def gradient_sup_probe(
    spec: ProblemSpec,
    deltas: Sequence[float],
    *,
    modify_f: bool = True,
    backend: str | None = None,
    tol: float | None = None,
) -> GradientProbe:
    """
    Largest elementwise ``|grad u|`` over the domain, the inclusions and the
    matrix for each contrast. ``delta = 1`` is always included as baseline.
    """
    mesh = domain_mesh(spec)
    grid = sorted({float(d) for d in deltas} | {1.0})
    rows = []
    for delta in grid:
        u = solve_heterogeneous(
            spec.with_delta(delta, modify_f=modify_f), mesh, backend=backend, tol=tol
        )
        magnitude = np.sqrt(np.sum(u.gradients() ** 2, axis=(1, 2)))
        region = mesh.element_region
        rows.append(
            GradientRow(
                delta=delta,
                sup_all=float(magnitude.max()),
                sup_inclusion=float(magnitude[region].max(initial=0.0)),
                sup_matrix=float(magnitude[~region].max(initial=0.0)),
            )
        )
    baseline = next(row.sup_all for row in rows if row.delta == 1.0)
    ratio = max(row.sup_all for row in rows) / baseline if baseline > 0.0 else math.inf
    LOG.info(
        "Gradient probe - eps:%s deltas:%s baseline:%.4g ratio:%.3f modify_f:%s",
        spec.eps,
        len(grid),
        baseline,
        ratio,
        modify_f,
    )
    return GradientProbe(rows=tuple(rows), baseline=baseline, ratio=ratio)


def _pqr(
    mesh: DomainMesh,
    spec: ProblemSpec,
    cc: CellCorrectors,
    Ahat: HomogenizedTensor,
    flux: FluxData,
    du: np.ndarray,
    smoothed: FemFunction,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``P``, ``Q`` and ``R`` at quadrature points, ``(ne, 3, d, m)`` / ``(ne, 3, m)``."""
    m = spec.m
    eps = spec.eps
    points = quadrature_points(mesh).reshape(-1, DIM)
    cell_points = cell_coordinates(points, eps)
    a = spec.A(cell_points).reshape(mesh.ne, 3, DIM, DIM, m, m)

    G = smoothed.at_quadrature().reshape(mesh.ne, 3, DIM, m)
    # dG[e, j, beta, k] = d_k S(eta d_j u_hat^beta)
    dG = smoothed.gradients().reshape(mesh.ne, DIM, m, DIM)
    # X[e, q, k, gamma, beta] = chi_k^{gamma beta}(x / eps)
    X = np.stack(
        [
            np.stack([cc.chi[k][beta].at(cell_points) for beta in range(m)], axis=-1)
            for k in range(DIM)
        ],
        axis=1,
    ).reshape(mesh.ne, 3, DIM, m, m)

    cell_elements, _ = cc.mesh.locate(cell_coordinates(mesh.centroids, eps))
    grad_chi = cc.gradient_tensor("chi")[cell_elements]  # [e, j, beta, gamma, k]
    psi = flux.psi[cell_elements]  # [e, k, i, j, alpha, beta]

    gap = G - du[:, None]
    bracket = gap - eps * np.einsum("eqkbg,ekgj->eqjb", X, dG)
    P = np.einsum("eqijab,eqjb->eqia", a, bracket)
    Q = eps * np.einsum("ekijab,ejbk->eia", psi, dG)[:, None] - np.einsum(
        "ijab,eqjb->eqia", Ahat.tensor(), gap
    )
    flux_field = a + np.einsum("eqikag,ejbgk->eqijab", a, grad_chi)
    R = np.einsum("eqijab,ejbi->eqa", flux_field, dG)
    return P, Q, R


def _resolution_ratio(
    spec: ProblemSpec,
    u: FemFunction,
    h1_error: float,
    *,
    backend: str | None,
    tol: float | None,
) -> float:
    fine_mesh = domain_mesh(spec, m_ref=2 * spec.m_ref)
    fine = solve_heterogeneous(spec, fine_mesh, backend=backend, tol=tol)
    coarse = FemFunction(fine_mesh, u.at(fine_mesh.vertices))
    estimate = norms(fine - coarse).full
    if h1_error <= 1e-12 * max(norms(u).full, 1.0):
        return 0.0 if estimate <= 1e-12 else math.inf
    ratio = estimate / h1_error
    LOG.debug("Resolution check - eps:%s estimate:%.4g ratio:%.3f", spec.eps, estimate, ratio)
    return ratio


@functools.lru_cache(maxsize=8)
def _domain_mesh(
    shape: InclusionShape, eps: float, kappa: float, m_ref: int, domain_type: DomainType
) -> DomainMesh:
    return build_perforated_mesh(shape, eps, kappa, m_ref, domain_type)


def _sample(f: Field | None, mesh: DomainMesh, m: int) -> np.ndarray:
    if f is None:
        return np.zeros((mesh.ne, 3, m))
    values = np.asarray(f(quadrature_points(mesh).reshape(-1, DIM)), dtype=float)
    return values.reshape(mesh.ne, 3, m)


def _scaled_values(points: np.ndarray, *, A: CoefficientField, eps: float) -> np.ndarray:
    return A(cell_coordinates(points, eps))


def _replicated(
    points: np.ndarray, *, function: Callable[[np.ndarray], np.ndarray], m: int
) -> np.ndarray:
    values = function(np.asarray(points, dtype=float))
    return np.repeat(values[:, None], m, axis=1)


def _sine(points: np.ndarray) -> np.ndarray:
    return np.sin(np.pi * points[:, 0]) * np.sin(np.pi * points[:, 1])


def _one(points: np.ndarray) -> np.ndarray:
    return np.ones(len(points))


def _bilinear(points: np.ndarray) -> np.ndarray:
    return points[:, 0] * points[:, 1]


def _affine(points: np.ndarray) -> np.ndarray:
    return 1.0 + 2.0 * points[:, 0] - points[:, 1]
