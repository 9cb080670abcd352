import enum
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from lfp_logging import logs
from scipy import sparse

from contrast_homog import rates
from contrast_homog.fem import (
    CoefficientField,
    Constraints,
    ContrastWeight,
    FemFunction,
    Norms,
    Solver,
    assemble,
    element_coefficients,
    linear_lift,
    norms,
    p0_norm,
    tensor_to_matrix,
)
from contrast_homog.mesh import CellMesh, InclusionShape, build_cell_mesh

"""
Cell problems on the torus and homogenized tensors.

For a unit affine field ``y_i e^alpha`` the corrector ``chi`` makes
``chi + y_i e^alpha`` a weak solution of the contrast problem on the torus.
Four variants share the same mesh and lifts:

- finite contrast ``delta``: periodic solve with weight ``delta`` on the
  inclusion;
- unit contrast: the same solve at ``delta = 1``;
- soft limit (``zero``): Neumann problem on the matrix, extended harmonically
  into the inclusion with the exterior trace as Dirichlet data;
- stiff limit (``infinity``): every inclusion vertex of ``chi + y_i e^alpha``
  is aggregated into one unknown per component, followed by the interior
  Neumann problem for the second-order corrector ``w`` driven by the
  exterior conormal flux.

All solves of one variant share one factorization. Correctors are normalized
to mean zero over the cell; ``w`` to mean zero over the inclusion.
"""

LOG = logs.logger(__name__)

DIM = 2
COMPATIBILITY_TOLERANCE = 1e-8
MONOTONICITY_SAMPLES = 50


class LimitTag(str, enum.Enum):
    FINITE = "finite"
    UNIT = "unit"
    ZERO = "zero"
    INFINITY = "infinity"


class CompatibilityError(RuntimeError):
    """Raised when the stiff-limit interface flux does not integrate to zero."""

    def __init__(self, residual: float) -> None:
        super().__init__(f"Interface flux is not compatible - residual:{residual:.3e}")
        self.residual = residual


@dataclass(frozen=True, eq=False)
class CellCorrectors:
    """
    Correctors of one cell problem variant.

    Attributes
    ----------
    mesh
        Cell mesh shared by all fields.
    coefficient
        Coefficient the correctors were solved for.
    tag
        Variant.
    delta
        Contrast for ``finite`` and ``unit`` tags, ``None`` for limits.
    chi
        ``chi[j][beta]`` is the m-component corrector of ``y_j e^beta``.
    w
        Second-order inclusion correctors, same indexing; stiff limit only.
    compatibility
        Largest interface flux integral seen while building ``w``.
    """

    mesh: CellMesh
    coefficient: CoefficientField
    tag: LimitTag
    delta: float | None
    chi: tuple[tuple[FemFunction, ...], ...]
    w: tuple[tuple[FemFunction, ...], ...] | None = None
    compatibility: float | None = None

    @property
    def m(self) -> int:
        return self.coefficient.m

    @property
    def label(self) -> str:
        if self.tag is LimitTag.ZERO:
            return "zero"
        elif self.tag is LimitTag.INFINITY:
            return "inf"
        return repr(self.delta)

    def element_weights(self) -> np.ndarray:
        """Contrast weight entering the homogenized tensor of this variant."""
        if self.tag in (LimitTag.FINITE, LimitTag.UNIT):
            return ContrastWeight(self.delta).element_weights(self.mesh)
        return (~self.mesh.element_region).astype(float)

    def gradient_tensor(self, fields: str = "chi") -> np.ndarray:
        """Elementwise gradients ``[e, j, beta, gamma, k] = d_k field_j^{gamma beta}``."""
        source = self.chi if fields == "chi" else self.w
        if source is None:
            raise ValueError(f"Correctors have no {fields} fields - tag:{self.tag.value}")
        return np.stack(
            [np.stack([u.gradients() for u in row]) for row in source]
        ).transpose(2, 0, 1, 3, 4)

    def chi_norms(self) -> list[list[Norms]]:
        return [[norms(u) for u in row] for row in self.chi]

    def field(self, j: int, beta: int) -> FemFunction:
        return self.chi[j][beta]


@dataclass(frozen=True, eq=False)
class HomogenizedTensor:
    """
    Homogenized tensor as a ``(dm, dm)`` matrix with index ``i * m + alpha``.

    Attributes
    ----------
    entries
        Matrix entries ``hat a_ij^{alpha beta}`` at row ``(i, alpha)``, column ``(j, beta)``.
    m
        Component count.
    tag, delta
        Variant and contrast it was computed for.
    mu1
        Smallest eigenvalue of the symmetrized matrix.
    symmetry_defect
        Largest entry of ``entries - entries.T``.
    """

    entries: np.ndarray
    m: int
    tag: LimitTag
    delta: float | None
    mu1: float
    symmetry_defect: float

    @classmethod
    def from_tensor(
        cls, tensor: np.ndarray, tag: LimitTag, delta: float | None
    ) -> "HomogenizedTensor":
        matrix = tensor_to_matrix(tensor)
        matrix.setflags(write=False)
        mu1 = float(np.linalg.eigvalsh(0.5 * (matrix + matrix.T))[0])
        if mu1 <= 0.0:
            raise ValueError(f"Homogenized tensor is not elliptic - tag:{tag.value} mu1:{mu1}")
        return cls(
            entries=matrix,
            m=tensor.shape[-1],
            tag=tag,
            delta=delta,
            mu1=mu1,
            symmetry_defect=float(np.abs(matrix - matrix.T).max()),
        )

    def tensor(self) -> np.ndarray:
        """Entries as ``(d, d, m, m)`` indexed ``[i, j, alpha, beta]``."""
        return np.swapaxes(self.entries.reshape(DIM, self.m, DIM, self.m), 1, 2)

    def quadratic_form(self, xi: np.ndarray) -> np.ndarray:
        xi = np.atleast_2d(xi)
        return np.einsum("pa,ab,pb->p", xi, self.entries, xi)

    def as_coefficient(self) -> CoefficientField:
        return CoefficientField.constant(self.tensor(), name=f"hat-{self.tag.value}")

    def row_major(self) -> list[float]:
        return [float(v) for v in self.entries.ravel()]


@dataclass(frozen=True, eq=False)
class TensorSweep:
    """
    Homogenized tensors over a contrast grid with continuity diagnostics.

    ``zero_rate`` fits ``|A_delta - A_0|`` against ``delta`` for ``delta < 1``;
    ``infinity_rate`` fits ``|A_delta - A_inf|`` against ``1 / delta`` for
    ``delta > 1``. Either is ``None`` with fewer than three usable points.
    """

    deltas: tuple[float, ...]
    tensors: tuple[HomogenizedTensor, ...]
    min_eigenvalues: tuple[float, ...]
    ellipticity_floors: tuple[float, ...]
    zero_limit: HomogenizedTensor
    infinity_limit: HomogenizedTensor
    zero_rate: rates.RateReport | None
    infinity_rate: rates.RateReport | None
    monotonicity_violation: float


def solve_cell(
    A: CoefficientField,
    shape: InclusionShape,
    n: int,
    delta: float,
    *,
    backend: str | None = None,
    tol: float | None = None,
) -> CellCorrectors:
    """
    Solve the contrast cell problems for every ``(i, alpha)``.

    Parameters
    ----------
    A
        Periodic coefficient field.
    shape
        Inclusion geometry.
    n
        Cell mesh subdivisions.
    delta
        Contrast in ``(0, inf)``.
    backend, tol
        Solver options; environment defaults otherwise.
    """
    mesh = build_cell_mesh(shape, n)
    weight = ContrastWeight(delta)
    system = assemble(mesh, A, weight, constraints=Constraints.periodic(mesh, A.m))
    solver = Solver(system, backend=backend, tol=tol)
    lifts = _lifts(mesh, A.m)
    reduced = solver.solve_reduced(np.column_stack([system.rhs_for(lift=lift) for lift in lifts]))
    chi = [system.expand(reduced[:, k]) for k in range(len(lifts))]
    tag = LimitTag.UNIT if delta == 1.0 else LimitTag.FINITE
    LOG.debug("Cell correctors solved - delta:%s n:%s m:%s", delta, n, A.m)
    return CellCorrectors(mesh, A, tag, float(delta), _grouped(chi, A.m))


def solve_cell_limit_zero(
    A: CoefficientField,
    shape: InclusionShape,
    n: int,
    *,
    backend: str | None = None,
    tol: float | None = None,
) -> CellCorrectors:
    """
    Soft-limit correctors: Neumann problem on the matrix, harmonic inside.

    The matrix problem keeps only vertices touched by matrix elements; its
    interface trace then serves as Dirichlet data for the inclusion problem
    ``L(chi + y_i e^alpha) = 0`` so the result is defined on the whole cell.
    """
    mesh = build_cell_mesh(shape, n)
    m = A.m
    region = mesh.element_region
    lifts = _lifts(mesh, m)

    outer = assemble(
        mesh,
        A,
        element_weights=(~region).astype(float),
        constraints=Constraints.periodic(mesh, m, active=mesh.matrix_vertices, mean_zero=False),
    )
    outer_solver = Solver(outer, backend=backend, tol=tol)
    reduced = outer_solver.solve_reduced(
        np.column_stack([outer.rhs_for(lift=lift) for lift in lifts])
    )
    exterior = [outer.expand(reduced[:, k]) for k in range(len(lifts))]

    interior_vertices = mesh.inclusion_vertices & ~mesh.interface_vertices
    inner = assemble(
        mesh,
        A,
        element_weights=region.astype(float),
        constraints=Constraints.dirichlet(mesh, m, ~interior_vertices),
    )
    chi: list[FemFunction] = []
    if inner.constraints.n_reduced:
        inner_solver = Solver(inner, backend=backend, tol=tol)
        rhs = np.column_stack(
            [inner.rhs_for(lift=u.values + lift) for u, lift in zip(exterior, lifts)]
        )
        inside = inner_solver.solve_reduced(rhs)
        for k, u in enumerate(exterior):
            chi.append((u + inner.expand(inside[:, k])).centered())
    else:
        chi = [u.centered() for u in exterior]
    LOG.debug(
        "Soft-limit correctors solved - n:%s interior_vertices:%s",
        n,
        int(interior_vertices.sum()),
    )
    return CellCorrectors(mesh, A, LimitTag.ZERO, None, _grouped(chi, m))


def solve_cell_limit_infinity(
    A: CoefficientField,
    shape: InclusionShape,
    n: int,
    *,
    backend: str | None = None,
    tol: float | None = None,
    compatibility_tol: float = COMPATIBILITY_TOLERANCE,
) -> CellCorrectors:
    """
    Stiff-limit correctors and the second-order inclusion correctors ``w``.

    Raises
    ------
    CompatibilityError
        If the exterior conormal flux of ``chi + y_j e^beta`` does not
        integrate to zero over the interface within ``compatibility_tol``.
    """
    mesh = build_cell_mesh(shape, n)
    m = A.m
    region = mesh.element_region
    closure = mesh.inclusion_vertices
    lifts = _lifts(mesh, m)

    outer = assemble(
        mesh,
        A,
        element_weights=(~region).astype(float),
        constraints=Constraints.rigid_inclusion(mesh, m),
    )
    solver = Solver(outer, backend=backend, tol=tol)
    outside = (~closure)[:, None]
    reduced = solver.solve_reduced(
        np.column_stack([outer.rhs_for(lift=lift * outside) for lift in lifts])
    )
    chi = [
        FemFunction(mesh, outer.expand(reduced[:, k]).values - lift * closure[:, None]).centered()
        for k, lift in enumerate(lifts)
    ]

    inner = assemble(
        mesh,
        A,
        element_weights=region.astype(float),
        constraints=Constraints.periodic(mesh, m, active=closure, mean_zero=False),
    )
    loads, worst = interface_loads(
        mesh,
        outer.stiffness,
        [u.values + lift for u, lift in zip(chi, lifts)],
        compatibility_tol=compatibility_tol,
    )
    inner_solver = Solver(inner, backend=backend, tol=tol)
    inside = inner_solver.solve_reduced(np.column_stack([inner.rhs_for(load=b) for b in loads]))
    w = []
    for k in range(len(lifts)):
        values = inner.expand(inside[:, k]).values.copy()
        raw = FemFunction(mesh, values)
        values[closure] -= raw.mean(element_mask=region)
        w.append(FemFunction(mesh, values))
    LOG.debug("Stiff-limit correctors solved - n:%s compatibility:%.2e", n, worst)
    return CellCorrectors(
        mesh, A, LimitTag.INFINITY, None, _grouped(chi, m), _grouped(w, m), compatibility=worst
    )


def interface_loads(
    mesh: CellMesh,
    stiffness: sparse.csr_matrix,
    fields: Sequence[np.ndarray],
    *,
    compatibility_tol: float = COMPATIBILITY_TOLERANCE,
) -> tuple[list[np.ndarray], float]:
    """
    Exterior conormal flux of each field as an interface load, and the compatibility certificate.

    The flux of ``u`` is the weak functional ``-(K_out u)`` restricted to the
    interface vertices, ``K_out`` being the matrix-side stiffness. Pairing it
    with the constant vectors ``e^alpha`` integrates the conormal derivative
    over the interface; the certificate is the largest such integral.

    Raises
    ------
    CompatibilityError
        If a net flux exceeds ``compatibility_tol``, so the interior Neumann
        problem has no solution.
    """
    m = stiffness.shape[0] // mesh.nv
    loads = []
    worst = 0.0
    for values in fields:
        flux = -(stiffness @ np.asarray(values, dtype=float).ravel()).reshape(mesh.nv, m)
        flux[~mesh.interface_vertices] = 0.0
        worst = max(worst, float(np.abs(flux.sum(axis=0)).max()))
        loads.append(flux.ravel())
    if worst > compatibility_tol:
        raise CompatibilityError(worst)
    return loads, worst


def homogenized_tensor(
    cc: CellCorrectors, A: CoefficientField | None = None, w: ContrastWeight | None = None
) -> HomogenizedTensor:
    """
    Integrate ``Lambda (a_ij + a_ik d_k chi_j)`` over the cell.

    The soft limit integrates over the matrix only; the stiff limit adds the
    inclusion term ``int a_ik d_k w_j``. ``w`` overrides the contrast implied by
    the corrector tag.
    """
    A = A or cc.coefficient
    mesh = cc.mesh
    coefficient = element_coefficients(mesh, A)
    flux = coefficient + np.einsum("eikag,ejbgk->eijab", coefficient, cc.gradient_tensor("chi"))
    weights = w.element_weights(mesh) if w is not None else cc.element_weights()
    tensor = np.einsum("e,eijab->ijab", mesh.areas * weights, flux)
    if cc.tag is LimitTag.INFINITY and w is None:
        inclusion = mesh.areas * mesh.element_region
        tensor = tensor + np.einsum(
            "e,eikag,ejbgk->ijab", inclusion, coefficient, cc.gradient_tensor("w")
        )
    delta = w.delta if w is not None else cc.delta
    return HomogenizedTensor.from_tensor(tensor, cc.tag, delta)


def tensor_sweep(
    deltas: Sequence[float],
    *,
    A: CoefficientField,
    shape: InclusionShape,
    n: int,
    backend: str | None = None,
    tol: float | None = None,
    seed: int = 0,
) -> TensorSweep:
    """
    Homogenized tensors over ``deltas`` with limit distances and monotonicity.

    ``monotonicity_violation`` is the largest ``xi . A_lo xi - xi . A_hi xi``
    over consecutive contrasts and ``MONOTONICITY_SAMPLES`` random ``xi``;
    a nonpositive value means the quadratic form is nondecreasing in
    ``delta``.
    """
    grid = tuple(sorted(float(d) for d in deltas))
    tensors = tuple(
        homogenized_tensor(solve_cell(A, shape, n, d, backend=backend, tol=tol)) for d in grid
    )
    zero = homogenized_tensor(solve_cell_limit_zero(A, shape, n, backend=backend, tol=tol))
    infinity = homogenized_tensor(solve_cell_limit_infinity(A, shape, n, backend=backend, tol=tol))

    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((MONOTONICITY_SAMPLES, DIM * A.m))
    violation = -math.inf
    for lo, hi in zip(tensors, tensors[1:]):
        violation = max(violation, float(np.max(lo.quadratic_form(xi) - hi.quadratic_form(xi))))

    soft = [(d, _distance(t, zero)) for d, t in zip(grid, tensors) if d < 1.0]
    stiff = [(1.0 / d, _distance(t, infinity)) for d, t in zip(grid, tensors) if d > 1.0]
    sweep = TensorSweep(
        deltas=grid,
        tensors=tensors,
        min_eigenvalues=tuple(t.mu1 for t in tensors),
        ellipticity_floors=tuple(ellipticity_floor(A, d) for d in grid),
        zero_limit=zero,
        infinity_limit=infinity,
        zero_rate=_maybe_rate(soft),
        infinity_rate=_maybe_rate(stiff),
        monotonicity_violation=0.0 if violation == -math.inf else violation,
    )
    LOG.info(
        "Tensor sweep complete - points:%s min_eigenvalue:%.6g monotonicity_violation:%.2e",
        len(grid),
        min(sweep.min_eigenvalues, default=float("nan")),
        sweep.monotonicity_violation,
    )
    return sweep


def corrector_distance(a: CellCorrectors, b: CellCorrectors) -> float:
    """Full H1 distance summed over all corrector pairs."""
    if a.mesh is not b.mesh:
        raise ValueError("Correctors live on different meshes")
    total = 0.0
    for row_a, row_b in zip(a.chi, b.chi):
        for u, v in zip(row_a, row_b):
            total += norms(u - v).full ** 2
    return math.sqrt(total)


def second_order_defect(cc_delta: CellCorrectors, cc_infinity: CellCorrectors) -> float:
    """``|| grad(chi_delta - chi_inf - w / (delta - 1)) ||`` over the inclusion."""
    if cc_infinity.w is None or cc_delta.delta is None or cc_delta.delta <= 1.0:
        raise ValueError("Second-order defect needs stiff-limit correctors and delta > 1")
    mesh = cc_delta.mesh
    scale = 1.0 / (cc_delta.delta - 1.0)
    gradients = (
        cc_delta.gradient_tensor("chi")
        - cc_infinity.gradient_tensor("chi")
        - scale * cc_infinity.gradient_tensor("w")
    )
    return p0_norm(mesh, gradients, mesh.element_region)


def ellipticity_floor(A: CoefficientField, delta: float) -> float:
    """Lower bound ``min(delta, 1) * mu`` on the homogenized quadratic form."""
    return min(delta, 1.0) * A.mu


def hashin_shtrikman_bounds(
    matrix: float, inclusion: float, fraction: float, d: int = DIM
) -> tuple[float, float]:
    """
    Hashin-Shtrikman bounds for an isotropic two-phase conductor.

    Parameters
    ----------
    matrix
        Conductivity of the matrix phase.
    inclusion
        Conductivity of the inclusion phase; ``math.inf`` and ``0`` allowed.
    fraction
        Volume fraction of the inclusion phase in ``(0, 1)``.
    d
        Space dimension.

    Returns
    -------
    tuple
        ``(lower, upper)``; ``upper`` is infinite for a perfectly conducting phase.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"Volume fraction must lie in (0, 1) - fraction:{fraction}")
    if matrix <= 0.0 or inclusion < 0.0:
        raise ValueError(f"Conductivities must be positive - matrix:{matrix} inclusion:{inclusion}")
    if inclusion == matrix:
        return matrix, matrix
    if inclusion < matrix:
        low, low_fraction, high, high_fraction = inclusion, fraction, matrix, 1.0 - fraction
    else:
        low, low_fraction, high, high_fraction = matrix, 1.0 - fraction, inclusion, fraction

    if low == 0.0:
        lower = 0.0
    elif math.isinf(high):
        lower = low + d * low * high_fraction / low_fraction
    else:
        lower = low + high_fraction / (1.0 / (high - low) + low_fraction / (d * low))

    if math.isinf(high):
        upper = math.inf
    else:
        upper = high + low_fraction / (1.0 / (low - high) + high_fraction / (d * high))
    return lower, upper


def inclusion_fraction(mesh: CellMesh) -> float:
    """Area fraction of the marked inclusion elements."""
    return float(mesh.areas[mesh.element_region].sum() / mesh.areas.sum())


def _lifts(mesh: CellMesh, m: int) -> list[np.ndarray]:
    return [linear_lift(mesh, m, i, alpha) for i in range(DIM) for alpha in range(m)]


def _grouped(fields: Sequence[FemFunction], m: int) -> tuple[tuple[FemFunction, ...], ...]:
    return tuple(tuple(fields[i * m : (i + 1) * m]) for i in range(DIM))


def _distance(a: HomogenizedTensor, b: HomogenizedTensor) -> float:
    return float(np.linalg.norm(a.entries - b.entries))


def _maybe_rate(series: list[tuple[float, float]]) -> rates.RateReport | None:
    usable = [(p, e) for p, e in series if e > 0.0]
    if len(usable) < rates.MIN_POINTS:
        return None
    return rates.fit_rate(usable)
