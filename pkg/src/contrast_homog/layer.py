import functools
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from lfp_logging import logs
from scipy import sparse

from contrast_homog import rates
from contrast_homog.cell import CellCorrectors, solve_cell
from contrast_homog.fem import (
    CoefficientField,
    Constraints,
    FemFunction,
    LinearSystem,
    Solver,
    assemble,
    linear_lift,
    stiffness_matrix,
)
from contrast_homog.mesh import CellMesh, InclusionShape, build_cell_mesh

"""
Weak single-layer potential and Neumann-Poincare operator on the torus.

Densities live on the interface vertices and act on periodic test functions
through the interface mass matrix ``M``. The single layer ``S psi`` is the
mean-zero periodic solution of ``int A grad u . grad v + <psi, v> = 0``.

One-sided conormal traces are Green functionals, never pointwise gradients:

- ``t_+(u) = -(K_out u)|_B`` from the matrix elements,
- ``t_-(u) = (K_in u)|_B`` from the inclusion elements,

so ``t_+(S psi) - t_-(S psi) = M psi`` holds up to solver precision and
``K psi = M^-1 t_+(S psi) - psi / 2``. On the mean-zero densities ``K`` is
self-adjoint for the energy inner product ``<phi, psi>_H = int A grad S phi .
grad S psi``, and its Rayleigh quotient is half the normalized difference of
the exterior and interior energies of ``S psi``, which keeps the spectrum
inside ``(-1/2, 1/2)``.
"""

LOG = logs.logger(__name__)

MAX_INTERFACE_DOFS = 2000
MEAN_TOLERANCE = 1e-10


@dataclass(frozen=True, eq=False)
class InterfaceDensity:
    """
    Density on the interface vertices.

    Attributes
    ----------
    values
        Nodal values, shape ``(n_b, m)``, ordered like ``SingleLayer.interface``.
    zero_mean
        Whether ``<psi, 1> = 0`` was checked on construction.
    """

    values: np.ndarray
    zero_mean: bool = True

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()


@dataclass(frozen=True, eq=False)
class ResolventSweep:
    """Resolvent distances to the limit resolvents over a contrast grid."""

    deltas: tuple[float, ...]
    gaps: tuple[float, ...]
    zero_rate: rates.RateReport | None
    infinity_rate: rates.RateReport | None


class SingleLayer:
    """
    Discrete single-layer map on one cell mesh.

    Parameters
    ----------
    mesh
        Cell mesh with a resolved interface.
    A
        Coefficient of the operator ``-div(A grad .)``.
    backend, tol
        Solver options.
    """

    def __init__(
        self,
        mesh: CellMesh,
        A: CoefficientField,
        *,
        backend: str | None = None,
        tol: float | None = None,
    ) -> None:
        self.mesh = mesh
        self.A = A
        self.m = A.m
        edges = mesh.interface_edges
        if not len(edges):
            raise ValueError("Single layer needs an interface")
        self.interface = np.flatnonzero(mesh.interface_vertices)
        self.interface_mass = _interface_mass(mesh, self.interface, edges)
        self.system: LinearSystem = assemble(
            mesh, A, constraints=Constraints.periodic(mesh, self.m)
        )
        self.solver = Solver(self.system, backend=backend, tol=tol)
        self.outer_stiffness = stiffness_matrix(mesh, A, (~mesh.element_region).astype(float))
        self.inner_stiffness = stiffness_matrix(mesh, A, mesh.element_region.astype(float))
        self.dofs = (self.interface[:, None] * self.m + np.arange(self.m)).ravel()
        self._mass = np.kron(self.interface_mass, np.eye(self.m))
        self._mass_factor = scipy.linalg.cho_factor(self._mass)

    @property
    def n_b(self) -> int:
        return len(self.interface)

    def mass(self) -> np.ndarray:
        """Interface mass matrix on interleaved density DOFs, ``(n_b m, n_b m)``."""
        return self._mass

    def mean(self, flat: np.ndarray) -> np.ndarray:
        """``<psi, e^alpha>`` per component for flat densities ``(n_b m, ...)``."""
        paired = self._mass @ flat
        return paired.reshape(self.n_b, self.m, *flat.shape[1:]).sum(axis=0)

    def density(self, values: np.ndarray, *, zero_mean: bool = True) -> InterfaceDensity:
        """
        Wrap nodal values as a density.

        Raises
        ------
        ValueError
            On a shape mismatch, or when ``zero_mean`` is set and ``<psi, 1>``
            exceeds 1e-10 relative to the size of ``psi``.
        """
        values = np.asarray(values, dtype=float).reshape(self.n_b, -1)
        if values.shape[1] != self.m:
            raise ValueError(
                f"Density has wrong component count - m:{values.shape[1]} expected:{self.m}"
            )

        if zero_mean:
            scale = max(1.0, float(np.abs(values).max(initial=0.0)))
            defect = float(np.abs(self.mean(values.ravel())).max())
            if defect > MEAN_TOLERANCE * scale:
                raise ValueError(f"Density does not have zero mean - defect:{defect:.3e}")
        values = values.copy()
        values.setflags(write=False)
        return InterfaceDensity(values, zero_mean)

    def project(self, values: np.ndarray) -> np.ndarray:
        """Remove the constant part of nodal values ``(n_b, m)`` in the interface pairing."""
        values = np.asarray(values, dtype=float).reshape(self.n_b, self.m)
        weight = self.interface_mass.sum()
        return values - self.mean(values.ravel()) / weight

    def apply(self, flat: np.ndarray) -> np.ndarray:
        """Single layer of flat densities ``(n_b m, k)``; vertex values ``(nv m, k)``."""
        flat = np.asarray(flat, dtype=float).reshape(len(self.dofs), -1)
        load = np.zeros((self.mesh.nv * self.m, flat.shape[1]))
        load[self.dofs] = -(self._mass @ flat)
        rhs = self.system.constraints.prolongation.T @ load
        reduced = self.solver.solve_reduced(rhs)
        values = self.system.constraints.prolongation @ reduced
        return values - _component_means(self.mesh, values, self.m)

    def __call__(self, psi: InterfaceDensity) -> FemFunction:
        values = self.apply(psi.flat)[:, 0]
        return FemFunction(self.mesh, values.reshape(self.mesh.nv, self.m))

    def trace_plus(self, values: np.ndarray) -> np.ndarray:
        """Exterior conormal functional ``-(K_out u)|_B`` of vertex values ``(nv m, k)``."""
        return -(self.outer_stiffness @ values)[self.dofs]

    def trace_minus(self, values: np.ndarray) -> np.ndarray:
        """Interior conormal functional ``(K_in u)|_B`` of vertex values ``(nv m, k)``."""
        return (self.inner_stiffness @ values)[self.dofs]

    def solve_mass(self, functional: np.ndarray) -> np.ndarray:
        """Riesz representative ``M^-1 t`` of an interface functional."""
        return scipy.linalg.cho_solve(self._mass_factor, functional)

    def harmonic_residual(self, u: FemFunction) -> float:
        """
        Largest weak residual of ``L u`` against periodic hats away from the interface,
        relative to ``max|K| max|u|``.
        """
        P = self.system.constraints.prolongation
        residual = P.T @ (self.system.stiffness @ u.values.ravel())
        touched = np.zeros(self.mesh.nv * self.m, dtype=bool)
        touched[self.dofs] = True
        off = (P.T @ touched.astype(float)) == 0.0
        scale = abs(self.system.stiffness).max() * max(float(np.abs(u.values).max()), 1e-300)
        return float(np.abs(residual[off]).max(initial=0.0) / scale)


@dataclass(frozen=True, eq=False)
class WeakLayerOperator:
    """
    Neumann-Poincare operator on mean-zero interface densities.

    Attributes
    ----------
    layer
        Single-layer map and interface data.
    basis
        Orthonormal basis ``Q`` of the mean-zero densities, ``(n_b m, n_z)``.
    potentials
        ``S Q`` at vertex level, ``(nv m, n_z)``.
    gram
        Energy Gram matrix ``(S Q)^T K_A (S Q)``.
    matrix
        ``Q^T K Q``, the operator in basis coordinates.
    self_adjoint_residual
        ``|G K - K^T G| / |G|`` in the spectral norm.
    jump_residual
        ``|t_+(S Q) - t_-(S Q) - M Q| / |M Q|``.
    """

    layer: SingleLayer
    basis: np.ndarray
    potentials: np.ndarray
    gram: np.ndarray
    matrix: np.ndarray
    self_adjoint_residual: float
    jump_residual: float

    @property
    def mesh(self) -> CellMesh:
        return self.layer.mesh

    def single_layer(self, psi: InterfaceDensity) -> FemFunction:
        return self.layer(psi)

    def apply(self, psi: InterfaceDensity) -> np.ndarray:
        """``K psi`` as nodal density values ``(n_b, m)``."""
        coordinates = self.basis.T @ psi.flat
        return (self.basis @ (self.matrix @ coordinates)).reshape(self.layer.n_b, self.layer.m)

    @functools.cached_property
    def spectrum(self) -> tuple[np.ndarray, np.ndarray]:
        """Generalized eigenpairs of ``(sym(G K), G)``; eigenvectors are G-orthonormal."""
        symmetric = 0.5 * (self.gram @ self.matrix + (self.gram @ self.matrix).T)
        return scipy.linalg.eigh(symmetric, self.gram)

    def eigenvalues(self) -> np.ndarray:
        """Sorted real eigenvalues of ``K`` on the mean-zero densities."""
        return np.sort(self.spectrum[0])

    def resolvent_gap(self, delta: float) -> float:
        """
        Energy-norm distance between ``(lambda(delta) - K)^-1`` and the limit resolvent.

        The limit is ``(-1/2 - K)^-1`` for ``delta < 1`` and ``(1/2 - K)^-1``
        for ``delta > 1``. ``K`` is diagonal in its G-orthonormal
        eigenbasis, so the norm is the largest eigenvalue difference.
        """
        lam = lambda_of_delta(delta)
        limit = -0.5 if delta < 1.0 else 0.5
        mu = self.eigenvalues()
        return float(np.max(np.abs(1.0 / (lam - mu) - 1.0 / (limit - mu))))

    def gram_energy_split(self, psi: InterfaceDensity) -> tuple[float, float]:
        """Interior and exterior energies of ``S psi`` in ``A grad . grad`` form."""
        values = self.layer.apply(psi.flat)[:, 0]
        inner = float(values @ (self.layer.inner_stiffness @ values))
        outer = float(values @ (self.layer.outer_stiffness @ values))
        return inner, outer

    def resolve(self, lam: float, phi: np.ndarray) -> np.ndarray:
        """Flat density ``rho`` with ``(lam - K) rho = phi`` for mean-zero flat ``phi``."""
        coordinates = self.basis.T @ phi
        shifted = lam * np.eye(len(self.matrix)) - self.matrix
        return self.basis @ np.linalg.solve(shifted, coordinates)


def lambda_of_delta(delta: float) -> float:
    """
    ``1/2 + 1/(delta - 1)``.

    Raises
    ------
    ValueError
        For ``delta <= 0`` or ``delta == 1``.
    """
    if not delta > 0.0:
        raise ValueError(f"Contrast must be positive - delta:{delta}")
    if delta == 1.0:
        raise ValueError("Unit contrast has no resolvent representation - delta:1.0")
    return 0.5 + 1.0 / (delta - 1.0)


def weak_single_layer(psi: InterfaceDensity, *, layer: SingleLayer) -> FemFunction:
    """Mean-zero periodic ``u`` with ``int A grad u . grad v + <psi, v> = 0``."""
    return layer(psi)


def single_layer(
    A: CoefficientField,
    shape: InclusionShape,
    n: int,
    *,
    backend: str | None = None,
    tol: float | None = None,
) -> SingleLayer:
    return SingleLayer(build_cell_mesh(shape, n), A, backend=backend, tol=tol)


def np_operator(
    A: CoefficientField,
    shape: InclusionShape,
    n: int,
    *,
    backend: str | None = None,
    tol: float | None = None,
) -> WeakLayerOperator:
    """
    Assemble ``K`` columnwise on a basis of mean-zero densities.

    Raises
    ------
    ValueError
        When the interface has more than 2000 DOFs, or the Gram matrix is not
        positive definite.
    """
    layer = single_layer(A, shape, n, backend=backend, tol=tol)
    size = layer.n_b * layer.m
    if size > MAX_INTERFACE_DOFS:
        raise ValueError(
            f"Interface too large for dense assembly - dofs:{size} max:{MAX_INTERFACE_DOFS}"
        )

    constraint = np.stack(
        [layer.mass() @ np.tile(np.eye(layer.m)[alpha], layer.n_b) for alpha in range(layer.m)]
    )
    basis = scipy.linalg.null_space(constraint)
    potentials = layer.apply(basis)
    gram = potentials.T @ (layer.system.stiffness @ potentials)
    gram = 0.5 * (gram + gram.T)
    try:
        scipy.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"Gram matrix is not positive definite - error:{exc}") from exc

    plus = layer.trace_plus(potentials)
    minus = layer.trace_minus(potentials)
    matrix = basis.T @ layer.solve_mass(plus) - 0.5 * np.eye(basis.shape[1])

    jump = plus - minus - layer.mass() @ basis
    jump_residual = float(np.linalg.norm(jump) / np.linalg.norm(layer.mass() @ basis))
    product = gram @ matrix
    self_adjoint = float(np.linalg.norm(product - product.T, 2) / np.linalg.norm(gram, 2))
    operator = WeakLayerOperator(
        layer=layer,
        basis=basis,
        potentials=potentials,
        gram=gram,
        matrix=matrix,
        self_adjoint_residual=self_adjoint,
        jump_residual=jump_residual,
    )
    eigenvalues = operator.eigenvalues()
    LOG.info(
        "Neumann-Poincare operator assembled - n:%s interface_dofs:%s min:%.6f max:%.6f "
        "self_adjoint:%.2e jump:%.2e",
        n,
        size,
        eigenvalues[0],
        eigenvalues[-1],
        self_adjoint,
        jump_residual,
    )
    return operator


def conormal_density(unit: CellCorrectors, i: int, alpha: int, layer: SingleLayer) -> np.ndarray:
    """Flat density ``M^-1 t_+(chi_1 + y_i e^alpha)``, the conormal flux of the unit solution."""
    m = unit.m
    total = unit.chi[i][alpha].values + linear_lift(unit.mesh, m, i, alpha)
    phi = layer.solve_mass(layer.trace_plus(total.ravel()))
    return layer.project(phi.reshape(layer.n_b, m)).ravel()


def corrector_via_potentials(
    delta: float,
    i: int,
    alpha: int,
    *,
    operator: WeakLayerOperator,
    unit: CellCorrectors | None = None,
) -> FemFunction:
    """
    Corrector ``chi_delta = chi_1 + S[(lambda(delta) - K)^-1 phi] - q``.

    Parameters
    ----------
    delta
        Contrast, positive and not 1.
    i, alpha
        Direction and component of the affine field.
    operator
        Assembled operator on the cell mesh of ``unit``.
    unit
        Unit-contrast correctors; solved on the operator's mesh when omitted.
    """
    layer = operator.layer
    lam = lambda_of_delta(delta)
    if unit is None:
        mesh = layer.mesh
        unit = solve_cell(layer.A, mesh.shape, mesh.n, 1.0)
    if unit.mesh is not layer.mesh:
        raise ValueError("Unit correctors and operator live on different meshes")
    phi = conormal_density(unit, i, alpha, layer)
    rho = operator.resolve(lam, phi)
    values = unit.chi[i][alpha].values.ravel() + layer.apply(rho)[:, 0]
    u = FemFunction(layer.mesh, values.reshape(layer.mesh.nv, layer.m))
    return u.centered()


def resolvent_sweep(deltas: Sequence[float], *, operator: WeakLayerOperator) -> ResolventSweep:
    """Resolvent gaps over ``deltas`` with slopes toward both limits."""
    grid = tuple(sorted(float(d) for d in deltas if d != 1.0))
    gaps = tuple(operator.resolvent_gap(d) for d in grid)
    soft = [(d, g) for d, g in zip(grid, gaps) if d < 1.0 and g > 0.0]
    stiff = [(1.0 / d, g) for d, g in zip(grid, gaps) if d > 1.0 and g > 0.0]
    sweep = ResolventSweep(
        deltas=grid,
        gaps=gaps,
        zero_rate=rates.fit_rate(soft) if len(soft) >= rates.MIN_POINTS else None,
        infinity_rate=rates.fit_rate(stiff) if len(stiff) >= rates.MIN_POINTS else None,
    )
    LOG.debug(
        "Resolvent sweep - points:%s zero_slope:%s infinity_slope:%s",
        len(grid),
        sweep.zero_rate and sweep.zero_rate.slope,
        sweep.infinity_rate and sweep.infinity_rate.slope,
    )
    return sweep


def _interface_mass(mesh: CellMesh, interface: np.ndarray, edges: np.ndarray) -> np.ndarray:
    # vertices touching both phases only at a corner carry no edge; they get the mean diagonal
    local = np.full(mesh.nv, -1)
    local[interface] = np.arange(len(interface))
    a = local[edges[:, 0]]
    b = local[edges[:, 1]]
    length = np.linalg.norm(mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]], axis=1)
    rows = np.concatenate([a, b, a, b])
    cols = np.concatenate([a, b, b, a])
    values = np.concatenate([length / 3.0, length / 3.0, length / 6.0, length / 6.0])
    n_b = len(interface)
    mass = sparse.coo_matrix((values, (rows, cols)), shape=(n_b, n_b)).toarray()
    diagonal = np.diag(mass).copy()
    isolated = diagonal == 0.0
    if isolated.any():
        LOG.warning(
            "Interface vertices without interface edges - count:%s shape:%s",
            int(isolated.sum()),
            mesh.shape.kind.value if mesh.shape else None,
        )
        mass[isolated, isolated] = diagonal[~isolated].mean()
    return mass


def _component_means(mesh: CellMesh, values: np.ndarray, m: int) -> np.ndarray:
    """Cell means of every component of vertex-level columns, broadcast back to DOFs."""
    nodal = values.reshape(mesh.nv, m, -1)
    weights = np.bincount(
        mesh.elements.ravel(), weights=np.repeat(mesh.areas / 3.0, 3), minlength=mesh.nv
    )
    means = np.einsum("v,vak->ak", weights, nodal) / mesh.areas.sum()
    return np.broadcast_to(means, nodal.shape).reshape(values.shape)

