import functools
import math
import pathlib
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from os import PathLike

import numpy as np
from lfp_logging import logs
from scipy import sparse
from scipy.sparse import linalg as sparse_linalg

from contrast_homog import _config
from contrast_homog.mesh import CellMesh, GridMesh, cell_coordinates

"""
P1 finite elements for contrast-weighted elliptic systems.

The bilinear form is ``sum_e Lambda_e * int_e a_ij^{ab}(x) d_j u^b d_i v^a``
with piecewise linear, vector-valued fields. Degrees of freedom are
interleaved by vertex: component ``alpha`` of vertex ``v`` is row
``v * m + alpha``. Coefficients are sampled at the three interior points of
the degree-two triangle rule and averaged per element, which is exact for the
constant gradients of P1 functions.

Constraints are expressed as an affine prolongation ``u = P z + u0``: the
reduced matrix is ``P^T K P`` and the reduced load is ``P^T (b - K u0)``. One
representation covers Dirichlet data, periodic identification, restriction to
a subset of vertices, and rigid aggregation of inclusion vertices. Pure
Neumann systems pin one reduced unknown per component and recover the
mean-zero representative afterwards.

Solves default to a sparse LU factorization refined iteratively to the
requested tolerance; Jacobi-preconditioned CG is kept as the alternative
backend and as the fallback when factorization fails.
"""

LOG = logs.logger(__name__)

DIM = 2

# barycentric coordinates of the three quadrature points; equal weights 1/3
QUADRATURE_BARYCENTRIC = np.array(
    [
        [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
        [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
        [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
    ]
)
QUADRATURE_WEIGHTS = np.full(3, 1.0 / 3.0)

_REFINEMENT_STEPS = 3

Source = Callable[[np.ndarray], np.ndarray] | np.ndarray | None


class SolverError(RuntimeError):
    """Raised when a linear solve misses its tolerance; carries the final relative residual."""

    def __init__(self, message: str, residual: float) -> None:
        super().__init__(f"{message} - residual:{residual:.3e}")
        self.residual = residual


@dataclass(frozen=True)
class CoefficientField:
    """
    Periodic coefficient tensor ``a_ij^{ab}(y)``.

    Attributes
    ----------
    m
        Number of solution components.
    evaluate
        Map from points ``(k, 2)`` to tensors ``(k, 2, 2, m, m)`` indexed
        ``[point, i, j, alpha, beta]``.
    mu
        Ellipticity constant: ``mu |xi|^2 <= a xi xi <= |xi|^2 / mu``.
    holder
        Hoelder exponent and seminorm bound ``(lambda, tau)``.
    is_symmetric
        Whether ``a_ij^{ab} = a_ji^{ba}`` holds.
    name
        Label used in logs and reports.
    """

    m: int
    evaluate: Callable[[np.ndarray], np.ndarray]
    mu: float
    holder: tuple[float, float] = (0.5, 0.0)
    is_symmetric: bool = True
    name: str = "custom"

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError(f"Coefficient needs at least one component - m:{self.m}")
        if not 0.0 < self.mu <= 1.0:
            raise ValueError(f"Ellipticity constant must lie in (0, 1] - mu:{self.mu}")

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, DIM)
        values = np.asarray(self.evaluate(points), dtype=float)
        expected = (len(points), DIM, DIM, self.m, self.m)
        if values.shape != expected:
            raise ValueError(
                f"Coefficient returned wrong shape - name:{self.name} "
                f"shape:{values.shape} expected:{expected}"
            )
        return values

    @classmethod
    def identity(cls, m: int = 1) -> "CoefficientField":
        return cls.constant(np.einsum("ij,ab->ijab", np.eye(DIM), np.eye(m)), name="identity")

    @classmethod
    def constant(cls, tensor: np.ndarray, *, name: str = "constant") -> "CoefficientField":
        """Constant field from a ``(2, 2, m, m)`` tensor or a ``(2m, 2m)`` matrix."""
        tensor = np.asarray(tensor, dtype=float)
        if tensor.ndim == 2:
            m = tensor.shape[0] // DIM
            tensor = np.swapaxes(tensor.reshape(DIM, m, DIM, m), 1, 2)
        m = tensor.shape[-1]
        matrix = tensor_to_matrix(tensor)
        symmetric = bool(np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-12 * np.abs(matrix).max()))
        eigenvalues = np.linalg.eigvalsh(0.5 * (matrix + matrix.T))
        if eigenvalues[0] <= 0.0:
            raise ValueError(
                f"Constant coefficient is not elliptic - min_eigenvalue:{eigenvalues[0]}"
            )

        mu = min(1.0, float(eigenvalues[0]), 1.0 / float(eigenvalues[-1]))
        return cls(
            m=m,
            evaluate=functools.partial(_constant_values, tensor=tensor),
            mu=mu,
            holder=(0.5, 0.0),
            is_symmetric=symmetric,
            name=name,
        )

    @classmethod
    def scalar(
        cls,
        function: Callable[[np.ndarray], np.ndarray],
        *,
        mu: float,
        holder: tuple[float, float] = (0.5, 0.0),
        m: int = 1,
        name: str = "scalar",
    ) -> "CoefficientField":
        """Isotropic field ``a(y) delta_ij delta_ab`` from a scalar function of ``y``."""
        return cls(
            m=m,
            evaluate=functools.partial(_scalar_values, function=function, m=m),
            mu=mu,
            holder=holder,
            name=name,
        )

    @classmethod
    def oscillating(cls, amplitude: float = 0.5, m: int = 1) -> "CoefficientField":
        """``a(y) = 1 + amplitude * sin(2 pi y1) sin(2 pi y2)``, isotropic."""
        if not 0.0 <= amplitude < 1.0:
            raise ValueError(f"Oscillation amplitude must lie in [0, 1) - amplitude:{amplitude}")
        return cls.scalar(
            functools.partial(_sine_product, amplitude=amplitude),
            mu=min(1.0 - amplitude, 1.0 / (1.0 + amplitude)),
            # Lipschitz constant of the sine product on the torus
            holder=(0.5, 2.0 * math.pi * amplitude * math.sqrt(2.0)),
            m=m,
            name="oscillating",
        )

    @classmethod
    def diagonal_block(cls, blocks: Sequence["CoefficientField"]) -> "CoefficientField":
        """System with ``a_ij^{ab} = delta_ab * blocks[a]_ij`` for scalar ``blocks``."""
        if not blocks or any(block.m != 1 for block in blocks):
            raise ValueError(f"Diagonal blocks must be scalar fields - count:{len(blocks)}")
        return cls(
            m=len(blocks),
            evaluate=functools.partial(_block_values, blocks=tuple(blocks)),
            mu=min(block.mu for block in blocks),
            holder=(
                min(block.holder[0] for block in blocks),
                max(block.holder[1] for block in blocks),
            ),
            is_symmetric=all(block.is_symmetric for block in blocks),
            name="+".join(block.name for block in blocks),
        )

    def check(self, points: np.ndarray, *, tol: float = 1e-12) -> None:
        """
        Verify symmetry and Legendre ellipticity at ``points``.

        Raises
        ------
        ValueError
            If a sampled tensor violates the declared symmetry or the
            ``[mu, 1/mu]`` eigenvalue window.
        """
        matrices = tensor_to_matrix(self(points))
        if self.is_symmetric:
            defect = np.abs(matrices - np.swapaxes(matrices, -1, -2)).max()
            if defect > tol:
                raise ValueError(
                    f"Coefficient is not symmetric - name:{self.name} defect:{defect:.3e}"
                )

        eigenvalues = np.linalg.eigvalsh(0.5 * (matrices + np.swapaxes(matrices, -1, -2)))
        low = float(eigenvalues.min())
        high = float(eigenvalues.max())
        if low < self.mu - tol or high > 1.0 / self.mu + tol:
            raise ValueError(
                f"Coefficient violates ellipticity - name:{self.name} mu:{self.mu} "
                f"min:{low:.6g} max:{high:.6g}"
            )


@dataclass(frozen=True)
class ContrastWeight:
    """Piecewise constant contrast: ``delta`` on inclusion elements, 1 on matrix elements."""

    delta: float

    def __post_init__(self) -> None:
        if not (self.delta > 0.0 and math.isfinite(self.delta)):
            raise ValueError(f"Contrast must be positive and finite - delta:{self.delta}")

    def element_weights(self, mesh: GridMesh) -> np.ndarray:
        return np.where(mesh.element_region, self.delta, 1.0)


@dataclass(frozen=True, eq=False)
class Constraints:
    """
    Affine constraint ``u = P z + offset`` with pinned reduced unknowns.

    Attributes
    ----------
    prolongation
        Sparse ``(nv * m, n_reduced)`` map from reduced to vertex DOFs.
    offset
        Vertex-level values of the constrained part, shape ``(nv * m,)``.
    pinned
        Reduced indices held at zero during the solve.
    mean_zero
        Subtract the mean of each component after the solve.
    kind
        Label used in logs.
    """

    prolongation: sparse.csr_matrix
    offset: np.ndarray
    pinned: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    mean_zero: bool = False
    kind: str = "free"

    @property
    def n_reduced(self) -> int:
        return self.prolongation.shape[1]

    @classmethod
    def none(cls, mesh: GridMesh, m: int) -> "Constraints":
        size = mesh.nv * m
        return cls(sparse.identity(size, format="csr"), np.zeros(size))

    @classmethod
    def dirichlet(
        cls,
        mesh: GridMesh,
        m: int,
        fixed: np.ndarray,
        values: Callable[[np.ndarray], np.ndarray] | np.ndarray | None = None,
    ) -> "Constraints":
        """
        Prescribe nodal values on the ``fixed`` vertex mask.

        ``values`` is a function of points, an ``(nv, m)`` array, or ``None``
        for homogeneous data.
        """
        fixed = np.asarray(fixed, dtype=bool)
        if fixed.shape != (mesh.nv,):
            raise ValueError(
                f"Dirichlet mask does not match mesh - shape:{fixed.shape} nv:{mesh.nv}"
            )

        if values is None:
            nodal = np.zeros((mesh.nv, m))
        elif callable(values):
            nodal = np.asarray(values(mesh.vertices), dtype=float).reshape(mesh.nv, -1)
        else:
            nodal = np.asarray(values, dtype=float).reshape(mesh.nv, -1)
        if nodal.shape != (mesh.nv, m):
            raise ValueError(f"Dirichlet data has wrong shape - shape:{nodal.shape} m:{m}")
        free = np.flatnonzero(~fixed)
        prolongation = _vertex_prolongation(free, np.arange(len(free)), mesh.nv, len(free), m)
        offset = np.where(fixed[:, None], nodal, 0.0).ravel()
        return cls(prolongation, offset, kind="dirichlet")

    @classmethod
    def periodic(
        cls,
        mesh: GridMesh,
        m: int,
        *,
        active: np.ndarray | None = None,
        mean_zero: bool = True,
        pin: bool = True,
    ) -> "Constraints":
        """
        Identify periodic copies and optionally restrict to ``active`` vertices.

        Vertices whose periodic class contains no active vertex are held at
        zero. With ``pin`` the first active class is pinned per component.
        """
        if not isinstance(mesh, CellMesh) or mesh.periodic_map is None:
            raise ValueError("Periodic constraints need a cell mesh with a periodic map")
        dof = mesh.dof_index
        n_dof = mesh.free_dof_count
        keep = np.ones(n_dof, dtype=bool)
        if active is not None:
            active = np.asarray(active, dtype=bool)
            keep = np.zeros(n_dof, dtype=bool)
            keep[dof[active]] = True
        renumber = np.full(n_dof, -1)
        renumber[keep] = np.arange(int(keep.sum()))
        column = renumber[dof]
        rows = np.flatnonzero(column >= 0)
        prolongation = _vertex_prolongation(rows, column[rows], mesh.nv, int(keep.sum()), m)
        pinned = np.arange(m) if pin and keep.any() else np.zeros(0, dtype=int)
        return cls(
            prolongation,
            np.zeros(mesh.nv * m),
            pinned=pinned,
            mean_zero=mean_zero,
            kind="periodic",
        )

    @classmethod
    def rigid_inclusion(cls, mesh: CellMesh, m: int) -> "Constraints":
        """
        Periodic constraints with every closed-inclusion vertex tied to one
        unknown per component (the last ``m`` reduced unknowns).
        """
        if not isinstance(mesh, CellMesh) or mesh.periodic_map is None:
            raise ValueError("Rigid constraints need a cell mesh with a periodic map")
        closure = mesh.inclusion_vertices
        if not closure.any():
            raise ValueError("Rigid constraints need a non-empty inclusion")
        dof = mesh.dof_index
        n_dof = mesh.free_dof_count
        outside = np.zeros(n_dof, dtype=bool)
        outside[dof[~closure]] = True
        renumber = np.full(n_dof, -1)
        renumber[outside] = np.arange(int(outside.sum()))
        n_free = int(outside.sum())
        column = np.where(closure, n_free, renumber[dof])
        prolongation = _vertex_prolongation(np.arange(mesh.nv), column, mesh.nv, n_free + 1, m)
        return cls(
            prolongation,
            np.zeros(mesh.nv * m),
            pinned=np.arange(m),
            mean_zero=False,
            kind="rigid",
        )


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """
    Assembled system with its constraint elimination.

    Attributes
    ----------
    mesh, m
        Mesh and component count.
    stiffness
        Vertex-level stiffness matrix ``K`` (CSR, symmetric for symmetric coefficients).
    load
        Vertex-level load vector.
    constraints
        Affine constraint description.
    matrix
        Reduced matrix ``P^T K P``.
    """

    mesh: GridMesh
    m: int
    stiffness: sparse.csr_matrix
    load: np.ndarray
    constraints: Constraints
    matrix: sparse.csr_matrix

    @property
    def rhs(self) -> np.ndarray:
        return self.rhs_for()

    def rhs_for(self, lift: np.ndarray | None = None, load: np.ndarray | None = None) -> np.ndarray:
        """
        Reduced right-hand side ``P^T (b - K (offset + lift))``.

        ``lift`` is a vertex field added to the unknown inside the operator, as
        in cell problems posed for ``chi + y_i e^alpha``.
        """
        b = self.load if load is None else np.asarray(load, dtype=float).ravel()
        shift = self.constraints.offset
        if lift is not None:
            shift = shift + np.asarray(lift, dtype=float).ravel()
        return self.constraints.prolongation.T @ (b - self.stiffness @ shift)

    def expand(self, reduced: np.ndarray) -> "FemFunction":
        values = self.constraints.prolongation @ reduced + self.constraints.offset
        u = FemFunction(self.mesh, values.reshape(self.mesh.nv, self.m))
        return u.centered() if self.constraints.mean_zero else u

    def residual(
        self, u: "FemFunction", lift: np.ndarray | None = None, load: np.ndarray | None = None
    ) -> np.ndarray:
        """Reduced residual ``P^T (b - K (u + lift))`` at the unpinned unknowns."""
        b = self.load if load is None else np.asarray(load, dtype=float).ravel()
        total = u.values.ravel()
        if lift is not None:
            total = total + np.asarray(lift, dtype=float).ravel()
        r = self.constraints.prolongation.T @ (b - self.stiffness @ total)
        return np.delete(r, self.constraints.pinned)


@dataclass(frozen=True, eq=False)
class FemFunction:
    """
    Vector-valued P1 field stored as nodal values of shape ``(nv, m)``.

    For periodic meshes the values on periodic copies coincide; :meth:`dofs`
    returns the ``m * free_dof_count`` independent coefficients.
    """

    mesh: GridMesh
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2 or values.shape[0] != self.mesh.nv:
            raise ValueError(
                f"Nodal values do not match mesh - shape:{values.shape} nv:{self.mesh.nv}"
            )

        if not np.all(np.isfinite(values)):
            raise ValueError("Nodal values contain NaN or infinity")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def dofs(self) -> np.ndarray:
        if isinstance(self.mesh, CellMesh) and self.mesh.periodic_map is not None:
            masters = np.unique(self.mesh.periodic_map)
            return self.values[masters].ravel()
        return self.values.ravel()

    def gradients(self) -> np.ndarray:
        """Elementwise constant gradients, shape ``(ne, m, 2)``."""
        nodal = self.values[self.mesh.elements]
        return np.einsum("ekd,eka->ead", self.mesh.gradients, nodal)

    def at(self, points: np.ndarray) -> np.ndarray:
        return self.mesh.interpolate(self.values, points)

    def at_quadrature(self) -> np.ndarray:
        """Values at the quadrature points, shape ``(ne, 3, m)``."""
        return np.einsum("qk,eka->eqa", QUADRATURE_BARYCENTRIC, self.values[self.mesh.elements])

    def integral(self, element_mask: np.ndarray | None = None) -> np.ndarray:
        weights = self.mesh.areas / 3.0
        if element_mask is not None:
            weights = np.where(element_mask, weights, 0.0)
        return np.einsum("e,eka->a", weights, self.values[self.mesh.elements])

    def mean(self, element_mask: np.ndarray | None = None) -> np.ndarray:
        areas = self.mesh.areas if element_mask is None else self.mesh.areas[element_mask]
        return self.integral(element_mask) / areas.sum()

    def centered(self) -> "FemFunction":
        return FemFunction(self.mesh, self.values - self.mean())

    def component(self, alpha: int) -> "FemFunction":
        return FemFunction(self.mesh, self.values[:, alpha])

    def _check_partner(self, other: "FemFunction") -> None:
        if other.mesh is not self.mesh or other.m != self.m:
            raise ValueError("Fields live on different meshes or have different component counts")

    def __add__(self, other: "FemFunction") -> "FemFunction":
        self._check_partner(other)
        return FemFunction(self.mesh, self.values + other.values)

    def __sub__(self, other: "FemFunction") -> "FemFunction":
        self._check_partner(other)
        return FemFunction(self.mesh, self.values - other.values)

    def __neg__(self) -> "FemFunction":
        return FemFunction(self.mesh, -self.values)

    def __mul__(self, scale: float) -> "FemFunction":
        return FemFunction(self.mesh, float(scale) * self.values)

    __rmul__ = __mul__


@dataclass(frozen=True)
class Norms:
    """L2 norm and H1 seminorm of a P1 field."""

    l2: float
    h1: float

    @property
    def full(self) -> float:
        return math.hypot(self.l2, self.h1)


class Solver:
    """
    Reusable solver for one :class:`LinearSystem`.

    The factorization (or Jacobi preconditioner) is built once; every call
    solves one or more right-hand sides against it.
    """

    def __init__(
        self,
        system: LinearSystem,
        *,
        backend: str | None = None,
        tol: float | None = None,
        max_iter: int | None = None,
    ) -> None:
        self.system = system
        self.backend = backend or _config.SOLVER.get()
        self.tol = _config.TOL.get() if tol is None else tol
        self.max_iter = max_iter or _config.MAX_ITER.get()
        if self.backend not in ("direct", "cg"):
            raise ValueError(f"Unknown solver backend - backend:{self.backend}")
        n = system.matrix.shape[0]
        self._keep = np.setdiff1d(np.arange(n), system.constraints.pinned)
        self._matrix = system.matrix[self._keep][:, self._keep].tocsc()
        self._lu = None
        if self.backend == "direct":
            try:
                self._lu = sparse_linalg.splu(self._matrix)
            except RuntimeError as exc:
                LOG.warning("Factorization failed, falling back to CG - error:%s", exc)
                self.backend = "cg"
        if self.backend == "cg":
            diagonal = self._matrix.diagonal()
            if np.any(diagonal <= 0.0):
                raise SolverError("Matrix has nonpositive diagonal", float("inf"))
            self._preconditioner = sparse_linalg.LinearOperator(
                self._matrix.shape, matvec=lambda x: x / diagonal, dtype=float
            )

    def solve_reduced(self, rhs: np.ndarray) -> np.ndarray:
        """Solve for reduced right-hand side(s) ``(n,)`` or ``(n, k)``; pinned entries are zero."""
        rhs = np.asarray(rhs, dtype=float)
        single = rhs.ndim == 1
        block = rhs.reshape(rhs.shape[0], -1)
        b = block[self._keep]
        x = self._solve_direct(b) if self.backend == "direct" else self._solve_cg(b)
        out = np.zeros_like(block)
        out[self._keep] = x
        return out[:, 0] if single else out

    def __call__(
        self, lift: np.ndarray | None = None, load: np.ndarray | None = None
    ) -> FemFunction:
        return self.system.expand(self.solve_reduced(self.system.rhs_for(lift, load)))

    def condition_estimate(self) -> float:
        """One-norm condition estimate of the reduced matrix (direct backend only)."""
        if self._lu is None:
            raise ValueError("Condition estimate needs the direct backend")
        inverse = sparse_linalg.LinearOperator(
            self._matrix.shape, matvec=self._lu.solve, rmatvec=self._lu.solve, dtype=float
        )
        return float(sparse_linalg.onenormest(self._matrix) * sparse_linalg.onenormest(inverse))

    def _relative_residual(self, b: np.ndarray, x: np.ndarray) -> np.ndarray:
        scale = np.linalg.norm(b, axis=0)
        residual = np.linalg.norm(b - self._matrix @ x, axis=0)
        return np.divide(residual, scale, out=np.zeros_like(residual), where=scale > 0.0)

    def _solve_direct(self, b: np.ndarray) -> np.ndarray:
        x = self._lu.solve(b)
        residual = self._relative_residual(b, x)
        steps = 0
        while residual.max(initial=0.0) > self.tol and steps < _REFINEMENT_STEPS:
            x = x + self._lu.solve(b - self._matrix @ x)
            residual = self._relative_residual(b, x)
            steps += 1
        worst = float(residual.max(initial=0.0))
        if worst > self.tol:
            raise SolverError("Direct solve missed tolerance after refinement", worst)
        LOG.debug("Direct solve - size:%s rhs:%s residual:%.2e", b.shape[0], b.shape[1], worst)
        return x

    def _solve_cg(self, b: np.ndarray) -> np.ndarray:
        x = np.zeros_like(b)
        for k in range(b.shape[1]):
            if not np.any(b[:, k]):
                continue
            x[:, k], info = sparse_linalg.cg(
                self._matrix,
                b[:, k],
                rtol=self.tol,
                atol=0.0,
                maxiter=self.max_iter,
                M=self._preconditioner,
            )
            if info != 0:
                residual = float(self._relative_residual(b[:, [k]], x[:, [k]])[0])
                raise SolverError(f"CG did not converge - iterations:{self.max_iter}", residual)
        worst = float(self._relative_residual(b, x).max(initial=0.0))
        LOG.debug("CG solve - size:%s rhs:%s residual:%.2e", b.shape[0], b.shape[1], worst)
        return x


def quadrature_points(mesh: GridMesh) -> np.ndarray:
    """Physical quadrature points, shape ``(ne, 3, 2)``."""
    return np.einsum("qk,ekd->eqd", QUADRATURE_BARYCENTRIC, mesh.vertices[mesh.elements])


def tensor_to_matrix(tensor: np.ndarray) -> np.ndarray:
    """Reshape ``(..., d, d, m, m)`` tensors to ``(..., dm, dm)`` with index ``i * m + alpha``."""
    tensor = np.asarray(tensor)
    d, m = tensor.shape[-3], tensor.shape[-1]
    return np.swapaxes(tensor, -3, -2).reshape(*tensor.shape[:-4], d * m, d * m)


def element_dofs(mesh: GridMesh, m: int) -> np.ndarray:
    """Global DOF numbers of every element, shape ``(ne, 3m)``."""
    return (mesh.elements[:, :, None] * m + np.arange(m)).reshape(mesh.ne, 3 * m)


def element_coefficients(mesh: GridMesh, A: CoefficientField) -> np.ndarray:
    """Quadrature-averaged coefficient per element, shape ``(ne, 2, 2, m, m)``."""
    values = A(quadrature_points(mesh).reshape(-1, DIM))
    return values.reshape(mesh.ne, 3, DIM, DIM, A.m, A.m).mean(axis=1)


def element_stiffness(mesh: GridMesh, A: CoefficientField, weights: np.ndarray) -> np.ndarray:
    """
    Element matrices ``weight * area * a_ij^{ab} grad_i phi_k grad_j phi_l``.

    Returns
    -------
    numpy.ndarray
        Shape ``(ne, 3m, 3m)``; rows ordered ``(vertex, component)``.
    """
    coefficient = element_coefficients(mesh, A)
    scale = np.asarray(weights, dtype=float) * mesh.areas
    G = mesh.gradients
    blocks = np.einsum("e,eijpq,eki,elj->ekplq", scale, coefficient, G, G)
    return blocks.reshape(mesh.ne, 3 * A.m, 3 * A.m)


def stiffness_matrix(mesh: GridMesh, A: CoefficientField, weights: np.ndarray) -> sparse.csr_matrix:
    """Global stiffness matrix for per-element ``weights`` (zeros allowed)."""
    m = A.m
    blocks = element_stiffness(mesh, A, weights)
    dofs = element_dofs(mesh, m)
    rows = np.broadcast_to(dofs[:, :, None], blocks.shape)
    cols = np.broadcast_to(dofs[:, None, :], blocks.shape)
    size = mesh.nv * m
    return sparse.coo_matrix(
        (blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(size, size)
    ).tocsr()


def mass_matrix(mesh: GridMesh) -> sparse.csr_matrix:
    """Scalar P1 mass matrix with local entries ``area / 12 * (1 + delta_kl)``."""
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    blocks = mesh.areas[:, None, None] * local
    rows = np.broadcast_to(mesh.elements[:, :, None], blocks.shape)
    cols = np.broadcast_to(mesh.elements[:, None, :], blocks.shape)
    return sparse.coo_matrix(
        (blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(mesh.nv, mesh.nv)
    ).tocsr()


def load_vector(
    mesh: GridMesh, m: int, f: Source, source_weights: np.ndarray | None = None
) -> np.ndarray:
    """
    Vertex-level load ``int w_e f . v`` by the three-point rule.

    ``f`` is a function of points returning ``(k, m)`` (or ``(k,)`` for
    ``m = 1``) or an array of quadrature values ``(ne, 3, m)``.
    """
    size = mesh.nv * m
    if f is None:
        return np.zeros(size)
    if callable(f):
        values = np.asarray(f(quadrature_points(mesh).reshape(-1, DIM)), dtype=float)
    else:
        values = np.asarray(f, dtype=float)
    values = values.reshape(mesh.ne, 3, m)
    scale = mesh.areas * QUADRATURE_WEIGHTS[0]
    if source_weights is not None:
        scale = scale * source_weights
    local = np.einsum("e,qk,eqa->eka", scale, QUADRATURE_BARYCENTRIC, values)
    dofs = element_dofs(mesh, m)
    return np.bincount(dofs.ravel(), weights=local.reshape(mesh.ne, -1).ravel(), minlength=size)


def assemble(
    mesh: GridMesh,
    A: CoefficientField,
    w: ContrastWeight | None = None,
    f: Source = None,
    constraints: Constraints | None = None,
    *,
    element_weights: np.ndarray | None = None,
    source_weights: np.ndarray | None = None,
) -> LinearSystem:
    """
    Assemble the contrast-weighted system on ``mesh``.

    Parameters
    ----------
    mesh
        Any grid mesh; inclusion marking selects where ``w`` applies.
    A
        Coefficient field evaluated at quadrature points.
    w
        Contrast weight; ``None`` means unit weight everywhere.
    f
        Source, see :func:`load_vector`.
    constraints
        Constraint description; unconstrained by default.
    element_weights
        Explicit per-element weights replacing ``w``, used for one-sided
        problems where some elements carry weight zero.
    source_weights
        Per-element multipliers of the load.
    """
    m = A.m
    if w is not None and element_weights is not None:
        raise ValueError("Pass either a contrast weight or explicit element weights")
    if element_weights is not None:
        weights = np.asarray(element_weights, dtype=float)
        if weights.shape != (mesh.ne,) or np.any(weights < 0.0):
            raise ValueError(
                f"Element weights must be nonnegative per element - shape:{weights.shape}"
            )

    elif w is not None:
        weights = w.element_weights(mesh)
    else:
        weights = np.ones(mesh.ne)
    constraints = constraints or Constraints.none(mesh, m)
    if constraints.prolongation.shape[0] != mesh.nv * m:
        raise ValueError(
            f"Constraints do not conform to mesh - rows:{constraints.prolongation.shape[0]} "
            f"expected:{mesh.nv * m}"
        )
    stiffness = stiffness_matrix(mesh, A, weights)
    load = load_vector(mesh, m, f, source_weights)
    P = constraints.prolongation
    matrix = (P.T @ stiffness @ P).tocsr()
    LOG.debug(
        "System assembled - kind:%s coefficient:%s unknowns:%s nnz:%s",
        constraints.kind,
        A.name,
        matrix.shape[0],
        matrix.nnz,
    )
    return LinearSystem(mesh, m, stiffness, load, constraints, matrix)


def solve(
    system: LinearSystem,
    tol: float | None = None,
    *,
    backend: str | None = None,
    max_iter: int | None = None,
) -> FemFunction:
    """
    Solve ``system`` to relative residual ``tol``.

    Raises
    ------
    SolverError
        When the backend cannot reach ``tol``; the exception carries the
        final residual.
    """
    return Solver(system, backend=backend, tol=tol, max_iter=max_iter)()


def norms(
    u: FemFunction, region: str = "all", *, element_mask: np.ndarray | None = None
) -> Norms:
    """
    Exact L2 norm and H1 seminorm of a P1 field.

    ``region`` restricts to inclusion or matrix elements; ``element_mask`` is
    intersected with it.
    """
    mesh = u.mesh
    mask = mesh.region_mask(region)
    if element_mask is not None:
        mask &= np.asarray(element_mask, dtype=bool)
    nodal = u.values[mesh.elements][mask]
    areas = mesh.areas[mask]
    # local mass matrix area/12 * (1 + delta_kl)
    l2_sq = np.sum(areas[:, None] / 12.0 * (np.sum(nodal**2, axis=1) + np.sum(nodal, axis=1) ** 2))
    gradients = u.gradients()[mask]
    h1_sq = np.sum(areas * np.sum(gradients**2, axis=(1, 2)))
    return Norms(l2=math.sqrt(max(l2_sq, 0.0)), h1=math.sqrt(max(h1_sq, 0.0)))


def p0_norm(mesh: GridMesh, values: np.ndarray, element_mask: np.ndarray | None = None) -> float:
    """L2 norm of an elementwise constant field of shape ``(ne, ...)``."""
    values = np.asarray(values, dtype=float).reshape(mesh.ne, -1)
    weights = mesh.areas if element_mask is None else np.where(element_mask, mesh.areas, 0.0)
    return math.sqrt(float(np.sum(weights * np.sum(values**2, axis=1))))


def quadrature_norm(
    mesh: GridMesh, values: np.ndarray, element_mask: np.ndarray | None = None
) -> float:
    """L2 norm of a field sampled at quadrature points, shape ``(ne, 3, ...)``."""
    values = np.asarray(values, dtype=float).reshape(mesh.ne, 3, -1)
    weights = mesh.areas * QUADRATURE_WEIGHTS[0]
    if element_mask is not None:
        weights = np.where(element_mask, weights, 0.0)
    return math.sqrt(float(np.sum(weights * np.sum(values**2, axis=(1, 2)))))


def periodic_interpolate(cell_fn: FemFunction, eps: float, target: GridMesh) -> FemFunction:
    """
    Evaluate the periodic cell field ``cell_fn(x / eps)`` at the vertices of ``target``.

    The micro variable is ``y = frac(x / eps + 1/2) - 1/2``, matching the cell
    lattice of :func:`contrast_homog.mesh.build_perforated_mesh`.
    """
    if not isinstance(cell_fn.mesh, CellMesh):
        raise ValueError("Periodic interpolation needs a field on a cell mesh")
    return FemFunction(target, cell_fn.at(cell_coordinates(target.vertices, eps)))


def linear_lift(mesh: GridMesh, m: int, i: int, alpha: int) -> np.ndarray:
    """Nodal values of ``y_i e^alpha``, shape ``(nv, m)``; not periodic."""
    values = np.zeros((mesh.nv, m))
    values[:, alpha] = mesh.vertices[:, i]
    return values


def nodal_average(mesh: GridMesh, element_values: np.ndarray) -> np.ndarray:
    """Area-weighted average of elementwise values ``(ne, ...)`` at each vertex."""
    element_values = np.asarray(element_values, dtype=float)
    tail = element_values.shape[1:]
    flat = element_values.reshape(mesh.ne, -1)
    weights = np.repeat(mesh.areas, 3)
    vertex = mesh.elements.ravel()
    total = np.zeros((mesh.nv, flat.shape[1]))
    np.add.at(total, vertex, weights[:, None] * np.repeat(flat, 3, axis=0))
    mass = np.bincount(vertex, weights=weights, minlength=mesh.nv)
    return (total / mass[:, None]).reshape(mesh.nv, *tail)


def dump_function(u: FemFunction, path: PathLike | str) -> pathlib.Path:
    """Write ``u`` as text: header ``m ndof`` then one DOF value per line."""
    path = pathlib.Path(path)
    dofs = u.dofs()
    body = "\n".join(repr(v) for v in dofs.tolist())
    path.write_text(f"{u.m} {len(dofs) // u.m}\n{body}\n")
    return path


def _vertex_prolongation(
    rows: np.ndarray, columns: np.ndarray, nv: int, n_columns: int, m: int
) -> sparse.csr_matrix:
    rows = np.asarray(rows)
    columns = np.asarray(columns)
    r = (rows[:, None] * m + np.arange(m)).ravel()
    c = (columns[:, None] * m + np.arange(m)).ravel()
    return sparse.csr_matrix((np.ones(len(r)), (r, c)), shape=(nv * m, n_columns * m))


def _constant_values(points: np.ndarray, *, tensor: np.ndarray) -> np.ndarray:
    return np.broadcast_to(tensor, (len(points), *tensor.shape)).copy()


def _scalar_values(points: np.ndarray, *, function: Callable, m: int) -> np.ndarray:
    a = np.asarray(function(points), dtype=float).reshape(-1)
    base = np.einsum("ij,ab->ijab", np.eye(DIM), np.eye(m))
    return a[:, None, None, None, None] * base


def _sine_product(points: np.ndarray, *, amplitude: float) -> np.ndarray:
    return 1.0 + amplitude * np.sin(2.0 * np.pi * points[:, 0]) * np.sin(2.0 * np.pi * points[:, 1])


def _block_values(points: np.ndarray, *, blocks: tuple[CoefficientField, ...]) -> np.ndarray:
    m = len(blocks)
    out = np.zeros((len(points), DIM, DIM, m, m))
    for alpha, block in enumerate(blocks):
        out[:, :, :, alpha, alpha] = block(points)[:, :, :, 0, 0]
    return out
