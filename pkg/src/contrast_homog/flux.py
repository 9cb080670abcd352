from dataclasses import dataclass

import numpy as np
from lfp_logging import logs
from scipy import sparse
from scipy.sparse import linalg as sparse_linalg

from contrast_homog.cell import CellCorrectors, HomogenizedTensor, LimitTag, homogenized_tensor
from contrast_homog.fem import (
    CoefficientField,
    Constraints,
    ContrastWeight,
    FemFunction,
    Solver,
    assemble,
    load_vector,
    mass_matrix,
    nodal_average,
    p0_norm,
    quadrature_norm,
    quadrature_points,
    stiffness_matrix,
)
from contrast_homog.mesh import CellMesh

"""
Flux correctors on the torus.

The flux defect ``F_ij = hat a_ij - Lambda (a_ij + a_ik d_k chi_j)`` has zero
mean and zero divergence in ``i``. Its skew potential is built from torus
Poisson solves ``Delta h_ij = F_ij`` as ``Psi_kij = d_k h_ij - d_i h_kj``.

On P1 potentials the divergence ``d_k h_kj`` is elementwise constant rather
than constant, which leaves a weak divergence defect of the size of the
discretization error. A least-squares correction of the skew entry
``Psi_12j = -Psi_21j`` (elementwise constant, ``scipy.sparse.linalg.lsqr``)
removes it, so ``int Psi_kij d_k v = -int F_ij v`` holds for every periodic
hat ``v`` up to solver precision while skew-symmetry stays exact.
"""

LOG = logs.logger(__name__)

DIM = 2
DIVERGENCE_TOLERANCE = 1e-8
INTEGRAL_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class FluxData:
    """
    Flux defect and flux corrector at one contrast.

    Attributes
    ----------
    delta
        Contrast.
    F
        Flux defect at quadrature points, ``(ne, 3, d, d, m, m)`` indexed
        ``[e, q, i, j, alpha, beta]``.
    psi
        Elementwise flux corrector ``(ne, d, d, d, m, m)`` indexed
        ``[e, k, i, j, alpha, beta]``.
    potentials
        ``potentials[i][j][beta]`` is the m-component torus potential ``h_ij^{. beta}``.
    F_l2, psi_l2
        L2 norms over the cell.
    F_integral
        Largest absolute entry of ``int_Y F``.
    div_residual
        Largest weak divergence defect over all periodic hats, relative to the
        hat's H1 norm, after correction.
    div_rms, uncorrected_div_rms
        Root-mean-square of the relative defects over the hats (largest over
        the index blocks), after and before the correction.
    skew_residual
        Largest ``|Psi_kij + Psi_ikj|``.
    harmonic_defect
        L2 deviation of ``d_k h_kj`` from its mean.
    """

    delta: float
    mesh: CellMesh
    F: np.ndarray
    psi: np.ndarray
    potentials: tuple[tuple[tuple[FemFunction, ...], ...], ...]
    F_l2: float
    psi_l2: float
    F_integral: float
    div_residual: float
    div_rms: float
    uncorrected_div_rms: float
    skew_residual: float
    harmonic_defect: float

    def psi_function(self, k: int, i: int, j: int, beta: int) -> FemFunction:
        """Nodal average of ``Psi_kij^{. beta}`` as an m-component P1 field."""
        return FemFunction(self.mesh, nodal_average(self.mesh, self.psi[:, k, i, j, :, beta]))

    def as_dict(self) -> dict[str, float]:
        return {
            "delta": self.delta,
            "F_l2": self.F_l2,
            "Psi_l2": self.psi_l2,
            "div_residual": self.div_residual,
            "skew_residual": self.skew_residual,
        }


def flux_defect(
    cc: CellCorrectors, A: CoefficientField, weights: np.ndarray, Ahat: HomogenizedTensor
) -> np.ndarray:
    """``F`` at quadrature points, ``(ne, 3, d, d, m, m)``."""
    mesh = cc.mesh
    m = A.m
    a = A(quadrature_points(mesh).reshape(-1, DIM)).reshape(mesh.ne, 3, DIM, DIM, m, m)
    local = a + np.einsum("eqikag,ejbgk->eqijab", a, cc.gradient_tensor("chi"))
    return Ahat.tensor()[None, None] - weights[:, None, None, None, None, None] * local


def build_flux(
    cc: CellCorrectors,
    A: CoefficientField | None = None,
    w: ContrastWeight | None = None,
    Ahat: HomogenizedTensor | None = None,
    *,
    correct: bool = True,
    div_tol: float = DIVERGENCE_TOLERANCE,
    backend: str | None = None,
    tol: float | None = None,
) -> FluxData:
    """
    Build ``F`` and ``Psi`` for finite-contrast correctors.

    Parameters
    ----------
    cc
        Correctors at a finite contrast.
    A
        Coefficient; defaults to the one ``cc`` was solved for.
    w
        Contrast weight; defaults to ``cc.delta``.
    Ahat
        Homogenized tensor at the same contrast; computed when omitted.
    correct
        Apply the least-squares divergence correction.
    div_tol
        Divergence defect above which a warning is logged.

    Raises
    ------
    ValueError
        For limit correctors, or when ``int F`` exceeds 1e-6 (inconsistent ``Ahat``).
    """
    if cc.tag not in (LimitTag.FINITE, LimitTag.UNIT):
        raise ValueError(f"Flux correctors need finite contrast - tag:{cc.tag.value}")
    A = A or cc.coefficient
    w = w or ContrastWeight(cc.delta)
    Ahat = Ahat or homogenized_tensor(cc, A, w)
    mesh = cc.mesh
    m = A.m

    F = flux_defect(cc, A, w.element_weights(mesh), Ahat)
    integral = np.einsum("e,eqijab->ijab", mesh.areas / 3.0, F)
    F_integral = float(np.abs(integral).max())
    if F_integral > INTEGRAL_TOLERANCE:
        raise ValueError(f"Flux defect does not average to zero - max_integral:{F_integral:.3e}")

    system = assemble(mesh, CoefficientField.identity(m), constraints=Constraints.periodic(mesh, m))
    solver = Solver(system, backend=backend, tol=tol)
    keys = [(i, j, beta) for i in range(DIM) for j in range(DIM) for beta in range(m)]
    loads = [load_vector(mesh, m, -F[:, :, i, j, :, beta]) for i, j, beta in keys]
    reduced = solver.solve_reduced(np.column_stack([system.rhs_for(load=b) for b in loads]))
    h = {key: system.expand(reduced[:, k]) for k, key in enumerate(keys)}

    # grad_h[e, i, j, k, alpha, beta] = d_k h_ij^{alpha beta}
    grad_h = np.zeros((mesh.ne, DIM, DIM, DIM, m, m))
    for (i, j, beta), u in h.items():
        grad_h[:, i, j, :, :, beta] = u.gradients().transpose(0, 2, 1)
    psi = np.einsum("eijkab->ekijab", grad_h) - np.einsum("ekjiab->ekijab", grad_h)

    divergence = np.einsum("ekjkab->ejab", grad_h)
    weights = mesh.areas / mesh.areas.sum()
    centered = divergence - np.einsum("e,ejab->jab", weights, divergence)
    harmonic_defect = p0_norm(mesh, centered)

    operators = _DivergenceOperators(mesh)
    uncorrected, _ = operators.measure(psi, F)
    if correct:
        psi = operators.correct(psi, F)
    rms, residual = operators.measure(psi, F)
    if residual > div_tol:
        LOG.warning(
            "Flux divergence defect above tolerance - delta:%s residual:%.3e tol:%.1e",
            cc.delta,
            residual,
            div_tol,
        )

    skew = float(np.abs(psi + psi.transpose(0, 2, 1, 3, 4, 5)).max())
    potentials = tuple(
        tuple(tuple(h[(i, j, beta)] for beta in range(m)) for j in range(DIM)) for i in range(DIM)
    )
    data = FluxData(
        delta=float(cc.delta),
        mesh=mesh,
        F=F,
        psi=psi,
        potentials=potentials,
        F_l2=quadrature_norm(mesh, F),
        psi_l2=p0_norm(mesh, psi),
        F_integral=F_integral,
        div_residual=residual,
        div_rms=rms,
        uncorrected_div_rms=uncorrected,
        skew_residual=skew,
        harmonic_defect=harmonic_defect,
    )
    LOG.debug(
        "Flux corrector built - delta:%s F_l2:%.4g Psi_l2:%.4g div:%.2e rms:%.2e uncorrected:%.2e",
        cc.delta,
        data.F_l2,
        data.psi_l2,
        residual,
        rms,
        uncorrected,
    )
    return data


class _DivergenceOperators:
    """
    Weak divergence of elementwise constant fields against periodic hats.

    ``D[k]`` maps elementwise values to ``int c d_k phi_a`` for every periodic
    hat ``phi_a``; ``norms`` holds the hats' H1 norms.
    """

    def __init__(self, mesh: CellMesh) -> None:
        self.mesh = mesh
        aggregate = Constraints.periodic(mesh, 1, mean_zero=False, pin=False).prolongation.T.tocsr()
        rows = mesh.elements.ravel()
        cols = np.repeat(np.arange(mesh.ne), 3)
        self.D = []
        for k in range(DIM):
            values = (mesh.areas[:, None] * mesh.gradients[:, :, k]).ravel()
            local = sparse.csr_matrix((values, (rows, cols)), shape=(mesh.nv, mesh.ne))
            self.D.append((aggregate @ local).tocsr())
        stiffness = stiffness_matrix(mesh, CoefficientField.identity(1), np.ones(mesh.ne))
        diagonal = (aggregate @ (stiffness + mass_matrix(mesh)) @ aggregate.T).diagonal()
        self.norms = np.sqrt(diagonal)
        self.aggregate = aggregate

    def residuals(self, psi: np.ndarray, F: np.ndarray) -> np.ndarray:
        """Weak defects ``int Psi_kij d_k phi + int F_ij phi``, ``(n_dof, d, d, m, m)``."""
        mesh = self.mesh
        m = psi.shape[-1]
        out = np.zeros((self.aggregate.shape[0], DIM, DIM, m, m))
        for i in range(DIM):
            for j in range(DIM):
                for alpha in range(m):
                    for beta in range(m):
                        load = load_vector(mesh, 1, F[:, :, i, j, alpha, beta])
                        r = self.aggregate @ load
                        for k in range(DIM):
                            r = r + self.D[k] @ psi[:, k, i, j, alpha, beta]
                        out[:, i, j, alpha, beta] = r
        return out

    def measure(self, psi: np.ndarray, F: np.ndarray) -> tuple[float, float]:
        """Largest block RMS and largest single relative defect."""
        relative = self.residuals(psi, F) / self.norms[:, None, None, None, None]
        # one block per (j, alpha, beta), both i rows together
        rms = np.sqrt(np.mean(relative**2, axis=(0, 1)))
        return float(rms.max()), float(np.abs(relative).max())

    def correct(self, psi: np.ndarray, F: np.ndarray) -> np.ndarray:
        """Least-squares skew correction of ``Psi_12j = -Psi_21j``."""
        r = self.residuals(psi, F)
        scale = sparse.diags(np.concatenate([1.0 / self.norms, 1.0 / self.norms]))
        operator = (scale @ sparse.vstack([-self.D[1], self.D[0]])).tocsr()
        corrected = psi.copy()
        m = psi.shape[-1]
        for j in range(DIM):
            for alpha in range(m):
                for beta in range(m):
                    stacked = np.concatenate([r[:, 0, j, alpha, beta], r[:, 1, j, alpha, beta]])
                    target = -(scale @ stacked)
                    if not np.any(target):
                        continue
                    result = sparse_linalg.lsqr(
                        operator,
                        target,
                        atol=1e-15,
                        btol=1e-15,
                        iter_lim=20 * operator.shape[1],
                    )
                    c = result[0]
                    corrected[:, 0, 1, j, alpha, beta] += c
                    corrected[:, 1, 0, j, alpha, beta] -= c
                    LOG.debug(
                        "Skew correction - j:%s alpha:%s beta:%s iterations:%s residual:%.2e",
                        j,
                        alpha,
                        beta,
                        result[2],
                        float(result[3]),
                    )
        return corrected
