import functools
import math

import numpy as np
from lfp_logging import logs
from scipy import integrate

from contrast_homog.fem import FemFunction, nodal_average
from contrast_homog.mesh import DomainMesh, boundary_distance

"""
Mollification at scale eps and the boundary cutoff.

``S_eps v(x) = sum_k w_k v(x - y_k)`` over a tensor Gauss-Legendre stencil on
``[-eps/2, eps/2]^2`` weighted by the bump ``xi(y / eps) / eps^2``. The
weights are renormalized to sum to one, so constants pass through exactly.
"""

LOG = logs.logger(__name__)

STENCIL_ORDER = 8
# cutoff is 0 within INNER * eps of the boundary and 1 beyond OUTER * eps
INNER = 3.0
OUTER = 4.0
DOMAIN_INRADIUS = 0.5


@functools.cache
def bump_normalization() -> float:
    """``c`` with ``c * int_{|z| < 1/2} exp(-1 / (1 - |2z|^2)) dz = 1`` in two dimensions."""
    value, error = integrate.quad(
        lambda rho: 2.0 * math.pi * rho * math.exp(-1.0 / (1.0 - 4.0 * rho * rho)),
        0.0,
        0.5,
        epsabs=1e-14,
        epsrel=1e-12,
    )
    LOG.debug("Bump normalized - integral:%.12g error:%.1e", value, error)
    return 1.0 / value


def bump(z: np.ndarray) -> np.ndarray:
    """Normalized bump ``xi(z)`` at points ``(k, 2)``, zero for ``|z| >= 1/2``."""
    z = np.asarray(z, dtype=float)
    s = 1.0 - 4.0 * np.sum(z * z, axis=-1)
    inside = s > 0.0
    out = np.zeros(s.shape)
    out[inside] = bump_normalization() * np.exp(-1.0 / s[inside])
    return out


@functools.cache
def stencil(eps: float, order: int = STENCIL_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """
    Offsets ``(k, 2)`` and weights ``(k,)`` of the discrete mollifier.

    Nodes where the bump vanishes are dropped.
    """
    nodes, weights = np.polynomial.legendre.leggauss(order)
    offsets_1d = 0.5 * eps * nodes
    x, y = np.meshgrid(offsets_1d, offsets_1d, indexing="xy")
    offsets = np.column_stack([x.ravel(), y.ravel()])
    w = np.outer(weights, weights).ravel() * (0.5 * eps) ** 2 * bump(offsets / eps) / eps**2
    keep = w > 0.0
    raw = float(w.sum())
    LOG.debug("Mollifier stencil - eps:%s points:%s raw_mass:%.10f", eps, int(keep.sum()), raw)
    offsets = offsets[keep]
    w = w[keep] / raw
    offsets.setflags(write=False)
    w.setflags(write=False)
    return offsets, w


def cutoff(points: np.ndarray, eps: float) -> np.ndarray:
    """Distance ramp: 0 within ``3 eps`` of the boundary, 1 beyond ``4 eps``, linear between."""
    distance = boundary_distance(points)
    return np.clip((distance - INNER * eps) / ((OUTER - INNER) * eps), 0.0, 1.0)


def smooth(field: FemFunction, eps: float, points: np.ndarray | None = None) -> np.ndarray:
    """
    ``S_eps`` of a P1 field at ``points`` (default: the field's vertices), shape ``(k, m)``.

    Samples outside the mesh extrapolate linearly from the nearest boundary square.
    """
    mesh = field.mesh
    points = mesh.vertices if points is None else np.asarray(points, dtype=float)
    offsets, weights = stencil(float(eps))
    out = np.zeros((len(points), field.m))
    for offset, weight in zip(offsets, weights):
        out += weight * mesh.interpolate(field.values, points - offset)
    return out


def smooth_and_cut(field: FemFunction | np.ndarray, eps: float, domain: DomainMesh) -> FemFunction:
    """
    Nodal values of ``S_eps(eta_eps * field)`` on ``domain``.

    Parameters
    ----------
    field
        P1 field on ``domain`` or elementwise values ``(ne, k)``, lifted to P1
        by area-weighted nodal averaging.
    eps
        Smoothing scale, at most the inradius 1/2 of the unit square.
    domain
        Mesh of the unit square.

    Raises
    ------
    ValueError
        If ``eps`` exceeds the inradius.
    """
    if not 0.0 < eps <= DOMAIN_INRADIUS:
        raise ValueError(f"Smoothing scale exceeds the domain inradius - eps:{eps}")
    if not isinstance(field, FemFunction):
        values = np.asarray(field, dtype=float).reshape(domain.ne, -1)
        field = FemFunction(domain, nodal_average(domain, values))
    if field.mesh is not domain:
        raise ValueError("Field does not live on the smoothing domain")
    cut = FemFunction(domain, field.values * cutoff(domain.vertices, eps)[:, None])

    # S_eps(eta v) vanishes wherever the stencil only reaches the zero band
    reach = INNER * eps - 0.5 * eps - 2.0 * domain.spacing
    active = domain.boundary_distance > reach
    values = np.zeros_like(cut.values)
    if active.any():
        values[active] = smooth(cut, eps, domain.vertices[active])
    LOG.debug(
        "Smoothed field - eps:%s components:%s active_vertices:%s",
        eps,
        field.m,
        int(active.sum()),
    )
    return FemFunction(domain, values)
