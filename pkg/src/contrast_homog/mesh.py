import enum
import functools
import math
import pathlib
from dataclasses import dataclass
from os import PathLike

import numpy as np
from lfp_logging import logs

"""
Structured criss-cross triangulations of the unit cell and of perforated domains.

All meshes are uniform grids of squares, each square split into two triangles
along a diagonal whose direction alternates in a checkerboard pattern. The
resulting mesh is invariant under the reflections and quarter turns of the
grid, which keeps the symmetry of the continuous problems visible at the
discrete level.

Element numbering is arithmetic: square ``(i, j)`` owns elements
``2 * (i + nx * j)`` and ``2 * (i + nx * j) + 1``. Point location is therefore
a closed-form computation (:meth:`GridMesh.locate`) and no search structure is
needed to evaluate a P1 field at arbitrary points.

Two concrete meshes build on :class:`GridMesh`:

- :class:`CellMesh` triangulates ``Y = (-1/2, 1/2)^2`` with one inclusion and
  carries the periodic vertex identification of the torus.
- :class:`DomainMesh` triangulates ``Omega = (0, 1)^2`` tiled by cells of size
  ``eps`` with inclusions in the cells of the perforation index set.
"""

LOG = logs.logger(__name__)

CELL_ORIGIN = (-0.5, -0.5)
PERIODIC_TOLERANCE = 1e-12
MIN_CELL_SUBDIVISIONS = 8
MIN_REFINEMENT = 4


class ShapeKind(str, enum.Enum):
    SQUARE = "square"
    DISK = "disk"


class DomainType(str, enum.Enum):
    """Perforation rule: ``type1`` keeps every cell meeting Omega, ``type2`` keeps a buffer."""

    TYPE_I = "type1"
    TYPE_II = "type2"


@dataclass(frozen=True)
class InclusionShape:
    """
    Inclusion ``omega`` centered in the unit cell.

    Attributes
    ----------
    kind
        Axis-aligned square ``(-r, r)^2`` or regular ``n_seg``-gon inscribed in
        the circle of radius ``r``.
    r
        Half-width (square) or circumradius (disk), in cell units.
    n_seg
        Number of polygon vertices for the disk.
    """

    kind: ShapeKind
    r: float
    n_seg: int = 64

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ShapeKind(self.kind))
        if not 0.0 < self.r < 0.5:
            raise ValueError(f"Inclusion size must lie in (0, 1/2) - r:{self.r}")
        if self.kind is ShapeKind.DISK and self.n_seg < 3:
            raise ValueError(f"Disk polygon needs at least 3 vertices - n_seg:{self.n_seg}")

    @classmethod
    def square(cls, r: float) -> "InclusionShape":
        return cls(ShapeKind.SQUARE, r)

    @classmethod
    def disk(cls, r: float, n_seg: int = 64) -> "InclusionShape":
        return cls(ShapeKind.DISK, r, n_seg)

    def polygon(self) -> np.ndarray:
        """Boundary vertices of ``omega`` in counter-clockwise order, shape ``(k, 2)``."""
        if self.kind is ShapeKind.SQUARE:
            r = self.r
            return np.array([[-r, -r], [r, -r], [r, r], [-r, r]])
        theta = 2.0 * np.pi * np.arange(self.n_seg) / self.n_seg
        return self.r * np.column_stack([np.cos(theta), np.sin(theta)])

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of ``points`` (shape ``(k, 2)``) strictly inside ``omega``."""
        points = np.asarray(points, dtype=float)
        if self.kind is ShapeKind.SQUARE:
            return np.max(np.abs(points), axis=1) < self.r
        angles = 2.0 * np.pi * (np.arange(self.n_seg) + 0.5) / self.n_seg
        normals = np.column_stack([np.cos(angles), np.sin(angles)])
        apothem = self.r * math.cos(math.pi / self.n_seg)
        return np.all(points @ normals.T < apothem, axis=1)

    def area(self) -> float:
        if self.kind is ShapeKind.SQUARE:
            return (2.0 * self.r) ** 2
        return 0.5 * self.n_seg * self.r**2 * math.sin(2.0 * math.pi / self.n_seg)

    def half_extent(self) -> float:
        """Largest coordinate magnitude reached by ``omega``."""
        return float(np.max(np.abs(self.polygon())))


@dataclass(frozen=True, eq=False)
class GridMesh:
    """
    Criss-cross triangulation of an axis-aligned rectangle.

    Attributes
    ----------
    vertices
        Coordinates, shape ``(nv, 2)``; vertex ``(i, j)`` has index ``i + (nx + 1) * j``.
    elements
        Counter-clockwise vertex triples, shape ``(ne, 3)``.
    element_region
        ``True`` on inclusion elements, ``False`` on matrix elements.
    origin, spacing, counts, parity
        Grid description used for closed-form point location.
    """

    vertices: np.ndarray
    elements: np.ndarray
    element_region: np.ndarray
    origin: tuple[float, float]
    spacing: float
    counts: tuple[int, int]
    parity: int = 0

    @property
    def nv(self) -> int:
        return len(self.vertices)

    @property
    def ne(self) -> int:
        return len(self.elements)

    @functools.cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.elements]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @functools.cached_property
    def gradients(self) -> np.ndarray:
        """Constant gradients of the three barycentric coordinates, shape ``(ne, 3, 2)``."""
        p = self.vertices[self.elements]
        # grad(lambda_k) = rot90(x_{k+2} - x_{k+1}) / (2 area)
        opposite = np.roll(p, -2, axis=1) - np.roll(p, -1, axis=1)
        rotated = np.stack([-opposite[..., 1], opposite[..., 0]], axis=-1)
        return rotated / (2.0 * self.areas[:, None, None])

    @functools.cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.elements].mean(axis=1)

    @functools.cached_property
    def inclusion_vertices(self) -> np.ndarray:
        """Vertices of the closed inclusion set (touched by an inclusion element)."""
        mask = np.zeros(self.nv, dtype=bool)
        mask[self.elements[self.element_region].ravel()] = True
        return mask

    @functools.cached_property
    def matrix_vertices(self) -> np.ndarray:
        mask = np.zeros(self.nv, dtype=bool)
        mask[self.elements[~self.element_region].ravel()] = True
        return mask

    @functools.cached_property
    def interface_vertices(self) -> np.ndarray:
        return self.inclusion_vertices & self.matrix_vertices

    @functools.cached_property
    def interface_edges(self) -> np.ndarray:
        """Edges shared by an inclusion and a matrix element, shape ``(k, 2)``, sorted pairs."""
        pairs = np.sort(self.elements[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        inside = np.repeat(self.element_region, 3)
        hits_in = np.bincount(inverse, weights=inside, minlength=len(edges))
        hits_out = np.bincount(inverse, weights=~inside, minlength=len(edges))
        return edges[(hits_in > 0) & (hits_out > 0)]

    @functools.cached_property
    def boundary_vertices(self) -> np.ndarray:
        lo = np.asarray(self.origin)
        hi = lo + self.spacing * np.asarray(self.counts)
        tol = 1e-9 * self.spacing
        on_lo = np.abs(self.vertices - lo) < tol
        on_hi = np.abs(self.vertices - hi) < tol
        return np.any(on_lo | on_hi, axis=1)

    def region_mask(self, region: str) -> np.ndarray:
        """Element mask for ``region`` in ``{"all", "inclusion", "matrix"}``."""
        if region == "all":
            return np.ones(self.ne, dtype=bool)
        elif region == "inclusion":
            return self.element_region.copy()
        elif region == "matrix":
            return ~self.element_region
        raise ValueError(f"Unknown region filter - region:{region}")

    def locate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """
        Find the element containing each point and its barycentric coordinates.

        Points outside the grid are assigned to the nearest boundary square, so
        the returned coordinates extrapolate linearly.

        Returns
        -------
        tuple
            ``(element_ids, barycentric)`` with shapes ``(k,)`` and ``(k, 3)``.
        """
        points = np.asarray(points, dtype=float)
        nx, ny = self.counts
        s = (points - np.asarray(self.origin)) / self.spacing
        i = np.clip(np.floor(s[:, 0]).astype(int), 0, nx - 1)
        j = np.clip(np.floor(s[:, 1]).astype(int), 0, ny - 1)
        a = s[:, 0] - i
        b = s[:, 1] - j
        flip = (i + j + self.parity) % 2 == 1
        upper = np.where(flip, a + b > 1.0, b > a)
        element_ids = 2 * (i + nx * j) + upper.astype(int)
        offset = points - self.centroids[element_ids]
        barycentric = 1.0 / 3.0 + np.einsum("pkd,pd->pk", self.gradients[element_ids], offset)
        return element_ids, barycentric

    def interpolate(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Evaluate nodal values (shape ``(nv, m)``) of a P1 field at ``points``."""
        element_ids, barycentric = self.locate(points)
        nodal = values[self.elements[element_ids]]
        return np.einsum("pk,pkm->pm", barycentric, nodal)


@dataclass(frozen=True, eq=False)
class CellMesh(GridMesh):
    """Unit-cell mesh with an inclusion and the periodic identification of the torus."""

    shape: InclusionShape | None = None
    n: int = 0
    periodic_map: np.ndarray | None = None

    @functools.cached_property
    def free_dof_count(self) -> int:
        return int(np.unique(self.periodic_map).size)

    @functools.cached_property
    def dof_index(self) -> np.ndarray:
        """Compact periodic DOF number of every vertex, ``0 .. free_dof_count - 1``."""
        _, inverse = np.unique(self.periodic_map, return_inverse=True)
        return inverse.reshape(-1)


@dataclass(frozen=True, eq=False)
class DomainMesh(GridMesh):
    """
    Mesh of ``Omega = (0, 1)^2`` perforated by ``eps``-periodic inclusions.

    Cell ``n`` occupies ``eps * (n + Y)`` and its inclusion is ``eps * (n + omega)``.
    The micro variable of a point is therefore ``y = frac(x / eps + 1/2) - 1/2``.
    On ``type1`` domains the cells along the boundary are cut by Omega and so
    are their inclusions.
    """

    shape: InclusionShape | None = None
    epsilon: float = 1.0
    kappa: float = 0.0
    index_set: tuple[tuple[int, int], ...] = ()
    domain_type: DomainType = DomainType.TYPE_II
    m_ref: int = MIN_REFINEMENT

    @property
    def cell_subdivisions(self) -> int:
        """Grid squares per cell side, aligned with :func:`build_cell_mesh` of the same count."""
        return 4 * self.m_ref

    def cell_coordinates(self, points: np.ndarray) -> np.ndarray:
        return cell_coordinates(points, self.epsilon)

    @functools.cached_property
    def boundary_distance(self) -> np.ndarray:
        """Distance of each vertex to the boundary of the unit square."""
        return boundary_distance(self.vertices)


def cell_coordinates(points: np.ndarray, eps: float) -> np.ndarray:
    """Map physical points to the unit cell, ``y = frac(x / eps + 1/2) - 1/2``."""
    scaled = np.asarray(points, dtype=float) / eps + 0.5
    return scaled - np.floor(scaled) - 0.5


def boundary_distance(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    return np.minimum(points, 1.0 - points).min(axis=1)


def build_grid_mesh(
    origin: tuple[float, float],
    spacing: float,
    counts: tuple[int, int],
    *,
    parity: int = 0,
    element_region: np.ndarray | None = None,
) -> GridMesh:
    """
    Build a bare criss-cross grid.

    Parameters
    ----------
    origin
        Lower-left corner.
    spacing
        Side length of a grid square.
    counts
        Number of squares along x and y.
    parity
        Diagonal pattern offset; square ``(i, j)`` uses the ``v00-v11`` diagonal
        when ``(i + j + parity)`` is even. Submeshes of a larger grid keep its
        triangulation by passing the parity of their first square.
    element_region
        Optional inclusion marking; all-matrix by default.
    """
    vertices, elements = _grid_arrays(origin, spacing, counts, parity)
    if element_region is None:
        element_region = np.zeros(len(elements), dtype=bool)
    return GridMesh(
        vertices=vertices,
        elements=elements,
        element_region=_frozen(np.asarray(element_region, dtype=bool)),
        origin=(float(origin[0]), float(origin[1])),
        spacing=float(spacing),
        counts=(int(counts[0]), int(counts[1])),
        parity=parity % 2,
    )


@functools.cache
def build_cell_mesh(shape: InclusionShape, n: int) -> CellMesh:
    """
    Triangulate the unit cell with ``n`` squares per side around ``shape``.

    Elements are marked as inclusion when their centroid lies in ``omega``. For
    a square inclusion with ``r * n`` integral the interface runs along grid
    lines and the marking is exact; otherwise the marked set is the staircase
    approximation of ``omega``.

    Parameters
    ----------
    shape
        Inclusion geometry.
    n
        Subdivisions per axis, at least 8.

    Returns
    -------
    CellMesh
        Immutable mesh, shared between callers through the module cache.
    """
    if n < MIN_CELL_SUBDIVISIONS:
        raise ValueError(f"Cell mesh needs at least {MIN_CELL_SUBDIVISIONS} subdivisions - n:{n}")
    if shape.kind is ShapeKind.SQUARE and n % 4 != 0:
        raise ValueError(f"Square inclusion needs n divisible by 4 - n:{n}")
    if shape.r > 0.5 - 2.0 / n + 1e-12:
        raise ValueError(f"Inclusion too close to the cell boundary - r:{shape.r} n:{n}")
    if shape.kind is ShapeKind.SQUARE and not _is_integral(shape.r * n):
        LOG.warning("Square interface not on grid lines, using staircase - r:%s n:%s", shape.r, n)

    spacing = 1.0 / n
    vertices, elements = _grid_arrays(CELL_ORIGIN, spacing, (n, n), 0)
    centroids = vertices[elements].mean(axis=1)
    region = shape.contains(centroids)
    grid = GridMesh(
        vertices=vertices,
        elements=elements,
        element_region=_frozen(region),
        origin=CELL_ORIGIN,
        spacing=spacing,
        counts=(n, n),
    )
    periodic_map = periodic_identification(grid)
    LOG.debug(
        "Cell mesh built - shape:%s r:%s n:%s inclusion_elements:%s",
        shape.kind.value,
        shape.r,
        n,
        int(region.sum()),
    )
    return CellMesh(
        vertices=grid.vertices,
        elements=grid.elements,
        element_region=grid.element_region,
        origin=grid.origin,
        spacing=grid.spacing,
        counts=grid.counts,
        parity=0,
        shape=shape,
        n=n,
        periodic_map=_frozen(periodic_map),
    )


def periodic_identification(mesh: GridMesh) -> np.ndarray:
    """
    Identify opposite faces of the mesh bounding box.

    Every vertex on the right (top) face is mapped to the vertex on the left
    (bottom) face with the same y (x) coordinate; the two maps are composed so
    all corner copies share one master.

    Returns
    -------
    numpy.ndarray
        Idempotent map ``vertex -> master vertex``.

    Raises
    ------
    ValueError
        If a face vertex has no partner on the opposite face within 1e-12.
    """
    x_map = _face_map(mesh.vertices, axis=0)
    y_map = _face_map(mesh.vertices, axis=1)
    periodic_map = x_map[y_map]
    if not np.array_equal(periodic_map[periodic_map], periodic_map):
        raise ValueError("Periodic identification is not idempotent")
    return periodic_map


@functools.cache
def perforation_index_set(
    shape: InclusionShape, eps: float, kappa: float, domain_type: DomainType
) -> tuple[tuple[int, int], ...]:
    """
    Enumerate the lattice cells carrying an inclusion.

    The enumeration is brute force over a lattice window larger than Omega,
    testing each inclusion ``eps * (n + omega)`` against the definition:
    intersection with Omega for ``type1``, containment with boundary distance
    above ``kappa * eps`` for ``type2``.
    """
    domain_type = DomainType(domain_type)
    if eps >= 1.0:
        LOG.warning("Period not smaller than the domain, no inclusions - eps:%s", eps)
        return ()
    if domain_type is DomainType.TYPE_II and kappa * eps >= eps / 2.0:
        LOG.warning("Boundary buffer excludes every cell - kappa:%s eps:%s", kappa, eps)
        return ()

    half = shape.half_extent()
    k = int(math.ceil(1.0 / eps))
    keep: list[tuple[int, int]] = []
    for n2 in range(-1, k + 1):
        for n1 in range(-1, k + 1):
            center = eps * np.array([n1, n2], dtype=float)
            lo = center - eps * half
            hi = center + eps * half
            if domain_type is DomainType.TYPE_I:
                if np.all(lo < 1.0) and np.all(hi > 0.0):
                    keep.append((n1, n2))
            else:
                gap = min(lo.min(), 1.0 - hi.max())
                if gap > kappa * eps:
                    keep.append((n1, n2))
    return tuple(keep)


def build_perforated_mesh(
    omega: InclusionShape,
    eps: float,
    kappa: float,
    m_ref: int,
    domain_type: DomainType | str = DomainType.TYPE_II,
) -> DomainMesh:
    """
    Triangulate ``Omega = (0, 1)^2`` with ``eps``-periodic inclusions.

    The grid has ``4 * m_ref`` squares per cell side, so the triangulation of
    every cell coincides with ``build_cell_mesh(omega, 4 * m_ref)`` and cell
    fields can be looked up elementwise.

    Parameters
    ----------
    omega
        Inclusion shape in cell units.
    eps
        Period ``1 / k`` for an integer ``k >= 2``; ``eps >= 1`` yields an
        unperforated mesh.
    kappa
        Boundary separation factor for ``type2`` domains.
    m_ref
        Refinement factor, at least 4.
    domain_type
        ``type1`` or ``type2``.
    """
    domain_type = DomainType(domain_type)
    if m_ref < MIN_REFINEMENT:
        raise ValueError(f"Refinement too coarse - m_ref:{m_ref}")
    if kappa <= 0.0:
        raise ValueError(f"Boundary separation must be positive - kappa:{kappa}")
    if eps <= 0.0:
        raise ValueError(f"Period must be positive - eps:{eps}")

    subdivisions = 4 * m_ref
    if eps >= 1.0:
        cells = 1
    else:
        cells = int(round(1.0 / eps))
        if abs(cells * eps - 1.0) > 1e-12:
            raise ValueError(f"Period must be 1/k for an integer k - eps:{eps}")
    index_set = perforation_index_set(omega, float(eps), float(kappa), domain_type)

    count = cells * subdivisions
    spacing = 1.0 / count
    vertices, elements = _grid_arrays((0.0, 0.0), spacing, (count, count), 0)
    centroids = vertices[elements].mean(axis=1)
    region = np.zeros(len(elements), dtype=bool)
    if index_set:
        cell = np.floor(centroids / eps + 0.5).astype(int)
        occupied = np.zeros((cells + 2, cells + 2), dtype=bool)
        for n1, n2 in index_set:
            occupied[n1 + 1, n2 + 1] = True
        in_lattice = occupied[
            np.clip(cell[:, 0] + 1, 0, cells + 1), np.clip(cell[:, 1] + 1, 0, cells + 1)
        ]
        region = in_lattice & omega.contains(cell_coordinates(centroids, eps))

    LOG.info(
        "Perforated mesh built - eps:%s kappa:%s type:%s inclusions:%s vertices:%s",
        eps,
        kappa,
        domain_type.value,
        len(index_set),
        len(vertices),
    )
    return DomainMesh(
        vertices=vertices,
        elements=elements,
        element_region=_frozen(region),
        origin=(0.0, 0.0),
        spacing=spacing,
        counts=(count, count),
        parity=0,
        shape=omega,
        epsilon=float(eps),
        kappa=float(kappa),
        index_set=index_set,
        domain_type=domain_type,
        m_ref=m_ref,
    )


def dump_mesh(mesh: GridMesh, path: PathLike | str) -> pathlib.Path:
    """
    Write ``mesh`` as text: header ``d nv ne``, vertex lines, element lines ``i j k region``.
    """
    path = pathlib.Path(path)
    lines = [f"2 {mesh.nv} {mesh.ne}"]
    lines.extend(f"{x!r} {y!r}" for x, y in mesh.vertices.tolist())
    lines.extend(
        f"{i} {j} {k} {int(r)}"
        for (i, j, k), r in zip(mesh.elements.tolist(), mesh.element_region.tolist())
    )
    path.write_text("\n".join(lines) + "\n")
    LOG.info("Mesh written - path:%s vertices:%s elements:%s", path, mesh.nv, mesh.ne)
    return path


def _grid_arrays(
    origin: tuple[float, float], spacing: float, counts: tuple[int, int], parity: int
) -> tuple[np.ndarray, np.ndarray]:
    nx, ny = counts
    ii, jj = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing="xy")
    vertices = np.asarray(origin, dtype=float) + spacing * np.column_stack([ii.ravel(), jj.ravel()])

    si, sj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    si = si.ravel()
    sj = sj.ravel()
    v00 = si + (nx + 1) * sj
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    flip = ((si + sj + parity) % 2 == 1)[:, None]
    lower = np.where(flip, np.column_stack([v00, v10, v01]), np.column_stack([v00, v10, v11]))
    upper = np.where(flip, np.column_stack([v10, v11, v01]), np.column_stack([v00, v11, v01]))
    elements = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return _frozen(vertices), _frozen(elements)


def _face_map(vertices: np.ndarray, axis: int) -> np.ndarray:
    other = 1 - axis
    lo = vertices[:, axis].min()
    hi = vertices[:, axis].max()
    width = hi - lo
    low_face = np.flatnonzero(np.abs(vertices[:, axis] - lo) < PERIODIC_TOLERANCE)
    high_face = np.flatnonzero(np.abs(vertices[:, axis] - hi) < PERIODIC_TOLERANCE)
    if len(low_face) != len(high_face):
        raise ValueError(
            f"Opposite faces have different vertex counts - axis:{axis} "
            f"low:{len(low_face)} high:{len(high_face)}"
        )
    low_sorted = low_face[np.argsort(vertices[low_face, other], kind="stable")]
    high_sorted = high_face[np.argsort(vertices[high_face, other], kind="stable")]
    shifted = vertices[high_sorted].copy()
    shifted[:, axis] -= width
    mismatch = np.abs(shifted - vertices[low_sorted]).max(initial=0.0)
    if mismatch > PERIODIC_TOLERANCE:
        raise ValueError(f"Opposite faces do not match - axis:{axis} mismatch:{mismatch:.3e}")
    face_map = np.arange(len(vertices))
    face_map[high_sorted] = low_sorted
    return face_map


def _is_integral(value: float) -> bool:
    return abs(value - round(value)) < 1e-9


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array
