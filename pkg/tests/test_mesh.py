import numpy as np
import pytest

from contrast_homog.mesh import (
    CELL_ORIGIN,
    DomainType,
    InclusionShape,
    ShapeKind,
    build_cell_mesh,
    build_grid_mesh,
    build_perforated_mesh,
    cell_coordinates,
    dump_mesh,
    perforation_index_set,
    periodic_identification,
)


def test_square_shape_is_half_width() -> None:
    shape = InclusionShape.square(0.25)
    assert shape.kind is ShapeKind.SQUARE
    assert shape.area() == pytest.approx(0.25)
    assert shape.contains(np.array([[0.2, -0.2], [0.3, 0.0]])).tolist() == [True, False]


def test_shape_rejects_size_outside_open_interval() -> None:
    with pytest.raises(ValueError, match="r:"):
        InclusionShape.square(0.5)
    with pytest.raises(ValueError):
        InclusionShape.disk(0.0)


def test_shape_kind_accepts_string_values() -> None:
    assert InclusionShape("disk", 0.2).kind is ShapeKind.DISK


def test_disk_area_is_inscribed_polygon_area() -> None:
    shape = InclusionShape.disk(0.3, n_seg=64)
    assert shape.area() < np.pi * 0.3**2
    assert shape.area() == pytest.approx(np.pi * 0.3**2, rel=1e-2)


def test_cell_mesh_covers_unit_cell(cell_mesh) -> None:
    assert cell_mesh.areas.sum() == pytest.approx(1.0)
    assert np.all(cell_mesh.areas > 0.0)
    assert cell_mesh.origin == CELL_ORIGIN
    assert cell_mesh.nv == 17 * 17
    assert cell_mesh.ne == 2 * 16 * 16


def test_cell_mesh_marks_square_exactly(cell_mesh) -> None:
    area = cell_mesh.areas[cell_mesh.element_region].sum()
    assert area == pytest.approx(0.25)


def test_cell_mesh_is_shared(square) -> None:
    assert build_cell_mesh(square, 16) is build_cell_mesh(square, 16)


def test_cell_mesh_arrays_are_read_only(cell_mesh) -> None:
    with pytest.raises(ValueError):
        cell_mesh.vertices[0, 0] = 1.0


def test_periodic_map_is_idempotent(cell_mesh) -> None:
    periodic_map = cell_mesh.periodic_map
    assert np.array_equal(periodic_map[periodic_map], periodic_map)
    assert cell_mesh.free_dof_count == 16 * 16


def test_periodic_map_pairs_opposite_faces(cell_mesh) -> None:
    vertices = cell_mesh.vertices
    right = np.flatnonzero(np.isclose(vertices[:, 0], 0.5) & (vertices[:, 1] < 0.5 - 1e-12))
    masters = vertices[cell_mesh.periodic_map[right]]
    assert np.allclose(masters[:, 0], -0.5)
    assert np.allclose(masters[:, 1], vertices[right, 1])


@pytest.mark.parametrize("n", [4, 18])
def test_cell_mesh_rejects_bad_subdivisions(square, n: int) -> None:
    with pytest.raises(ValueError, match="n:"):
        build_cell_mesh(square, n)


def test_cell_mesh_rejects_inclusion_near_boundary() -> None:
    with pytest.raises(ValueError, match="boundary"):
        build_cell_mesh(InclusionShape.square(0.375), 8)


def test_interface_lies_between_phases(cell_mesh) -> None:
    interface = cell_mesh.interface_vertices
    assert np.array_equal(interface, cell_mesh.inclusion_vertices & cell_mesh.matrix_vertices)
    # square of side 8 grid squares
    assert interface.sum() == 32
    assert len(cell_mesh.interface_edges) == 32


def test_locate_and_interpolate_linear_field(cell_mesh) -> None:
    values = (2.0 * cell_mesh.vertices[:, 0] - cell_mesh.vertices[:, 1])[:, None]
    rng = np.random.default_rng(3)
    points = rng.uniform(-0.5, 0.5, size=(20, 2))
    expected = 2.0 * points[:, 0] - points[:, 1]
    assert np.allclose(cell_mesh.interpolate(values, points)[:, 0], expected)


def test_cell_coordinates_center_lattice_points() -> None:
    y = cell_coordinates(np.array([[0.25, 0.0], [0.0625, 0.1875], [0.15625, 0.125]]), 0.125)
    assert np.allclose(y, [[0.0, 0.0], [-0.5, -0.5], [0.25, 0.0]])


def test_grid_mesh_counts_and_parity() -> None:
    mesh = build_grid_mesh((0.0, 0.0), 0.5, (2, 3), parity=1)
    assert mesh.nv == 12
    assert mesh.ne == 12
    assert mesh.parity == 1
    assert mesh.areas.sum() == pytest.approx(1.5)


def test_type2_index_set_keeps_buffer() -> None:
    shape = InclusionShape.square(0.25)
    index_set = perforation_index_set(shape, 0.25, 0.1, DomainType.TYPE_II)
    # inclusions at eps * n; n = 0 and n = 4 straddle the boundary
    assert sorted(index_set) == [(n1, n2) for n1 in range(1, 4) for n2 in range(1, 4)]


def test_type2_large_buffer_excludes_every_cell() -> None:
    shape = InclusionShape.square(0.25)
    assert perforation_index_set(shape, 0.25, 0.5, DomainType.TYPE_II) == ()


def test_type1_index_set_counts_intersecting_cells() -> None:
    shape = InclusionShape.square(0.25)
    index_set = perforation_index_set(shape, 0.25, 0.1, DomainType.TYPE_I)
    assert sorted(index_set) == [(n1, n2) for n1 in range(5) for n2 in range(5)]


def test_perforated_mesh_inclusion_fraction() -> None:
    mesh = build_perforated_mesh(InclusionShape.square(0.25), 0.25, 0.1, 4, "type2")
    assert mesh.domain_type is DomainType.TYPE_II
    assert mesh.cell_subdivisions == 16
    assert mesh.counts == (64, 64)
    # nine inclusions of side eps / 2
    assert mesh.areas[mesh.element_region].sum() == pytest.approx(9 * 0.125**2)
    assert not np.any(mesh.inclusion_vertices & mesh.boundary_vertices)


def test_type1_mesh_clips_boundary_inclusions() -> None:
    mesh = build_perforated_mesh(InclusionShape.square(0.25), 0.25, 0.1, 4, "type1")
    assert len(mesh.index_set) == 25
    # clipped halves and quarters along the boundary fill the volume fraction
    assert mesh.areas[mesh.element_region].sum() == pytest.approx(0.25)
    touching = mesh.inclusion_vertices & mesh.boundary_vertices
    assert touching.any()
    scaled = mesh.vertices[touching] / 0.25
    assert np.abs(scaled - np.round(scaled)).max() <= 0.25 + 1e-12


def test_perforated_mesh_aligns_with_cell_mesh() -> None:
    shape = InclusionShape.square(0.25)
    domain = build_perforated_mesh(shape, 0.25, 0.1, 4, "type1")
    cell = build_cell_mesh(shape, 16)
    located, _ = cell.locate(cell_coordinates(domain.centroids, 0.25))
    assert np.array_equal(cell.element_region[located], domain.element_region)


def test_unit_period_gives_unperforated_mesh() -> None:
    mesh = build_perforated_mesh(InclusionShape.square(0.25), 1.0, 0.1, 4)
    assert mesh.index_set == ()
    assert not mesh.element_region.any()


@pytest.mark.parametrize(
    ("eps", "kappa", "m_ref", "match"),
    [
        (0.25, 0.1, 2, "m_ref"),
        (0.25, 0.0, 4, "kappa"),
        (0.3, 0.1, 4, "eps"),
    ],
)
def test_perforated_mesh_rejects_bad_parameters(
    eps: float, kappa: float, m_ref: int, match: str
) -> None:
    with pytest.raises(ValueError, match=match):
        build_perforated_mesh(InclusionShape.square(0.25), eps, kappa, m_ref)


def test_dump_mesh_writes_header_and_regions(tmp_path, cell_mesh) -> None:
    path = dump_mesh(cell_mesh, tmp_path / "cell.txt")
    lines = path.read_text().splitlines()
    assert lines[0] == f"2 {cell_mesh.nv} {cell_mesh.ne}"
    assert len(lines) == 1 + cell_mesh.nv + cell_mesh.ne
    regions = [int(line.split()[3]) for line in lines[1 + cell_mesh.nv :]]
    assert sum(regions) == int(cell_mesh.element_region.sum())


def test_periodic_identification_of_bare_grid() -> None:
    mesh = build_grid_mesh((-0.5, -0.5), 0.125, (8, 8))
    periodic_map = periodic_identification(mesh)
    assert mesh.nv == 81
    assert len(np.unique(periodic_map)) == 64
    corners = np.flatnonzero(np.all(np.isclose(np.abs(mesh.vertices), 0.5), axis=1))
    assert len(corners) == 4
    assert len(np.unique(periodic_map[corners])) == 1
