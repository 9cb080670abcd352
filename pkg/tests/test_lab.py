import dataclasses

import numpy as np
import pytest

from contrast_homog import lab
from contrast_homog.cell import homogenized_tensor, solve_cell
from contrast_homog.fem import CoefficientField, FemFunction, norms, quadrature_points
from contrast_homog.flux import build_flux
from contrast_homog.mesh import DomainType, InclusionShape, cell_coordinates

EPS = 0.25
M_REF = 4
CELL_N = 4 * M_REF


def _ingredients(delta: float) -> tuple:
    cc = solve_cell(CoefficientField.identity(), InclusionShape.square(0.25), CELL_N, delta)
    Ahat = homogenized_tensor(cc)
    return cc, Ahat, build_flux(cc, Ahat=Ahat)


@pytest.fixture(scope="module")
def unit_ingredients() -> tuple:
    return _ingredients(1.0)


@pytest.fixture(scope="module")
def soft_ingredients() -> tuple:
    return _ingredients(0.1)


def test_reference_problem_defaults() -> None:
    spec = lab.reference_problem(delta=0.01)
    assert spec.eps == 0.125
    assert spec.shape == InclusionShape.square(0.25)
    assert spec.domain_type is DomainType.TYPE_II
    assert spec.modify_f
    assert spec.source_modified
    assert not lab.reference_problem(delta=10.0).modify_f


def test_with_delta_keeps_source_choice() -> None:
    spec = lab.reference_problem(delta=0.1)
    stiff = spec.with_delta(10.0)
    assert stiff.modify_f
    assert not stiff.source_modified
    assert not spec.with_delta(0.5, modify_f=False).source_modified


def test_source_catalogue() -> None:
    points = np.array([[0.5, 0.5], [0.0, 0.25]])
    assert np.allclose(lab.source_field("sine", 2)(points), [[1.0, 1.0], [0.0, 0.0]])
    assert lab.source_field("zero") is None
    with pytest.raises(ValueError, match="name:cosine"):
        lab.source_field("cosine")


def test_boundary_catalogue() -> None:
    points = np.array([[0.5, 0.5], [1.0, 0.0]])
    assert np.allclose(lab.boundary_field("x1x2")(points)[:, 0], [0.25, 0.0])
    assert np.allclose(lab.boundary_field("affine")(points)[:, 0], [1.5, 3.0])
    with pytest.raises(ValueError, match="boundary"):
        lab.boundary_field("quadratic")


def test_scaled_coefficient_uses_cell_coordinates() -> None:
    A = CoefficientField.oscillating(0.5)
    scaled = lab.scaled_coefficient(A, 0.125)
    points = np.array([[0.125 * 0.75, 0.125 * 0.75]])
    # x / eps = 0.75 lies a quarter cell below the lattice point 1
    expected = A(np.array([[-0.25, -0.25]]))
    assert np.allclose(scaled(points), expected)
    assert scaled.mu == A.mu


def test_domain_mesh_is_cached() -> None:
    spec = lab.reference_problem(eps=EPS, m_ref=M_REF)
    assert lab.domain_mesh(spec) is lab.domain_mesh(spec.with_delta(10.0))


def test_unit_contrast_reproduces_affine_data() -> None:
    spec = dataclasses.replace(
        lab.reference_problem(eps=EPS, m_ref=M_REF), f=None, g=lab.boundary_field("affine")
    )
    u = lab.solve_heterogeneous(spec)
    expected = lab.boundary_field("affine")(u.mesh.vertices)
    assert np.allclose(u.values, expected, atol=1e-10)


def test_aux_inverse_lives_on_inclusions() -> None:
    spec = dataclasses.replace(
        lab.reference_problem(eps=EPS, delta=0.1, m_ref=M_REF), f=lab.source_field("one")
    )
    v = lab.aux_inverse(spec)
    mesh = v.mesh
    assert np.all(v.values[mesh.matrix_vertices] == 0.0)
    assert v.values[mesh.inclusion_vertices].max() > 0.0
    assert norms(v, "matrix").full == 0.0


def test_aux_inverse_without_source_is_zero() -> None:
    spec = dataclasses.replace(lab.reference_problem(eps=EPS, m_ref=M_REF), f=None)
    assert not lab.aux_inverse(spec).values.any()


def test_energy_terms_track_source_modification() -> None:
    modified = lab.reference_problem(eps=EPS, delta=0.1, m_ref=M_REF)
    plain = modified.with_delta(0.1, modify_f=False)
    assert lab.energy_terms(modified).inclusion_source == 0.0
    terms = lab.energy_terms(plain)
    assert terms.inclusion_source > 0.0
    assert terms.bound == pytest.approx(terms.f_l2 + terms.inclusion_source + terms.lift_h1)
    assert terms.u_h1 > 0.0


def test_discrepancy_vanishes_at_unit_contrast(unit_ingredients) -> None:
    spec = dataclasses.replace(lab.reference_problem(eps=EPS, m_ref=M_REF), f=None)
    report = lab.discrepancy(spec, *unit_ingredients)
    assert report.h1_error < 1e-8
    assert report.uncorrected_error < 1e-8
    assert report.aux_norm == 0.0
    assert report.resolution_ratio is None
    assert not report.flagged


def test_discrepancy_rejects_mismatched_contrast(unit_ingredients) -> None:
    spec = lab.reference_problem(eps=EPS, delta=0.5, m_ref=M_REF)
    with pytest.raises(ValueError, match="contrast mismatch"):
        lab.discrepancy(spec, *unit_ingredients)


def test_modified_source_drops_auxiliary_term(soft_ingredients) -> None:
    spec = lab.reference_problem(eps=EPS, delta=0.1, m_ref=M_REF)
    report = lab.discrepancy(spec, *soft_ingredients)
    assert report.aux_norm == 0.0
    assert report.energy > 0.0
    assert report.grad_sup > 0.0
    assert report.pqr == pytest.approx(report.P_l2 + report.Q_l2 + EPS * report.R_l2)


def test_unmodified_source_keeps_auxiliary_term(soft_ingredients) -> None:
    spec = lab.reference_problem(eps=EPS, delta=0.1, m_ref=M_REF, modify_f=False)
    report = lab.discrepancy(spec, *soft_ingredients)
    assert report.aux_norm > 0.0
    record = report.as_dict()
    assert record["pqr"] == pytest.approx(report.pqr)
    assert record["delta"] == 0.1


def test_type1_errors_exclude_boundary_band(soft_ingredients) -> None:
    spec = lab.reference_problem(eps=EPS, delta=0.1, m_ref=M_REF, domain_type="type1")
    mesh = lab.domain_mesh(spec)
    assert np.any(mesh.inclusion_vertices & mesh.boundary_vertices)
    report = lab.discrepancy(spec, *soft_ingredients)
    # the 2 eps band covers the whole square at this period
    assert report.h1_error == 0.0
    assert report.uncorrected_error == 0.0
    assert report.energy > 0.0
    finer = lab.discrepancy(dataclasses.replace(spec, eps=EPS / 2), *soft_ingredients)
    assert finer.uncorrected_error > 0.0


def test_resolution_check_raises_on_zero_tolerance(soft_ingredients) -> None:
    spec = lab.reference_problem(eps=EPS, delta=0.1, m_ref=M_REF)
    with pytest.raises(lab.ResolutionError) as excinfo:
        lab.discrepancy(spec, *soft_ingredients, check_resolution=True, resolution_tol=0.0)
    assert excinfo.value.ratio > 0.0


def test_gradient_probe_includes_unit_baseline() -> None:
    spec = lab.reference_problem(eps=EPS, m_ref=M_REF)
    probe = lab.gradient_sup_probe(spec, [10.0, 0.1])
    assert [row.delta for row in probe.rows] == [0.1, 1.0, 10.0]
    baseline = next(row for row in probe.rows if row.delta == 1.0)
    assert probe.baseline == baseline.sup_all
    assert probe.ratio >= 1.0
    for row in probe.rows:
        assert row.sup_all == max(row.sup_inclusion, row.sup_matrix)


def test_homogenized_solve_reproduces_affine_data() -> None:
    spec = lab.reference_problem(eps=EPS, delta=0.1, m_ref=M_REF)
    mesh = lab.domain_mesh(spec)
    g = lab.boundary_field("affine")
    u_hat = lab.solve_homogenized(CoefficientField.identity(), None, g, mesh)
    assert np.allclose(u_hat.values, g(mesh.vertices), atol=1e-10)


def test_homogenized_solve_scales_with_coefficient() -> None:
    mesh = lab.domain_mesh(lab.reference_problem(eps=EPS, m_ref=M_REF))
    f = lab.source_field("one")
    unit = lab.solve_homogenized(CoefficientField.identity(), f, None, mesh)
    stiff = lab.solve_homogenized(CoefficientField.constant(4.0 * np.eye(2)), f, None, mesh)
    assert np.abs(unit.values).max() > 0.0
    assert np.allclose(stiff.values * 4.0, unit.values, atol=1e-10)


def _coupled() -> CoefficientField:
    # component stiffness 1 and 2, coupled through d_1 only
    tensor = np.einsum("ij,ab->ijab", np.eye(2), np.diag([1.0, 2.0]))
    tensor[0, 0, 0, 1] = tensor[0, 0, 1, 0] = 0.3
    return CoefficientField.constant(tensor, name="coupled")


def test_p_term_pairs_each_corrector_with_its_gradient_component() -> None:
    A = _coupled()
    cc = solve_cell(A, InclusionShape.square(0.25), CELL_N, 0.5)
    off_diagonal = cc.chi[0][0].values[:, 1] - cc.chi[0][1].values[:, 0]
    assert np.abs(off_diagonal).max() > 1e-6
    Ahat = homogenized_tensor(cc)
    spec = lab.reference_problem(eps=EPS, delta=0.5, coefficient=A, m_ref=M_REF)
    mesh = lab.domain_mesh(spec)

    x, y = mesh.vertices.T
    smoothed = FemFunction(
        mesh, np.column_stack([(c + 1.0) * x**2 + (c - 1.5) * y**2 + x * y for c in range(4)])
    )
    du = np.zeros((mesh.ne, 2, 2))
    P, _, _ = lab._pqr(mesh, spec, cc, Ahat, build_flux(cc, Ahat=Ahat), du, smoothed)

    cell_points = cell_coordinates(quadrature_points(mesh).reshape(-1, 2), EPS)
    a = A(cell_points).reshape(mesh.ne, 3, 2, 2, 2, 2)
    gap = smoothed.at_quadrature().reshape(mesh.ne, 3, 2, 2)
    dG = smoothed.gradients().reshape(mesh.ne, 2, 2, 2)
    correction = np.zeros_like(gap)
    for k in range(2):
        for g in range(2):
            chi = cc.chi[k][g].at(cell_points).reshape(mesh.ne, 3, 1, 2)
            correction += chi * dG[:, None, k, g, :, None]
    expected = np.einsum("eqijab,eqjb->eqia", a, gap - EPS * correction)
    assert np.allclose(P, expected, atol=1e-12)
