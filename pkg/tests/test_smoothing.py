import numpy as np
import pytest

from contrast_homog.fem import FemFunction
from contrast_homog.mesh import InclusionShape, build_perforated_mesh
from contrast_homog.smoothing import bump, cutoff, smooth, smooth_and_cut, stencil


@pytest.fixture(scope="module")
def domain():
    return build_perforated_mesh(InclusionShape.square(0.25), 0.25, 0.1, 4)


def test_bump_vanishes_outside_half_disk() -> None:
    values = bump(np.array([[0.0, 0.0], [0.5, 0.0], [0.4, 0.4]]))
    assert values[0] > 0.0
    assert values[1] == 0.0
    assert values[2] == 0.0


def test_stencil_weights_are_normalized() -> None:
    offsets, weights = stencil(0.1)
    assert weights.sum() == pytest.approx(1.0)
    assert np.all(weights > 0.0)
    assert np.all(np.linalg.norm(offsets, axis=1) < 0.05)
    # symmetric stencil has zero first moment
    assert np.allclose(weights @ offsets, 0.0, atol=1e-14)


def test_cutoff_ramp() -> None:
    points = np.array([[0.5, 0.01], [0.5, 0.35], [0.5, 0.5]])
    assert cutoff(points, 0.1).tolist() == pytest.approx([0.0, 0.5, 1.0])


def test_smooth_preserves_affine_fields(domain) -> None:
    values = 1.0 + 2.0 * domain.vertices[:, 0] - domain.vertices[:, 1]
    result = smooth(FemFunction(domain, values), 0.0625)
    assert np.allclose(result[:, 0], values, atol=1e-12)


def test_smooth_and_cut_vanishes_near_boundary(domain) -> None:
    eps = 0.0625
    u = smooth_and_cut(FemFunction(domain, np.ones(domain.nv)), eps, domain)
    near = domain.boundary_distance < 2.0 * eps
    deep = domain.boundary_distance > 5.0 * eps
    assert np.all(u.values[near] == 0.0)
    assert np.allclose(u.values[deep], 1.0)
    assert u.values.min() >= 0.0
    assert u.values.max() <= 1.0 + 1e-12


def test_smooth_and_cut_accepts_element_values(domain) -> None:
    u = smooth_and_cut(np.full((domain.ne, 2), 3.0), 0.0625, domain)
    assert u.m == 2
    center = np.argmin(np.linalg.norm(domain.vertices - 0.5, axis=1))
    assert u.values[center] == pytest.approx([3.0, 3.0])


def test_smooth_and_cut_rejects_large_scale(domain) -> None:
    with pytest.raises(ValueError, match="inradius"):
        smooth_and_cut(FemFunction(domain, np.ones(domain.nv)), 0.75, domain)


def test_smooth_and_cut_rejects_foreign_field(domain, cell_mesh) -> None:
    with pytest.raises(ValueError, match="smoothing domain"):
        smooth_and_cut(FemFunction(cell_mesh, np.ones(cell_mesh.nv)), 0.0625, domain)
