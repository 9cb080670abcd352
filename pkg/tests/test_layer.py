import numpy as np
import pytest

from contrast_homog.cell import solve_cell
from contrast_homog.fem import CoefficientField, norms
from contrast_homog.layer import (
    corrector_via_potentials,
    lambda_of_delta,
    np_operator,
    resolvent_sweep,
    single_layer,
    weak_single_layer,
)
from contrast_homog.mesh import InclusionShape


@pytest.fixture(scope="module")
def operator():
    """Neumann-Poincare operator on the 16 x 16 square cell."""
    return np_operator(CoefficientField.identity(), InclusionShape.square(0.25), 16)


def test_lambda_of_delta() -> None:
    assert lambda_of_delta(2.0) == pytest.approx(1.5)
    assert lambda_of_delta(0.5) == pytest.approx(-1.5)


@pytest.mark.parametrize("delta", [1.0, 0.0, -2.0])
def test_lambda_of_delta_rejects_invalid(delta: float) -> None:
    with pytest.raises(ValueError, match="delta"):
        lambda_of_delta(delta)


def test_single_layer_has_zero_mean_and_jump(identity, square) -> None:
    layer = single_layer(identity, square, 16)
    assert layer.n_b == 32
    rng = np.random.default_rng(7)
    values = layer.project(rng.standard_normal((layer.n_b, 1)))
    psi = layer.density(values)
    u = layer(psi)
    assert abs(u.mean()[0]) < 1e-12
    flat = u.values.ravel()[:, None]
    jump = layer.trace_plus(flat) - layer.trace_minus(flat)
    assert np.allclose(jump[:, 0], layer.mass() @ psi.flat, atol=1e-8)
    assert layer.harmonic_residual(u) < 1e-8


def test_density_rejects_nonzero_mean(identity, square) -> None:
    layer = single_layer(identity, square, 16)
    with pytest.raises(ValueError, match="zero mean"):
        layer.density(np.ones((layer.n_b, 1)))
    assert not layer.density(np.ones((layer.n_b, 1)), zero_mean=False).zero_mean


def test_spectrum_inside_half_interval(operator) -> None:
    eigenvalues = operator.eigenvalues()
    assert len(eigenvalues) == operator.layer.n_b - 1
    assert eigenvalues.min() > -0.5 - 1e-8
    assert eigenvalues.max() < 0.5 + 1e-8
    assert np.all(np.diff(eigenvalues) >= 0.0)


def test_operator_is_self_adjoint_and_satisfies_jump(operator) -> None:
    assert operator.self_adjoint_residual < 1e-8
    assert operator.jump_residual < 1e-8


def test_rayleigh_quotient_from_energy_split(operator) -> None:
    rng = np.random.default_rng(11)
    flat = operator.basis @ rng.standard_normal(operator.basis.shape[1])
    psi = operator.layer.density(flat)
    inner, outer = operator.gram_energy_split(psi)
    applied = operator.apply(psi).ravel()
    coordinates = operator.basis.T @ flat
    quotient = coordinates @ operator.gram @ (operator.basis.T @ applied)
    energy = coordinates @ operator.gram @ coordinates
    assert quotient / energy == pytest.approx(0.5 * (outer - inner) / (outer + inner), abs=1e-6)


def test_resolvent_gap_decays_toward_both_limits(operator) -> None:
    sweep = resolvent_sweep([1e-5, 1e-4, 1e-3, 1.0, 1e3, 1e4, 1e5], operator=operator)
    assert 1.0 not in sweep.deltas
    assert sweep.zero_rate is not None
    assert sweep.infinity_rate is not None
    assert sweep.zero_rate.slope == pytest.approx(1.0, abs=0.1)
    assert sweep.infinity_rate.slope == pytest.approx(1.0, abs=0.1)


@pytest.mark.parametrize("delta", [0.1, 10.0])
def test_corrector_via_potentials_matches_direct_solve(operator, delta: float) -> None:
    A = operator.layer.A
    mesh = operator.mesh
    unit = solve_cell(A, mesh.shape, mesh.n, 1.0)
    direct = solve_cell(A, mesh.shape, mesh.n, delta)
    for i in range(2):
        via = corrector_via_potentials(delta, i, 0, operator=operator, unit=unit)
        chi = direct.chi[i][0]
        assert norms(via - chi).full <= 1e-6 * max(norms(chi).full, 1.0)


def test_corrector_via_potentials_rejects_foreign_mesh(operator, identity, square) -> None:
    unit = solve_cell(identity, square, 8, 1.0)
    with pytest.raises(ValueError, match="different meshes"):
        corrector_via_potentials(10.0, 0, 0, operator=operator, unit=unit)


def test_weak_single_layer_is_linear(identity, square) -> None:
    layer = single_layer(identity, square, 16)
    zero = weak_single_layer(layer.density(np.zeros((layer.n_b, 1))), layer=layer)
    assert np.abs(zero.values).max() < 1e-12
    rng = np.random.default_rng(11)
    first = layer.project(rng.standard_normal((layer.n_b, 1)))
    second = layer.project(rng.standard_normal((layer.n_b, 1)))
    combined = weak_single_layer(layer.density(2.0 * first - 3.0 * second), layer=layer)
    parts = (
        weak_single_layer(layer.density(first), layer=layer) * 2.0
        - weak_single_layer(layer.density(second), layer=layer) * 3.0
    )
    assert np.allclose(combined.values, parts.values, atol=1e-10)
