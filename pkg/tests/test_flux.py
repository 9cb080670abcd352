import numpy as np
import pytest

from contrast_homog.cell import homogenized_tensor, solve_cell, solve_cell_limit_zero
from contrast_homog.fem import CoefficientField
from contrast_homog.flux import build_flux
from contrast_homog.mesh import InclusionShape


@pytest.fixture(scope="module")
def soft_flux():
    """Flux corrector at contrast 0.1, shared across the module."""
    cc = solve_cell(CoefficientField.identity(), InclusionShape.square(0.25), 16, 0.1)
    return build_flux(cc)


def test_flux_defect_has_zero_mean(soft_flux) -> None:
    assert soft_flux.F_integral < 1e-10
    assert soft_flux.F_l2 > 0.0


def test_flux_potential_is_exactly_skew(soft_flux) -> None:
    assert soft_flux.skew_residual == 0.0
    psi = soft_flux.psi
    assert np.array_equal(psi[:, 0, 0], np.zeros_like(psi[:, 0, 0]))
    assert np.array_equal(psi[:, 0, 1], -psi[:, 1, 0])


def test_divergence_correction_does_not_increase_defect(soft_flux) -> None:
    assert soft_flux.div_rms <= soft_flux.uncorrected_div_rms + 1e-12


def test_uncorrected_flux_keeps_raw_defect(identity, square) -> None:
    cc = solve_cell(identity, square, 16, 0.1)
    raw = build_flux(cc, correct=False)
    assert raw.div_rms == pytest.approx(raw.uncorrected_div_rms)
    assert raw.skew_residual == 0.0


def test_unit_identity_flux_vanishes(unit_correctors) -> None:
    data = build_flux(unit_correctors)
    assert data.F_l2 < 1e-10
    assert data.psi_l2 < 1e-8


def test_flux_report_fields(soft_flux) -> None:
    record = soft_flux.as_dict()
    assert set(record) == {"delta", "F_l2", "Psi_l2", "div_residual", "skew_residual"}
    assert record["delta"] == 0.1


def test_psi_function_is_nodal_field(soft_flux) -> None:
    u = soft_flux.psi_function(0, 1, 0, 0)
    assert u.values.shape == (soft_flux.mesh.nv, 1)


def test_flux_rejects_limit_correctors(identity, square) -> None:
    with pytest.raises(ValueError, match="finite contrast"):
        build_flux(solve_cell_limit_zero(identity, square, 16))


def test_flux_rejects_inconsistent_tensor(identity, square) -> None:
    cc = solve_cell(identity, square, 16, 0.1)
    other = homogenized_tensor(solve_cell(identity, square, 16, 10.0))
    with pytest.raises(ValueError, match="average to zero"):
        build_flux(cc, Ahat=other)
