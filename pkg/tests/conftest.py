import os
import pathlib

import pytest

from contrast_homog.cell import CellCorrectors, solve_cell
from contrast_homog.fem import CoefficientField
from contrast_homog.mesh import CellMesh, InclusionShape, build_cell_mesh


@pytest.fixture
def square() -> InclusionShape:
    return InclusionShape.square(0.25)


@pytest.fixture
def identity() -> CoefficientField:
    return CoefficientField.identity()


@pytest.fixture
def cell_mesh(square: InclusionShape) -> CellMesh:
    """16 x 16 cell with the square interface on grid lines."""
    return build_cell_mesh(square, 16)


@pytest.fixture
def unit_correctors(identity: CoefficientField, square: InclusionShape) -> CellCorrectors:
    return solve_cell(identity, square, 16, 1.0)


@pytest.fixture
def workdir(tmp_path: pathlib.Path) -> pathlib.Path:
    """Run the test inside an empty temporary directory."""
    old_cwd = os.getcwd()
    os.chdir(tmp_path)
    yield tmp_path
    os.chdir(old_cwd)
