import json
from typing import Any, Literal

from lfp_logging import logs

from contrast_homog.config import CoefficientConfig
from contrast_homog.fem import CoefficientField
from contrast_homog.mesh import InclusionShape

"""
Shared option handling for the command modules.

Commands that work on a single cell take the coefficient and inclusion as
flat options; :func:`cell_inputs` turns them into model objects. Results are
emitted as one JSON document per log line so they can be piped.
"""

LOG = logs.logger(__name__)

Coefficient = Literal["identity", "oscillating", "system"]
Shape = Literal["square", "disk"]


def cell_inputs(
    coefficient: Coefficient, amplitude: float, shape: Shape, r: float
) -> tuple[CoefficientField, InclusionShape]:
    A = CoefficientConfig(name=coefficient, amplitude=amplitude).build()
    omega = InclusionShape.disk(r) if shape == "disk" else InclusionShape.square(r)
    return A, omega


def emit(record: dict[str, Any]) -> None:
    LOG.info("%s", json.dumps(record, sort_keys=True))
