"""Electromagnetic array imaging of small inclusions with random-matrix noise corrections."""

__version__ = "0.1.0"

from .core_model import (  # noqa: E402
    ArrayGeometry,
    Ellipsoid,
    Inclusion,
    NumericalError,
    ParameterError,
    SearchGrid,
    SensingMatrix,
    build_square_array,
)
from .forward import ResponseMatrix, forward_response  # noqa: E402
