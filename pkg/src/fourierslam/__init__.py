"""Numerical core of Fourier-attention RGB-D fusion SLAM.

Spectral attention operators, cross-modal distillation losses, SE(3)
supervision losses, EKF fusion of visual and GNSS positions, and the
trajectory / flow metrics used to evaluate them.
"""

from fourierslam.config import get_dtype, get_fft_mode, precision, set_fft_mode, set_precision
from fourierslam.errors import (
    DataError,
    DegenerateError,
    NumericalError,
    ShapeError,
    TensorFormatError,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "DegenerateError",
    "NumericalError",
    "ShapeError",
    "TensorFormatError",
    "get_dtype",
    "get_fft_mode",
    "precision",
    "set_fft_mode",
    "set_precision",
]
