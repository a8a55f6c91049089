"""Library-wide numeric settings.

Precision applies to tensors the library creates (seeded parameters,
parsed inputs). Operations on existing arrays keep the input dtype.
"""

import contextlib

import numpy as np

_DTYPES = {32: np.float32, 64: np.float64}
_FFT_MODES = ("2d", "flat")

_state = {"precision": 64, "fft_mode": "2d"}


def set_precision(bits):
    if bits not in _DTYPES:
        raise ValueError(f"precision must be 32 or 64, got {bits!r}")
    _state["precision"] = bits


def get_dtype():
    return _DTYPES[_state["precision"]]


@contextlib.contextmanager
def precision(bits):
    old = _state["precision"]
    set_precision(bits)
    try:
        yield
    finally:
        _state["precision"] = old


def set_fft_mode(mode):
    """Select 2D transforms over H x W ("2d") or 1D over flattened positions ("flat")."""
    if mode not in _FFT_MODES:
        raise ValueError(f"fft mode must be one of {_FFT_MODES}, got {mode!r}")
    _state["fft_mode"] = mode


def get_fft_mode():
    return _state["fft_mode"]
