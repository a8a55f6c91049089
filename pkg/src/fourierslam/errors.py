class DataError(ValueError):
    """Bad input data: malformed files, wrong shapes, invalid parameters."""


class ShapeError(DataError):
    pass


class TensorFormatError(DataError):
    pass


class DegenerateError(DataError):
    """Geometric configuration does not determine the requested quantity."""


class NumericalError(ArithmeticError):
    """Ill-conditioned system or divergent iteration."""
