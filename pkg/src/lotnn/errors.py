"""Exception types shared across the package."""


class LotnnError(Exception):
    """Base class for all package errors."""


class ShapeError(LotnnError):
    """Dimension mismatch between operands."""


class NumericError(LotnnError):
    """NaN/Inf encountered, or a numeric contract failed."""


class DataError(LotnnError):
    """Malformed dataset, file, or model bundle."""
