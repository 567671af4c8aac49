"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, data/format
errors exit 2, numeric failures exit 3.
"""


class SketchRLError(Exception):
    """Base class for all package errors."""


class InputError(SketchRLError):
    """Invalid argument to a library operation (bad dimension, out-of-range
    value, unknown identifier)."""


class DataFormatError(SketchRLError):
    """Malformed file, config, or serialized record."""


class NumericError(SketchRLError):
    """Non-finite or otherwise unusable numeric result."""
