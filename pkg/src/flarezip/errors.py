"""Exception types shared across the package.

The CLI maps these onto exit codes: data/format problems exit 2,
verification failures exit 1, internal invariant violations exit 3.
"""

from __future__ import annotations


class DataFormatError(Exception):
    """Bad input data or malformed file: wrong size, bad magic, non-finite values."""


class StreamCorruptError(DataFormatError):
    """Compressed stream or trace failed a structural check.

    Carries an optional offset (byte/bit/code index) naming the first bad
    position so corrupt files are diagnosable.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (offset {offset})"
        super().__init__(message)
        self.offset = offset


class VerificationFailure(Exception):
    """Reconstruction violated the error bound it promised."""


class InternalInvariantError(Exception):
    """A condition the implementation guarantees was observed false."""
