"""Exception types shared across the package.

Each class maps to one machine-parsable CLI error category (see cli.py).
"""


class BoxEbmError(Exception):
    """Base class for all package errors."""


class ConfigError(BoxEbmError):
    """Inconsistent or invalid configuration (dimension mismatches, bad values)."""


class InputError(BoxEbmError):
    """Invalid input data (unknown scene ids, bad boxes, malformed requests)."""


class ParseError(InputError):
    """Malformed text input; carries a 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericError(BoxEbmError):
    """Non-finite value produced by a numeric computation.

    `where` names the layer / iteration / annotation that produced it.
    """

    def __init__(self, message: str, where: str | None = None):
        self.where = where
        if where is not None:
            message = f"{message} (at {where})"
        super().__init__(message)


class GenerationError(BoxEbmError):
    """Synthetic scene generation failed (e.g. could not place boxes)."""
