"""Shared exception types.

The service layer maps these onto HTTP error kinds and the CLI maps the
kinds onto exit codes, so raising the right class matters more than the
message text.
"""


class PrefmemError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(PrefmemError):
    """Shape mismatch between tensors; message names both shapes."""


class DataFormatError(PrefmemError):
    """Malformed input file. Carries a 1-based line number when known."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        prefix = ""
        if path is not None:
            prefix += f"{path}:"
        if line is not None:
            prefix += f"line {line}: "
        super().__init__(prefix + message)


class CapacityError(PrefmemError):
    """Requested more unique records than the template space can yield."""


class MissingArtifactError(PrefmemError):
    """A required file (dataset, checkpoint) does not exist yet."""


class UsageError(PrefmemError):
    """Invalid request parameters / CLI arguments."""
