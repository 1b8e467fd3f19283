"""Exception types shared across the toolkit.

All data-level failures derive from DataError so the CLI can map them to a
single exit code. Usage/configuration mistakes raise ConfigError.
"""


class CtalignError(Exception):
    """Base class for all toolkit errors."""


class DataError(CtalignError):
    """A problem with input data (files, shapes, degenerate values)."""


class ConfigError(CtalignError):
    """A problem with configuration values (templates, rates, flags)."""


class DegenerateInputError(DataError):
    """Zero-norm vector where a direction is required."""


class ShapeMismatchError(DataError):
    """Operands have incompatible shapes or sizes."""


class EmbeddingFormatError(DataError):
    """Malformed embedding file. Carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class CorpusFormatError(DataError):
    """Malformed corpus file. Carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line
