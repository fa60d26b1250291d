"""Exception types shared across the package."""


class EmptyRoiError(ValueError):
    """A region of interest covers no feature-map cells."""


class GenerationError(RuntimeError):
    """Synthetic scene generation could not place the requested patterns."""


class UndefinedScoreError(ValueError):
    """A correlation score is undefined (zero-variance input)."""


class FileFormatError(ValueError):
    """An input file (CSV or key=value config) is malformed.

    Carries the 1-based line number of the offending record.
    """

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
