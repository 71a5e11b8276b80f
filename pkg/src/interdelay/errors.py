class InputError(ValueError):
    """Bad or inconsistent input data. Maps to CLI exit code 1."""


class CorpusFormatError(InputError):
    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class IneligiblePaperError(InputError):
    """Paper has too few field-bearing references to define a field distribution."""


class PrerequisiteError(InputError):
    """A pipeline stage was requested before the stage producing its inputs ran."""


class NumericalError(ArithmeticError):
    """Numerical failure (rank deficiency, degenerate inputs). Maps to exit code 2."""
