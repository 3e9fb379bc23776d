"""Exception hierarchy shared by the solver modules."""

from __future__ import annotations


class MuskatError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(MuskatError, ValueError):
    """Invalid geometry or numerical configuration."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DataError(MuskatError, ValueError):
    """Boundary or initial data violating a modelling assumption."""

    def __init__(self, label: str, message: str, magnitude: float | None = None):
        self.label = label
        self.magnitude = magnitude
        super().__init__(f"[{label}] {message}")


class CoercivityError(MuskatError, ValueError):
    """Nonpositive viscosity handed to the momentum assembly."""


class PreconditionError(MuskatError, ValueError):
    """An operation was called outside its admissible input set."""


class SolverError(MuskatError, RuntimeError):
    """Iterative solve hit its iteration cap without meeting tolerance."""

    def __init__(self, message: str, history: list[float] | None = None):
        self.history = list(history or [])
        super().__init__(message)


class AssemblyError(MuskatError, RuntimeError):
    """The assembled saddle system has a null mode other than constant pressure."""


class CFLViolation(MuskatError, ValueError):
    """Explicit transport step too large for the monotone update."""

    def __init__(self, dt: float, admissible_dt: float):
        self.dt = dt
        self.admissible_dt = admissible_dt
        super().__init__(f"dt={dt:.6g} exceeds admissible dt={admissible_dt:.6g}")


class ScenarioError(MuskatError, ValueError):
    """Malformed scenario text; carries the 1-based line and column when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None, key: str | None = None):
        self.line = line
        self.column = column
        self.key = key
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


class OutputError(MuskatError, OSError):
    """Writing or reading an output file failed."""

    def __init__(self, path, cause: Exception):
        self.path = str(path)
        self.cause = cause
        super().__init__(f"{path}: {cause}")
