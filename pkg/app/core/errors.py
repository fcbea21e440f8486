"""
Exception hierarchy shared by the engine, the simulator and the CLI.

Every error carries a short machine code (logged) and the process exit
code the CLI returns for it: 1 for usage/config problems, 2 for
runtime/data problems.
"""

from pathlib import Path


class EdgeCodeError(Exception):
    """Base class for all expected failures."""

    code = "error"
    exit_code = 2

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class UsageError(EdgeCodeError):
    code = "usage"
    exit_code = 1


class ConfigError(EdgeCodeError):
    """Invalid SimConfig file; `line` is 1-based when known."""

    code = "config_invalid"
    exit_code = 1

    def __init__(self, message: str, path: Path | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


class DomainError(EdgeCodeError, ValueError):
    """Argument outside the mathematical domain of an operation."""

    code = "domain"


class InfeasibleError(EdgeCodeError):
    """Requested return cannot be reached by any allocation."""

    code = "infeasible"


class DatasetError(EdgeCodeError):
    code = "dataset"

    def __init__(self, message: str, path: Path | str, offset: int | None = None):
        detail = f"{path}: {message}"
        if offset is not None:
            detail += f" (at byte offset {offset})"
        super().__init__(detail)
        self.path = Path(path)
        self.offset = offset


class TrainingError(EdgeCodeError):
    code = "training_fault"
