"""Shared exception types.

Exit-code mapping for the command line interface lives in ``cli``:
validation failures exit 2, numerical failures exit 3, I/O failures exit 4.
"""

from __future__ import annotations


class GeotradeError(Exception):
    """Base class for package errors."""


class ValidationError(GeotradeError):
    """Malformed, inconsistent, or out-of-contract inputs."""


class ParseError(ValidationError):
    """Input stream failed row/field validation.

    Carries every rejected row so callers can report more than the first
    problem.  ``errors`` is a list of ``(line, field, message)`` tuples;
    ``line`` is 1-based and counts physical rows including the header.
    """

    def __init__(self, errors: list[tuple[int, str, str]]):
        self.errors = list(errors)
        first = self.errors[0]
        more = f" (+{len(self.errors) - 1} more)" if len(self.errors) > 1 else ""
        super().__init__(f"line {first[0]}, field {first[1]!r}: {first[2]}{more}")


class RankDeficiencyError(ValidationError):
    """Design matrix is rank deficient; names the offending column."""

    def __init__(self, column: str):
        self.column = column
        super().__init__(f"design matrix is rank deficient: column {column!r} is collinear")


class NumericalError(GeotradeError):
    """A numerical routine failed to reach its advertised accuracy."""


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration cap before converging."""

    def __init__(self, what: str, iterations: int, residual: float):
        self.what = what
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"{what} did not converge after {iterations} iterations (residual {residual:.3e})"
        )
