"""Exception hierarchy shared by every pintsolve module."""

from __future__ import annotations

from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from .krylov import GmresReport


class PintError(Exception):
    """Base class for all pintsolve errors."""


class DimensionMismatch(PintError, ValueError):
    """Operand shapes do not agree."""


class GridError(PintError, ValueError):
    """A grid is non-monotone, too coarse or otherwise unusable."""


class ParameterError(PintError, ValueError):
    """A model or solver parameter is outside its admissible range."""


class ConfigError(PintError, ValueError):
    """A run configuration or batch file could not be parsed."""


class PresetNotFound(PintError, LookupError):
    """No preset with the requested name or path exists."""


class OracleCapExceeded(PintError):
    """A dense oracle was asked to work on a matrix larger than the cap."""

    def __init__(self, size: int, cap: int) -> None:
        super().__init__(f"dense oracle size {size} exceeds the cap of {cap}")
        self.size = size
        self.cap = cap


class EigenNonConvergence(PintError, ArithmeticError):
    """The dense eigenvalue iteration did not converge."""


class SingularMatrix(PintError, ArithmeticError):
    """A matrix is singular to working precision."""

    def __init__(self, pivot: int, message: str | None = None) -> None:
        super().__init__(message or f"matrix is singular to working precision at pivot {pivot}")
        self.pivot = pivot


class SingularPreconditioner(PintError, ArithmeticError):
    """A shifted block of the α-circulant preconditioner cannot be factorized.

    ``k`` is 1-based, matching the indexing of the eigenvalue tables.
    """

    def __init__(self, k: int, lambda1: complex, lambda2: complex) -> None:
        super().__init__(
            f"preconditioner block k={k} is singular "
            f"(lambda1={lambda1:.3g}, lambda2={lambda2:.3g})"
        )
        self.k = k
        self.lambda1 = lambda1
        self.lambda2 = lambda2


class ImaginaryResidue(PintError, ArithmeticError):
    """The preconditioner output kept a non-negligible imaginary part."""

    def __init__(self, ratio: float, tol: float) -> None:
        super().__init__(
            f"imaginary residue {ratio:.3e} exceeds {tol:.1e}; alpha is probably too small"
        )
        self.ratio = ratio
        self.tol = tol


class NoConvergence(PintError):
    """GMRES exhausted its iteration budget."""

    def __init__(self, report: "GmresReport", solution: Any = None) -> None:
        super().__init__(
            f"GMRES did not converge in {report.iterations} iterations "
            f"(relative residual {report.final_relres:.3e}, tol {report.tol:.1e})"
        )
        self.report = report
        self.solution = solution


class TheoremPreconditionViolated(PintError, ValueError):
    """Inputs fall outside the hypotheses of a bound being checked."""
