"""Numeric substrate: sparse/dense matrices, block vectors, the unitary DFT and dense oracles."""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Literal, TypeVar, overload

import numpy as np
import numpy.typing as npt
import scipy.linalg as la
import scipy.sparse as sp

from .config import settings
from .errors import DimensionMismatch, EigenNonConvergence, OracleCapExceeded, SingularMatrix

log = logging.getLogger(__name__)

Array = npt.NDArray[np.float64]
ComplexArray = npt.NDArray[np.complex128]
AnyArray = npt.NDArray[np.inexact]

T = TypeVar("T")
R = TypeVar("R")


class Definiteness(str, Enum):
    NEGATIVE_SEMIDEFINITE = "negative_semidefinite"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class MatrixFlags:
    symmetric: bool = False
    definiteness: Definiteness = Definiteness.UNKNOWN


@dataclass(frozen=True)
class SparseMatrix:
    """Immutable CSR matrix with symmetry and definiteness metadata.

    Complex values are stored interleaved (numpy ``complex128``); real matrices
    never allocate imaginary parts.
    """

    csr: sp.csr_matrix
    flags: MatrixFlags = field(default_factory=MatrixFlags)

    def __post_init__(self) -> None:
        csr = sp.csr_matrix(self.csr, copy=True)
        csr.sum_duplicates()
        csr.sort_indices()
        if csr.shape[0] and np.any(np.diff(csr.indptr) < 0):
            raise ValueError("row offsets must be nondecreasing")
        if self.flags.symmetric and (csr != csr.T).nnz != 0:
            raise ValueError("matrix flagged symmetric but A != A^T")
        object.__setattr__(self, "csr", csr)

    @classmethod
    def from_any(
        cls,
        mat: sp.spmatrix | AnyArray,
        *,
        symmetric: bool | None = None,
        definiteness: Definiteness = Definiteness.UNKNOWN,
    ) -> SparseMatrix:
        """Wrap a dense or scipy sparse matrix; symmetry is detected when not given."""
        csr = sp.csr_matrix(mat)
        if symmetric is None:
            symmetric = csr.shape[0] == csr.shape[1] and (csr != csr.T).nnz == 0
        return cls(csr, MatrixFlags(symmetric=symmetric, definiteness=definiteness))

    @classmethod
    def identity(cls, n: int) -> SparseMatrix:
        return cls(sp.identity(n, format="csr"), MatrixFlags(symmetric=True))

    @classmethod
    def zeros(cls, nrows: int, ncols: int | None = None) -> SparseMatrix:
        ncols = nrows if ncols is None else ncols
        return cls(
            sp.csr_matrix((nrows, ncols)),
            MatrixFlags(symmetric=nrows == ncols, definiteness=Definiteness.NEGATIVE_SEMIDEFINITE),
        )

    @property
    def nrows(self) -> int:
        return int(self.csr.shape[0])

    @property
    def ncols(self) -> int:
        return int(self.csr.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return self.nrows, self.ncols

    @property
    def nnz(self) -> int:
        return int(self.csr.nnz)

    @property
    def row_offsets(self) -> npt.NDArray[np.int32]:
        return self.csr.indptr

    @property
    def col_indices(self) -> npt.NDArray[np.int32]:
        return self.csr.indices

    @property
    def values(self) -> AnyArray:
        return self.csr.data

    @property
    def is_complex(self) -> bool:
        return bool(np.iscomplexobj(self.csr.data))

    def scaled(self, factor: float) -> SparseMatrix:
        """Return ``factor * self``; a positive factor keeps the definiteness flag."""
        definiteness = self.flags.definiteness if factor >= 0 else Definiteness.UNKNOWN
        return SparseMatrix(
            self.csr * factor, MatrixFlags(self.flags.symmetric, definiteness)
        )

    def toarray(self) -> AnyArray:
        return self.csr.toarray()

    def __matmul__(self, x: AnyArray) -> AnyArray:
        return spmv(self, x)


@dataclass(frozen=True)
class BlockVector:
    """A vector of ``m_blocks`` contiguous blocks of length ``block_len``."""

    data: AnyArray
    m_blocks: int
    block_len: int

    def __post_init__(self) -> None:
        data = np.array(self.data, copy=True).reshape(-1)
        if data.size != self.m_blocks * self.block_len:
            raise DimensionMismatch(
                f"block vector needs {self.m_blocks}x{self.block_len}={self.m_blocks * self.block_len} "
                f"entries, got {data.size}"
            )
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @classmethod
    def from_blocks(cls, blocks: AnyArray) -> BlockVector:
        blocks = np.asarray(blocks)
        m, n = blocks.shape
        return cls(blocks.reshape(-1), m, n)

    @classmethod
    def zeros(cls, m_blocks: int, block_len: int, dtype: npt.DTypeLike = np.float64) -> BlockVector:
        return cls(np.zeros(m_blocks * block_len, dtype=dtype), m_blocks, block_len)

    def block(self, k: int) -> AnyArray:
        """Block ``k`` (0-based), occupying ``[k*N, (k+1)*N)``."""
        if not 0 <= k < self.m_blocks:
            raise IndexError(f"block {k} out of range for {self.m_blocks} blocks")
        return self.data[k * self.block_len : (k + 1) * self.block_len]

    def as_matrix(self) -> AnyArray:
        """Read-only ``(M, N)`` view, one row per block."""
        return self.data.reshape(self.m_blocks, self.block_len)

    def __len__(self) -> int:
        return int(self.data.size)


class DftDirection(str, Enum):
    FORWARD = "forward"
    INVERSE = "inverse"


@dataclass(frozen=True)
class DftPlan:
    """Unitary DFT of a fixed length: ``y_j = M^{-1/2} sum_k w^{jk} x_k`` with ``w = exp(-2 pi i / M)``."""

    length: int
    direction: DftDirection = DftDirection.FORWARD
    normalization: Literal["unitary"] = "unitary"

    def __post_init__(self) -> None:
        if self.length < 1:
            raise ValueError("DFT length must be positive")

    def inverse(self) -> DftPlan:
        flipped = DftDirection.INVERSE if self.direction is DftDirection.FORWARD else DftDirection.FORWARD
        return DftPlan(self.length, flipped)


def spmv(a: SparseMatrix, x: AnyArray) -> AnyArray:
    """Sparse matrix-vector (or matrix-block) product ``A @ x``."""
    x = np.asarray(x)
    if x.shape[0] != a.ncols:
        raise DimensionMismatch(f"matrix has {a.ncols} columns, vector has {x.shape[0]} rows")
    return np.asarray(a.csr @ x)


def dft_apply(plan: DftPlan, x: AnyArray, axis: int = 0) -> ComplexArray:
    """Apply the unitary DFT along ``axis`` (the time index for block data)."""
    x = np.asarray(x)
    if x.shape[axis] != plan.length:
        raise DimensionMismatch(f"DFT plan has length {plan.length}, input has {x.shape[axis]}")
    if plan.direction is DftDirection.FORWARD:
        return np.fft.fft(x, axis=axis, norm="ortho")
    return np.fft.ifft(x, axis=axis, norm="ortho")


def _check_cap(n: int, cap: int | None) -> None:
    limit = settings.oracle_cap if cap is None else cap
    if n > limit:
        raise OracleCapExceeded(n, limit)


@overload
def dense_eig(a: AnyArray, *, vectors: Literal[False] = ..., cap: int | None = ...) -> ComplexArray: ...


@overload
def dense_eig(
    a: AnyArray, *, vectors: Literal[True], cap: int | None = ...
) -> tuple[ComplexArray, ComplexArray]: ...


def dense_eig(
    a: AnyArray, *, vectors: bool = False, cap: int | None = None
) -> ComplexArray | tuple[ComplexArray, ComplexArray]:
    """Eigenvalues of a dense square matrix sorted by (real, imag).

    With ``vectors=True`` the eigenvector matrix is returned with its columns
    in the same order.
    """
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"dense_eig needs a square matrix, got shape {a.shape}")
    _check_cap(a.shape[0], cap)
    try:
        if vectors:
            w, v = la.eig(a, right=True)
        else:
            w = la.eigvals(a)
    except la.LinAlgError as exc:
        raise EigenNonConvergence(str(exc)) from exc
    w = np.asarray(w, dtype=np.complex128)
    order = np.lexsort((w.imag, w.real))
    if vectors:
        return w[order], np.asarray(v, dtype=np.complex128)[:, order]
    return w[order]


def dense_solve(a: AnyArray, b: AnyArray, *, cap: int | None = None) -> AnyArray:
    """Solve ``A x = b`` by LU with partial pivoting; singular pivots raise SingularMatrix."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"dense_solve needs a square matrix, got shape {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise DimensionMismatch(f"matrix has {a.shape[0]} rows, right-hand side has {b.shape[0]}")
    _check_cap(a.shape[0], cap)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", la.LinAlgWarning)
        lu, piv = la.lu_factor(a)
    pivots = np.abs(np.diag(lu))
    scale = max(float(np.max(np.abs(lu))) if lu.size else 0.0, np.finfo(float).tiny)
    tiny = pivots <= a.shape[0] * np.finfo(float).eps * scale
    if np.any(tiny):
        raise SingularMatrix(int(np.argmax(tiny)))
    return np.asarray(la.lu_solve((lu, piv), b))


def densify(apply: Callable[[AnyArray], AnyArray], n: int, dtype: npt.DTypeLike = np.float64) -> AnyArray:
    """Dense matrix of a linear operator, built by applying it to the identity."""
    return np.asarray(apply(np.eye(n, dtype=dtype)))


def estimate_norm2(a: SparseMatrix, *, tol: float = 1e-6, max_iter: int = 500, seed: int = 0) -> float:
    """Power iteration on ``A^T A`` for the spectral norm of ``A``."""
    if a.nnz == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(a.ncols)
    x /= np.linalg.norm(x)
    sigma = 0.0
    for it in range(max_iter):
        y = a.csr.T @ (a.csr @ x)
        norm_y = float(np.linalg.norm(y))
        if norm_y == 0.0:
            return 0.0
        new_sigma = np.sqrt(norm_y)
        x = y / norm_y
        if abs(new_sigma - sigma) <= tol * new_sigma:
            log.debug("norm estimate converged after %d iterations", it + 1)
            return float(new_sigma)
        sigma = new_sigma
    log.debug("norm estimate stopped at max_iter=%d", max_iter)
    return float(sigma)


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """``list(map(fn, items))``, spread over a thread pool when ``threads > 1``."""
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
