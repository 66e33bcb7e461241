"""Crank-Nicolson operators and reusable sparse LU factorizations.

The reaction term is assembled so that the semi-discrete system matches
``y' - (a + i b) Lap y + p y = f``, i.e.::

    A  = (a + i b) Lap_h - p I
    M- = I - dt/2 A,   M+ = I + dt/2 A

``convention="printed"`` flips the reaction sign (``A = (a+ib) Lap_h + p I``)
for comparison runs; the manufactured-solution tests show that only the
default converges to the PDE.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Grid2D, laplacian_2d

CONVENTIONS = ("pde", "printed")


class SingularOperatorError(ValueError):
    """M- could not be factorized."""


class Factorization:
    """Sparse LU of a square complex matrix, reused for many right-hand sides.

    Backed by SuperLU with COLAMD column ordering and threshold partial
    pivoting (``diag_pivot_thresh=1.0``, i.e. always the largest pivot), which
    is deterministic for a given matrix.  Solves are serialized through a lock
    so one factorization can be shared between threads.
    """

    permc_spec = "COLAMD"
    diag_pivot_thresh = 1.0

    def __init__(self, matrix):
        matrix = sp.csc_matrix(matrix, dtype=np.complex128)
        matrix.sort_indices()
        if matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"matrix must be square, got {matrix.shape}")
        self.shape = matrix.shape
        self._lu = spla.splu(
            matrix,
            permc_spec=self.permc_spec,
            diag_pivot_thresh=self.diag_pivot_thresh,
            options={"SymmetricMode": False},
        )
        self._lock = threading.Lock()

    @property
    def fill(self) -> int:
        """Stored nonzeros of the L and U factors."""
        return int(self._lu.L.nnz + self._lu.U.nnz)

    @property
    def pivot_strategy(self) -> str:
        return f"superlu/{self.permc_spec}/threshold={self.diag_pivot_thresh}"

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.ascontiguousarray(rhs, dtype=np.complex128)
        with self._lock:
            return self._lu.solve(rhs)


@dataclass(frozen=True, eq=False)
class CnOperators:
    """Assembled Crank-Nicolson matrices for constant coefficients."""

    A: sp.csr_matrix
    Mminus: sp.csr_matrix
    Mplus: sp.csr_matrix
    MplusH: sp.csr_matrix
    fact: Factorization
    fact_h: Factorization
    a: float
    b: float
    p: complex
    dt: float
    convention: str = "pde"
    m: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "m", self.A.shape[0])


def _csr(matrix) -> sp.csr_matrix:
    out = sp.csr_matrix(matrix, dtype=np.complex128)
    out.sum_duplicates()
    out.sort_indices()
    return out


def assemble_cn(grid: Grid2D, a: float, b: float, p: complex, convention: str = "pde") -> CnOperators:
    """Build ``A``, ``M-``, ``M+`` and factorize ``M-`` and ``M-^H`` eagerly."""
    if not np.isfinite(a) or a <= 0:
        raise ValueError(f"diffusion coefficient a must be positive, got {a}")
    if not np.isfinite(b) or not np.isfinite(complex(p)):
        raise ValueError("coefficients b and p must be finite")
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}, expected one of {CONVENTIONS}")
    p = complex(p)
    sign = -1.0 if convention == "pde" else 1.0
    lap = laplacian_2d(grid)
    eye = sp.identity(grid.m, dtype=np.complex128, format="csr")
    A = _csr(complex(a, b) * lap + sign * p * eye)
    half = 0.5 * grid.dt
    Mminus = _csr(eye - half * A)
    Mplus = _csr(eye + half * A)
    MplusH = _csr(Mplus.conj().T)
    try:
        fact = Factorization(Mminus)
        fact_h = Factorization(Mminus.conj().T)
    except RuntimeError as exc:
        raise SingularOperatorError(
            f"M- is singular for a={a}, b={b}, p={p}, dt={grid.dt}: {exc}"
        ) from exc
    return CnOperators(A, Mminus, Mplus, MplusH, fact, fact_h, float(a), float(b), p, grid.dt, convention)


def _checked_rhs(F: Factorization, rhs) -> np.ndarray:
    rhs = np.asarray(rhs)
    if rhs.shape != (F.shape[0],):
        raise ValueError(f"rhs must have length {F.shape[0]}, got shape {rhs.shape}")
    if not np.all(np.isfinite(rhs)):
        bad = int(np.flatnonzero(~np.isfinite(rhs))[0])
        raise ValueError(f"rhs has a non-finite entry at index {bad}")
    return rhs


def solve(F: Factorization, rhs) -> np.ndarray:
    """Solve ``M- x = rhs`` with a cached factorization."""
    return F.solve(_checked_rhs(F, rhs))


def solve_hermitian(F_h: Factorization, rhs) -> np.ndarray:
    """Solve ``M-^H x = rhs``; ``F_h`` is ``ops.fact_h``."""
    return F_h.solve(_checked_rhs(F_h, rhs))


def residual_norm(matrix, x, rhs) -> float:
    return float(np.linalg.norm(matrix @ x - rhs))


# Dense oracle ----------------------------------------------------------------


def dense_solve(matrix, rhs) -> np.ndarray:
    """LAPACK LU with partial pivoting on the densified matrix."""
    dense = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix)
    lu_piv = sla.lu_factor(dense.astype(np.complex128))
    return sla.lu_solve(lu_piv, np.asarray(rhs, dtype=np.complex128))


def dense_propagator(ops: CnOperators) -> np.ndarray:
    """Dense one-step map ``M-^{-1} M+``."""
    Mm = ops.Mminus.toarray()
    Mp = ops.Mplus.toarray()
    return sla.lu_solve(sla.lu_factor(Mm), Mp)
