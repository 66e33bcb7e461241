"""Uniform tensor grids, Dirichlet finite-difference Laplacians and the
discrete inner products shared by the solvers.

Interior nodes ``(i, j)`` with ``1 <= i <= Nx-1`` and ``1 <= j <= Ny-1`` are
stored lexicographically with ``x`` varying fastest::

    k = (j - 1) * (Nx - 1) + (i - 1)

so a field reshaped to ``(Ny-1, Nx-1)`` has rows of constant ``y``.  The
Kronecker factor order in :func:`laplacian_2d` depends on this convention.
"""

from __future__ import annotations

from dataclasses import dataclass
from numbers import Integral

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Grid2D:
    """Space-time grid over ``(0, Lx) x (0, Ly) x (0, T)``."""

    Lx: float
    Ly: float
    T: float
    Nx: int
    Ny: int
    Nt: int

    def __post_init__(self):
        for name in ("Nx", "Ny", "Nt"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, Integral):
                raise TypeError(f"{name} must be an integer, got {value!r}")
        for name in ("Lx", "Ly", "T"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        if self.Nx < 2 or self.Ny < 2:
            raise ValueError(
                f"Nx and Ny must be >= 2 to leave interior nodes, got Nx={self.Nx}, Ny={self.Ny}"
            )
        if self.Nt < 1:
            raise ValueError(f"Nt must be >= 1, got {self.Nt}")

    @property
    def dx(self) -> float:
        return self.Lx / self.Nx

    @property
    def dy(self) -> float:
        return self.Ly / self.Ny

    @property
    def dt(self) -> float:
        return self.T / self.Nt

    @property
    def nx(self) -> int:
        """Interior node count along x."""
        return self.Nx - 1

    @property
    def ny(self) -> int:
        return self.Ny - 1

    @property
    def m(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    def index(self, i, j):
        """Flat index of interior node ``(i, j)`` (1-based node labels)."""
        i = np.asarray(i)
        j = np.asarray(j)
        if np.any((i < 1) | (i > self.nx) | (j < 1) | (j > self.ny)):
            raise IndexError(f"node ({i}, {j}) is not an interior node")
        k = (j - 1) * self.nx + (i - 1)
        return int(k) if k.ndim == 0 else k

    def node(self, k):
        """Inverse of :meth:`index`; returns ``(i, j)``."""
        k = np.asarray(k)
        if np.any((k < 0) | (k >= self.m)):
            raise IndexError(f"flat index {k} out of range for m={self.m}")
        j, i = np.divmod(k, self.nx)
        if k.ndim == 0:
            return int(i) + 1, int(j) + 1
        return i + 1, j + 1

    @property
    def x(self) -> np.ndarray:
        """Interior x coordinates ``x_i = i dx``."""
        return self.dx * np.arange(1, self.Nx)

    @property
    def y(self) -> np.ndarray:
        return self.dy * np.arange(1, self.Ny)

    @property
    def times(self) -> np.ndarray:
        """All time levels ``t^n = n dt`` for ``n = 0..Nt``."""
        return self.dt * np.arange(self.Nt + 1)

    def coordinates(self):
        """Flattened ``(X, Y)`` of the interior nodes in storage order."""
        X, Y = np.meshgrid(self.x, self.y, indexing="xy")
        return X.ravel(), Y.ravel()

    def sample(self, func, *args) -> np.ndarray:
        """Evaluate ``func(X, Y, *args)`` at interior nodes as a complex field."""
        X, Y = self.coordinates()
        values = np.broadcast_to(func(X, Y, *args), (self.m,))
        return np.array(values, dtype=np.complex128)

    def refined(self, factor: int = 2) -> "Grid2D":
        """Same domain with the spatial cell counts multiplied by ``factor``."""
        return Grid2D(self.Lx, self.Ly, self.T, self.Nx * factor, self.Ny * factor, self.Nt)


def build_grid(Lx, Ly, T, Nx, Ny, Nt) -> Grid2D:
    return Grid2D(float(Lx), float(Ly), float(T), Nx, Ny, Nt)


def laplacian_1d(N: int, h: float) -> sp.csr_matrix:
    """Dirichlet second-difference matrix ``tridiag(1, -2, 1) / h**2`` of
    size ``N - 1``."""
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    if not h > 0:
        raise ValueError(f"h must be positive, got {h}")
    n = N - 1
    main = np.full(n, -2.0 / h**2)
    off = np.full(n - 1, 1.0 / h**2)
    L = sp.diags([off, main, off], [-1, 0, 1], shape=(n, n), format="csr")
    L.sort_indices()
    return L


def laplacian_2d(grid: Grid2D) -> sp.csr_matrix:
    """Five-point Dirichlet Laplacian ``I_y (x) L_x + L_y (x) I_x``."""
    Lx = laplacian_1d(grid.Nx, grid.dx)
    Ly = laplacian_1d(grid.Ny, grid.dy)
    L = sp.kron(sp.identity(grid.ny), Lx) + sp.kron(Ly, sp.identity(grid.nx))
    L = sp.csr_matrix(L)
    L.sum_duplicates()
    L.eliminate_zeros()
    L.sort_indices()
    return L


def _check_pair(x, y):
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def pair_h(grid: Grid2D, x, y) -> complex:
    """Sesquilinear form ``sum(conj(x) * y) dx dy`` (no real part taken)."""
    x, y = _check_pair(x, y)
    if x.shape != (grid.m,):
        raise ValueError(f"expected fields of length {grid.m}, got shape {x.shape}")
    return complex(np.vdot(x, y)) * grid.cell_area


def inner_h(grid: Grid2D, x, y) -> float:
    """Real mass-lumped inner product ``Re(x^* y) dx dy``."""
    return pair_h(grid, x, y).real


def norm_h(grid: Grid2D, x) -> float:
    x = np.asarray(x)
    if x.shape != (grid.m,):
        raise ValueError(f"expected a field of length {grid.m}, got shape {x.shape}")
    return float(np.sqrt(np.vdot(x, x).real * grid.cell_area))


def _check_levels(grid: Grid2D, X):
    if X.shape != (grid.Nt, grid.m):
        raise ValueError(f"expected space-time field of shape {(grid.Nt, grid.m)}, got {X.shape}")


def pair_ht(grid: Grid2D, X, Y) -> complex:
    """Complex space-time pairing, left-endpoint rectangle rule in time."""
    X, Y = _check_pair(X, Y)
    _check_levels(grid, X)
    return complex(np.vdot(X, Y)) * grid.cell_area * grid.dt


def inner_ht(grid: Grid2D, X, Y) -> float:
    """``sum_n <X^n, Y^n>_h dt`` over ``n = 0..Nt-1``."""
    return pair_ht(grid, X, Y).real


def norm_ht(grid: Grid2D, X) -> float:
    X = np.asarray(X)
    _check_levels(grid, X)
    return float(np.sqrt(np.vdot(X, X).real * grid.cell_area * grid.dt))
