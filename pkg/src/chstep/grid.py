"""Uniform 2D grids and the cell-centered Neumann Laplacian.

The operator stored here is ``A`` with ``-A`` the five-point Laplacian, so
``A`` is symmetric positive semidefinite and ``A @ ones == 0``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class GridSpec:
    """Cell-centered ``nx`` by ``ny`` grid on ``(0, Lx) x (0, Ly)``."""

    nx: int
    ny: int
    Lx: float = 64.0
    Ly: float = 64.0

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid needs positive cell counts, got {self.nx}x{self.ny}")
        if not (self.Lx > 0 and self.Ly > 0):
            raise ValueError("domain lengths must be positive")

    @property
    def hx(self) -> float:
        return self.Lx / self.nx

    @property
    def hy(self) -> float:
        return self.Ly / self.ny

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates ``x_i = Lx (i - 1/2) / nx`` (and likewise for y)."""
        x = self.Lx * (np.arange(1, self.nx + 1) - 0.5) / self.nx
        y = self.Ly * (np.arange(1, self.ny + 1) - 0.5) / self.ny
        return x, y

    def to_grid(self, v: np.ndarray) -> np.ndarray:
        """Reshape a state vector to ``(ny, nx)``; row-major, x fastest."""
        return np.asarray(v).reshape(self.ny, self.nx)


class MatvecCounter:
    """Thread-safe tally of operator applications."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def add(self, k: int = 1) -> None:
        with self._lock:
            self._count += k

    @property
    def count(self) -> int:
        return self._count

    def reset(self) -> None:
        with self._lock:
            self._count = 0


@dataclass(eq=False)
class LaplacianOperator:
    """Symmetric PSD matrix ``A`` held in CSR form, with an application counter.

    Anything symmetric PSD may be wrapped (small random SPD test matrices
    included); :func:`build_laplacian` produces the Neumann grid operator.
    """

    matrix: sp.csr_matrix
    spec: GridSpec | None = None
    counter: MatvecCounter = field(default_factory=MatvecCounter, repr=False)

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=float)
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"operator must be square, got {m.shape}")
        m.sort_indices()
        self.matrix = m
        self._one_norm = None
        self._squared = None

    @classmethod
    def from_matrix(cls, matrix) -> "LaplacianOperator":
        return cls(sp.csr_matrix(matrix, dtype=float))

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def matvecs(self) -> int:
        return self.counter.count

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.size,):
            raise ValueError(f"expected vector of length {self.size}, got shape {v.shape}")
        self.counter.add()
        return self.matrix @ v

    __matmul__ = apply

    def one_norm(self) -> float:
        """Maximum absolute column sum."""
        if self._one_norm is None:
            self._one_norm = sparse_one_norm(self.matrix)
        return self._one_norm

    def squared(self) -> sp.csr_matrix:
        """``A @ A`` as a sparse matrix, built once."""
        if self._squared is None:
            sq = (self.matrix @ self.matrix).tocsr()
            sq.sort_indices()
            self._squared = sq
        return self._squared

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def sparse_one_norm(m) -> float:
    if m.shape[0] == 0:
        return 0.0
    m = sp.csc_matrix(m)
    if m.nnz == 0:
        return 0.0
    colsums = np.asarray(abs(m).sum(axis=0)).ravel()
    return float(colsums.max())


def neumann_1d(n: int, h: float) -> sp.csr_matrix:
    """1D Neumann operator ``tridiag(-1, 2, -1) / h**2`` with reflected ends."""
    if n == 1:
        return sp.csr_matrix((1, 1))
    main = np.full(n, 2.0)
    main[0] = main[-1] = 1.0
    off = -np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / h**2


def build_laplacian(spec: GridSpec) -> LaplacianOperator:
    """Five-point Neumann operator on ``spec`` (ghost value = boundary value).

    Index ordering is ``j * nx + i`` (x varies fastest).
    """
    if spec.nx < 2 or spec.ny < 2:
        raise ValueError(f"need nx >= 2 and ny >= 2, got {spec.nx}x{spec.ny}")
    tx = neumann_1d(spec.nx, spec.hx)
    ty = neumann_1d(spec.ny, spec.hy)
    a = sp.kron(sp.identity(spec.ny), tx) + sp.kron(ty, sp.identity(spec.nx))
    return LaplacianOperator(sp.csr_matrix(a), spec=spec)
