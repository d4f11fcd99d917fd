"""Cahn-Hilliard semi-discretization and its per-step linearization.

The semi-discrete system is ``y' = -A (F'(y) + eps^2 A y)`` with the double
well ``F(c) = (1 - c^2)^2 / 4``.  Freezing the Jacobian of ``F'`` at ``y_n``
gives the linear system ``y' = -A_hat y + g_hat`` with

    A_hat = A (J + eps^2 A + s I),   g_hat = A (J y_n + s y_n - F'(y_n)),

where ``J = diag(3 y_n^2 - 1)`` and ``s = 1`` switches on Eyre's convex
splitting (``s = 0`` otherwise).

A variable mobility would replace the leading ``A`` by a frozen
``A_M(y_n)``; that variant is not implemented.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .grid import LaplacianOperator, MatvecCounter, sparse_one_norm

NORM_MODES = ("exact", "bound")


def free_energy(c):
    return 0.25 * (1.0 - c * c) ** 2


def free_energy_prime(c):
    return c * (c * c - 1.0)


def epsilon_m(h: float, m: int) -> float:
    """Interface width parameter spreading the transition over ``m`` cells."""
    if not h > 0:
        raise ValueError(f"grid step must be positive, got {h}")
    if m < 1:
        raise ValueError(f"m must be a positive integer, got {m}")
    return h * m / (2.0 * math.sqrt(2.0) * math.atanh(0.9))


def jacobian_diag(y: np.ndarray) -> np.ndarray:
    """Diagonal of d F'(y) / dy, i.e. ``3 y^2 - 1``."""
    y = np.asarray(y, dtype=float)
    return 3.0 * (y * y) - 1.0


@dataclass(eq=False)
class CahnHilliardProblem:
    A: LaplacianOperator
    epsilon: float
    use_eyre: bool = False
    norm_mode: str = "exact"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.norm_mode not in NORM_MODES:
            raise ValueError(f"norm_mode must be one of {NORM_MODES}, got {self.norm_mode!r}")

    @property
    def size(self) -> int:
        return self.A.size

    @property
    def shift(self) -> float:
        return 1.0 if self.use_eyre else 0.0

    def rhs(self, y: np.ndarray) -> np.ndarray:
        """Full nonlinear right-hand side ``-A (F'(y) + eps^2 A y)``."""
        y = np.asarray(y, dtype=float)
        return -self.A.apply(free_energy_prime(y) + self.epsilon**2 * self.A.apply(y))

    def linearize(self, y_n: np.ndarray) -> "LinearizedSystem":
        return LinearizedSystem(self, np.array(y_n, dtype=float))


def linearize(problem: CahnHilliardProblem, y_n: np.ndarray) -> "LinearizedSystem":
    return problem.linearize(y_n)


class LinearizedSystem:
    """The frozen pair ``(A_hat, g_hat)`` around ``y_ref``.

    ``apply`` costs two sparse products with ``A`` but is tallied as one
    matvec on ``self.counter`` (and as two on the operator's own counter).
    One ``A_hat`` application is the cost unit used everywhere.
    """

    def __init__(self, problem: CahnHilliardProblem, y_ref: np.ndarray):
        if y_ref.shape != (problem.size,):
            raise ValueError(f"state has shape {y_ref.shape}, expected ({problem.size},)")
        self.problem = problem
        self.y_ref = y_ref
        self.y_ref.setflags(write=False)
        self.jac_diag = jacobian_diag(y_ref)
        self.jac_diag.setflags(write=False)
        self.counter = MatvecCounter()
        self._scale = self.jac_diag + problem.shift

    @property
    def size(self) -> int:
        return self.problem.size

    @property
    def matvecs(self) -> int:
        return self.counter.count

    def apply(self, v: np.ndarray) -> np.ndarray:
        """``A_hat @ v``."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.size,):
            raise ValueError(f"expected vector of length {self.size}, got shape {v.shape}")
        self.counter.add()
        self.problem.A.counter.add(2)
        a = self.problem.A.matrix
        return a @ (self._scale * v + self.problem.epsilon**2 * (a @ v))

    __matmul__ = apply

    @cached_property
    def g_hat(self) -> np.ndarray:
        y = self.y_ref
        g = self.problem.A.matrix @ (self._scale * y - free_energy_prime(y))
        g.setflags(write=False)
        return g

    def residual(self, y: np.ndarray) -> np.ndarray:
        """``g_hat - A_hat y`` (one counted matvec)."""
        return self.g_hat - self.apply(y)

    def matrix(self) -> sp.csr_matrix:
        """Explicit sparse ``A_hat``; at most 13 nonzeros per row on a grid."""
        a = self.problem.A
        m = a.matrix @ sp.diags(self._scale) + self.problem.epsilon**2 * a.squared()
        return sp.csr_matrix(m)

    def dense(self) -> np.ndarray:
        return self.matrix().toarray()

    @cached_property
    def one_norm_exact(self) -> float:
        return sparse_one_norm(self.matrix())

    @cached_property
    def one_norm_bound(self) -> float:
        """``||A||_1 (||J + sI||_1 + eps^2 ||A||_1)``; never below the exact norm."""
        a_norm = self.problem.A.one_norm()
        return a_norm * (float(np.max(np.abs(self._scale), initial=0.0)) + self.problem.epsilon**2 * a_norm)

    def one_norm(self) -> float:
        """Spectral upper bound used by LIM, per the problem's ``norm_mode``."""
        if self.problem.norm_mode == "bound":
            return self.one_norm_bound
        return self.one_norm_exact


def apply_A_hat(sys: LinearizedSystem, v: np.ndarray) -> np.ndarray:
    return sys.apply(v)


def one_norm_A_hat(sys: LinearizedSystem) -> float:
    return sys.one_norm_exact


def rhs(problem: CahnHilliardProblem, y: np.ndarray) -> np.ndarray:
    return problem.rhs(y)
