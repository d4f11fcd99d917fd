"""Discrete energy, mass deviation and error norms reported by the runs."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .grid import GridSpec
from .problem import free_energy

log = logging.getLogger(__name__)


def discrete_energy(spec: GridSpec, epsilon: float, y) -> float:
    """``hx hy sum F(y) + eps^2/2 (sum dx^2 + sum dy^2)`` over grid differences.

    Differences across the boundary vanish under the Neumann reflection, so
    only interior neighbor pairs contribute to the gradient sums.
    """
    u = spec.to_grid(np.asarray(y, dtype=float))
    bulk = spec.hx * spec.hy * float(np.sum(free_energy(u)))
    dx = np.diff(u, axis=1)
    dy = np.diff(u, axis=0)
    return bulk + 0.5 * epsilon**2 * float(np.sum(dx * dx) + np.sum(dy * dy))


def mass_deviation(y_n, y_0, return_flag: bool = False):
    """``|m_n / m_0 - 1|`` with ``m = sum(y)``.

    If ``m_0 == 0`` the absolute deviation ``|m_n - m_0|`` is returned; with
    ``return_flag=True`` the result is ``(value, is_absolute)``.
    """
    m_n = float(np.sum(y_n))
    m_0 = float(np.sum(y_0))
    if m_0 == 0.0:
        value, absolute = abs(m_n - m_0), True
        if not return_flag:
            log.warning("initial mass is zero; mass deviation is absolute")
    else:
        value, absolute = abs(m_n / m_0 - 1.0), False
    return (value, absolute) if return_flag else value


def relative_error(y, y_ref) -> float:
    """Euclidean ``||y - y_ref|| / ||y_ref||``."""
    y_ref = np.asarray(y_ref, dtype=float)
    ref_norm = np.linalg.norm(y_ref)
    if ref_norm == 0.0:
        raise ZeroDivisionError("reference solution has zero norm")
    return float(np.linalg.norm(np.asarray(y, dtype=float) - y_ref) / ref_norm)


@dataclass
class DiagnosticSeries:
    times: np.ndarray
    energy: np.ndarray
    mass_deviation: np.ndarray
    tau_history: np.ndarray
    matvec_cumulative: np.ndarray

    @classmethod
    def from_records(cls, records) -> "DiagnosticSeries":
        return cls(
            times=np.array([r.t for r in records]),
            energy=np.array([r.energy for r in records]),
            mass_deviation=np.array([r.mass_dev for r in records]),
            tau_history=np.array([r.tau for r in records]),
            matvec_cumulative=np.cumsum([r.matvecs for r in records]),
        )

    def energy_increases(self, t_after: float = 0.0) -> np.ndarray:
        """Per-step energy increments for steps starting at or after ``t_after``."""
        inc = np.diff(self.energy)
        return inc[self.times[:-1] >= t_after]
