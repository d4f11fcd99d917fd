"""Local iteration modified (LIM) time step.

The linearized implicit Euler solve ``(I + tau A_hat) y = y_n + tau g_hat``
is replaced by ``2p - 1`` explicit Euler-like sweeps whose parameters are
Chebyshev roots on ``[0, lambda_max]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .problem import LinearizedSystem


class LIMBlowUp(FloatingPointError):
    """Raised when a LIM iterate stops being finite."""


@dataclass(frozen=True)
class ChebyshevSchedule:
    p: int
    lambda_max: float
    betas: np.ndarray
    a_coeffs: np.ndarray

    @property
    def matvecs(self) -> int:
        return 2 * self.p - 1


def chebyshev_order(tau: float, lambda_max: float) -> int:
    """Polynomial order ``ceil((pi/4) / (pi/2 - arctan sqrt(tau lambda_max)))``.

    Grows like ``(pi/4) sqrt(tau lambda_max)``.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if lambda_max < 0:
        raise ValueError(f"lambda_max must be nonnegative, got {lambda_max}")
    gap = math.pi / 2 - math.atan(math.sqrt(tau * lambda_max))
    if gap <= 0.0:
        raise OverflowError(f"tau * lambda_max = {tau * lambda_max:g} is too large for a finite order")
    return max(1, math.ceil((math.pi / 4) / gap))


def build_schedule(tau: float, lambda_max: float) -> ChebyshevSchedule:
    p = chebyshev_order(tau, lambda_max)
    i = np.arange(1, p + 1)
    betas = np.cos(np.pi * (2 * i - 1) / (2 * p))
    z1 = betas[0]
    a = lambda_max / (1.0 + z1) * (z1 - betas)
    # z1 - betas[0] is exactly zero; clip round-off on the rest
    a[0] = 0.0
    np.maximum(a, 0.0, out=a)
    return ChebyshevSchedule(p=p, lambda_max=float(lambda_max), betas=betas, a_coeffs=a)


def _sweep(sys: LinearizedSystem, y_n, y_prev, tau, a):
    g = sys.g_hat
    return (y_n + tau * a * y_prev + tau * (g - sys.apply(y_prev))) * (1.0 / (1.0 + tau * a))


def lim_step(
    sys: LinearizedSystem,
    y_n: np.ndarray,
    tau: float,
    schedule: ChebyshevSchedule | None = None,
) -> np.ndarray:
    """Advance ``y' = -A_hat y + g_hat`` from ``y_n`` over ``tau``.

    Runs the Chebyshev parameters forward (``m = 1..p``) and then once more
    from ``m = 2``, i.e. exactly ``2p - 1`` applications of ``A_hat``.
    With the parameters in natural order, round-off amplification becomes
    visible once ``p`` exceeds about 50 (``tau * lambda_max`` near 5000).

    Parameters
    ----------
    sys : LinearizedSystem
        Frozen operator and source term.
    y_n : ndarray
        State at the start of the step.
    tau : float
        Step size.
    schedule : ChebyshevSchedule, optional
        Precomputed parameters; by default built from ``sys.one_norm()``.

    Raises
    ------
    LIMBlowUp
        If an iterate has non-finite entries.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if schedule is None:
        schedule = build_schedule(tau, sys.one_norm())
    y_n = np.asarray(y_n, dtype=float)
    y = y_n
    sweeps = list(schedule.a_coeffs) + list(schedule.a_coeffs[1:])
    for k, a in enumerate(sweeps, start=1):
        # overflow is caught by the finiteness check below
        with np.errstate(over="ignore", invalid="ignore"):
            y = _sweep(sys, y_n, y, tau, a)
        if not np.all(np.isfinite(y)):
            raise LIMBlowUp(
                f"non-finite LIM iterate at sweep {k} of {len(sweeps)} "
                f"(p={schedule.p}, tau={tau:g}, lambda_max={schedule.lambda_max:g})"
            )
    return y
