"""Arnoldi evaluation of the exponential Euler update with residual control.

For the frozen system ``y' = -A_hat y + g_hat`` the exact solution is

    y(t_n + t) = y_n + t phi(-t A_hat) (g_hat - A_hat y_n),
    phi(z) = (exp(z) - 1) / z.

The Krylov approximation ``y_n + V_m (beta t phi(-t H_m) e_1)`` has a residual
whose norm, relative to ``beta``, is ``h_{m+1,m} t |e_m^T phi(-t H_m) e_1|``.
That quantity does not decrease in ``t``, so when the basis is full the step
is shortened to the largest ``t`` still meeting the tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .problem import LinearizedSystem

BISECTION_STEPS = 40
SCAN_POINTS = 1000
BREAKDOWN_RTOL = 1e-14
MAX_RESTARTS = 100_000


class KrylovStepFailure(RuntimeError):
    """No positive step size meets the residual tolerance."""


def phi_dense(M: np.ndarray) -> np.ndarray:
    """``phi(M)`` for a small dense matrix.

    Uses ``expm([[M, I], [0, 0]])``, whose upper-right block is ``phi(M)``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    k = M.shape[0]
    if M.shape != (k, k):
        raise ValueError(f"phi_dense needs a square matrix, got {M.shape}")
    if k == 0:
        return np.zeros((0, 0))
    aug = np.zeros((2 * k, 2 * k))
    aug[:k, :k] = M
    aug[:k, k:] = np.eye(k)
    return sla.expm(aug)[:k, k:]


def phi_times_e1(H: np.ndarray, s: float) -> np.ndarray:
    """``s * phi(-s H) e_1`` from one ``(j+1) x (j+1)`` exponential."""
    j = H.shape[0]
    aug = np.zeros((j + 1, j + 1))
    aug[:j, :j] = -s * H
    aug[0, j] = s
    return sla.expm(aug)[:j, j]


class KrylovDecomposition:
    """Arnoldi basis and Hessenberg matrix, grown one column at a time.

    ``basis`` holds ``v_1 .. v_{m+1}`` as rows (so ``V = basis[:m+1].T``) and
    ``H`` is stored at full ``(m_max + 1) x m_max`` size.
    """

    def __init__(self, r0: np.ndarray, m_max: int, breakdown_tol: float = 0.0):
        if m_max < 1:
            raise ValueError(f"m_max must be at least 1, got {m_max}")
        r0 = np.asarray(r0, dtype=float)
        self.m_max = m_max
        self.beta = float(np.linalg.norm(r0))
        self.basis = np.zeros((m_max + 1, r0.size))
        self.H = np.zeros((m_max + 1, m_max))
        self.m = 0
        self.breakdown = False
        self.breakdown_tol = breakdown_tol
        if self.beta > 0:
            self.basis[0] = r0 / self.beta

    @property
    def V(self) -> np.ndarray:
        return self.basis[: self.m + 1].T

    @property
    def H_square(self) -> np.ndarray:
        return self.H[: self.m, : self.m]

    @property
    def h_next(self) -> float:
        """``h_{m+1,m}``, zero after a happy breakdown."""
        if self.m == 0 or self.breakdown:
            return 0.0
        return float(self.H[self.m, self.m - 1])


def arnoldi_extend(apply, decomp: KrylovDecomposition) -> KrylovDecomposition:
    """One modified Gram-Schmidt Arnoldi step (a single operator application).

    ``apply`` is a callable ``v -> A_hat v`` or a :class:`LinearizedSystem`.
    A second orthogonalization pass runs when cancellation removed more than
    half of ``w``.  A new norm at or below ``decomp.breakdown_tol`` marks an
    invariant subspace; the basis is then not extended.
    """
    if isinstance(apply, LinearizedSystem):
        apply = apply.apply
    j = decomp.m
    if j >= decomp.m_max:
        raise ValueError("Krylov basis already at m_max")
    if decomp.breakdown:
        raise ValueError("Krylov basis already spans an invariant subspace")
    w = apply(decomp.basis[j])
    w_norm0 = np.linalg.norm(w)
    for i in range(j + 1):
        h = w @ decomp.basis[i]
        decomp.H[i, j] = h
        w -= h * decomp.basis[i]
    w_norm = np.linalg.norm(w)
    if w_norm < 0.5 * w_norm0:
        for i in range(j + 1):
            h = w @ decomp.basis[i]
            decomp.H[i, j] += h
            w -= h * decomp.basis[i]
        w_norm = np.linalg.norm(w)
    decomp.m = j + 1
    if w_norm <= decomp.breakdown_tol:
        decomp.breakdown = True
        decomp.H[j + 1, j] = 0.0
    else:
        decomp.H[j + 1, j] = w_norm
        decomp.basis[j + 1] = w / w_norm
    return decomp


def krylov_resnorm(decomp: KrylovDecomposition, tau: float) -> float:
    """Residual norm at ``t_n + tau`` divided by ``beta``."""
    if decomp.m < 1:
        raise ValueError("empty Krylov decomposition")
    h = decomp.h_next
    if tau == 0 or h == 0:
        return 0.0
    u = phi_times_e1(decomp.H_square, tau)
    return h * abs(u[-1])


@dataclass
class PhiStepResult:
    tau_accepted: float
    y_next: np.ndarray
    resnorm: float
    m_used: int
    converged_early: bool
    matvecs: int
    restarts: int = 0
    decomp: KrylovDecomposition | None = None


def _largest_admissible(decomp, tau0, tol_phi, trace):
    if trace == "bisect":
        lo, hi = 0.0, tau0
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            if krylov_resnorm(decomp, mid) <= tol_phi:
                lo = mid
            else:
                hi = mid
        return lo
    if trace == "scan":
        best = 0.0
        for s in tau0 * np.arange(1, SCAN_POINTS + 1) / SCAN_POINTS:
            if krylov_resnorm(decomp, s) <= tol_phi:
                best = float(s)
        return best
    raise ValueError(f"unknown trace mode {trace!r}")


def krylov_phi_step(
    apply,
    y_n: np.ndarray,
    r0: np.ndarray,
    tau0: float,
    tol_phi: float,
    m_max: int,
    breakdown_tol: float = 0.0,
    trace: str = "bisect",
) -> PhiStepResult:
    """Residual-time Krylov step from ``y_n`` with starting vector ``r0``.

    ``r0`` must equal ``g_hat - A_hat y_n``; its evaluation is not counted
    here.  ``matvecs`` in the result covers the Arnoldi steps only.
    """
    if not tau0 > 0:
        raise ValueError(f"tau0 must be positive, got {tau0}")
    decomp = KrylovDecomposition(r0, m_max, breakdown_tol)
    y_n = np.asarray(y_n, dtype=float)
    if decomp.beta == 0.0:
        return PhiStepResult(tau0, y_n.copy(), 0.0, 0, True, 0, decomp=decomp)

    tau = tau0
    converged = False
    for j in range(1, m_max + 1):
        arnoldi_extend(apply, decomp)
        u = phi_times_e1(decomp.H_square, tau0)
        resnorm = decomp.h_next * abs(u[-1])
        if resnorm <= tol_phi:
            converged = True
            break
        if j == m_max:
            tau = _largest_admissible(decomp, tau0, tol_phi, trace)
            if tau <= 0.0:
                raise KrylovStepFailure(
                    f"residual exceeds tol_phi={tol_phi:g} for every step in (0, {tau0:g}] "
                    f"with m_max={m_max}"
                )
            u = phi_times_e1(decomp.H_square, tau)
            resnorm = decomp.h_next * abs(u[-1])
    y_next = y_n + decomp.V[:, : decomp.m] @ (decomp.beta * u)
    if not np.all(np.isfinite(y_next)):
        raise KrylovStepFailure(f"non-finite Krylov update at tau={tau:g} (m={decomp.m})")
    return PhiStepResult(tau, y_next, float(resnorm), decomp.m, converged, decomp.m, decomp=decomp)


def ee2_krylov_step(
    sys: LinearizedSystem,
    y_n: np.ndarray,
    tau0: float,
    tol_phi: float,
    m_max: int,
    trace: str = "bisect",
    r0: np.ndarray | None = None,
) -> PhiStepResult:
    """One exponential Euler step that may shorten ``tau0`` to meet ``tol_phi``.

    The returned ``matvecs`` includes the evaluation of the starting vector
    ``g_hat - A_hat y_n``, so it is ``m_used + 1`` even when the caller
    passes a precomputed ``r0``.

    Raises
    ------
    KrylovStepFailure
        If the basis reaches ``m_max`` and no positive step is admissible,
        or the update is not finite.
    """
    if r0 is None:
        r0 = sys.residual(y_n)
    res = krylov_phi_step(
        sys.apply, y_n, r0, tau0, tol_phi, m_max,
        breakdown_tol=BREAKDOWN_RTOL * sys.one_norm(), trace=trace,
    )
    res.matvecs += 1
    return res


def ee2_constant_step(
    sys: LinearizedSystem,
    y_n: np.ndarray,
    tau: float,
    tol_phi: float,
    m_max: int,
    trace: str = "bisect",
    r0: np.ndarray | None = None,
) -> PhiStepResult:
    """Solve the frozen linear problem over the whole of ``[t_n, t_n + tau]``.

    Each sweep accepts the largest admissible sub-step and restarts the
    Arnoldi process from the state reached, until ``tau`` is covered.
    ``m_used`` reports the largest basis size over the sweeps.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    y = np.asarray(y_n, dtype=float)
    done = 0.0
    matvecs = 0
    m_used = 0
    sweeps = 0
    res = None
    while True:
        remaining = tau - done
        res = ee2_krylov_step(sys, y, remaining, tol_phi, m_max, trace=trace, r0=r0)
        r0 = None
        sweeps += 1
        matvecs += res.matvecs
        m_used = max(m_used, res.m_used)
        y = res.y_next
        if res.converged_early or res.tau_accepted >= remaining:
            break
        done += res.tau_accepted
        if sweeps >= MAX_RESTARTS:
            raise KrylovStepFailure(f"no completion after {sweeps} restarts ({done:g} of {tau:g})")
    return PhiStepResult(tau, y, res.resnorm, m_used, sweeps == 1, matvecs, restarts=sweeps - 1)
