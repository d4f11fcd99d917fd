"""Time loops for the LIM and EE2 schemes, constant or adaptive step size.

Both adaptive loops share the predictor-corrector estimate: the scheme's
``y_{n+1}`` is fed to an implicit trapezoidal corrector and the relative gap
between the two drives the next step size.  Step control is purely a
posteriori; steps are never redone (apart from the EE2 retry on Krylov
failure).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import solve_ivp

from .diag import discrete_energy, mass_deviation
from .krylov import KrylovStepFailure, ee2_constant_step, ee2_krylov_step
from .lim import build_schedule, lim_step
from .problem import CahnHilliardProblem, free_energy_prime

log = logging.getLogger(__name__)

SCHEMES = ("LIM", "EE2")
EE2_GROWTH = 1.25
EE2_MAX_RETRIES = 5


class SolverFailure(RuntimeError):
    """A time loop could not complete; carries the failing step index."""

    def __init__(self, message, step=None, t=None, state=None):
        super().__init__(message)
        self.step = step
        self.t = t
        self.state = state


@dataclass
class SolverConfig:
    scheme: str = "LIM"
    adaptive: bool = False
    use_eyre: bool = False
    tau0: float = 1.0
    T: float = 1000.0
    tol: float = 1e-2
    m_max: int = 30
    lambda_norm_mode: str = "exact"
    lim_growth_cap: float | None = 2.0
    tau_max: float | None = None
    tol_phi_floor: float = 1e-7
    trace: str = "bisect"

    def __post_init__(self):
        self.scheme = self.scheme.upper()
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not self.tau0 > 0:
            raise ValueError(f"tau0 must be positive, got {self.tau0}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.m_max < 1:
            raise ValueError(f"m_max must be at least 1, got {self.m_max}")
        if self.lambda_norm_mode not in ("exact", "bound"):
            raise ValueError(f"unknown lambda_norm_mode {self.lambda_norm_mode!r}")


@dataclass
class StepRecord:
    n: int
    t: float
    tau: float
    matvecs: int
    est: float | None
    energy: float
    mass: float
    m_used: int | None = None
    pc_matvecs: int = 0
    mass_dev: float = 0.0


@dataclass
class RunResult:
    y: np.ndarray
    records: list[StepRecord] = field(default_factory=list)

    @property
    def matvecs(self) -> int:
        return sum(r.matvecs for r in self.records)

    @property
    def pc_matvecs(self) -> int:
        return sum(r.pc_matvecs for r in self.records)

    @property
    def steps(self) -> int:
        return len(self.records) - 1

    def __iter__(self):
        # allows ``y, records = run_...(...)``
        return iter((self.y, self.records))


def pc_estimate(problem: CahnHilliardProblem, y_n, y_np1, tau):
    """Trapezoidal corrector ``y_PC`` and the relative gap ``est``.

    Costs two products with ``A`` (one ``A_hat`` equivalent).  When
    ``y_PC == 0`` the absolute gap is returned instead.
    """
    A = problem.A
    eps2 = problem.epsilon**2
    s = free_energy_prime(y_n) + free_energy_prime(y_np1) + eps2 * A.apply(y_n + y_np1)
    y_pc = y_n - 0.5 * tau * A.apply(s)
    gap = np.linalg.norm(y_np1 - y_pc)
    denom = np.linalg.norm(y_pc)
    if denom == 0.0:
        log.warning("y_PC vanished; reporting absolute estimate")
        return y_pc, float(gap)
    return y_pc, float(gap / denom)


def lim_tau_update(tau, est, tol, growth_cap: float | None = 2.0):
    if est <= 0.0:
        return 2.0 * tau if growth_cap is None else growth_cap * tau
    new = tol / est * tau
    if growth_cap is not None:
        new = min(new, growth_cap * tau)
    return new


def ee2_tau_update(tau, est, tol):
    if est <= 0.0:
        return EE2_GROWTH * tau
    return min(EE2_GROWTH * tau, math.sqrt(tol / est) * tau)


def tol_phi_select(g_norm, beta, tol, floor=1e-7):
    """Krylov tolerance ``max(min(|g_hat| / (10 beta), 0.1, 10 tol), floor)``."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if beta == 0.0:
        return 0.1
    return max(min(g_norm / (10.0 * beta), 0.1, 10.0 * tol), floor)


def _problem_for(problem: CahnHilliardProblem, config: SolverConfig) -> CahnHilliardProblem:
    if problem.use_eyre == config.use_eyre and problem.norm_mode == config.lambda_norm_mode:
        return problem
    return replace(problem, use_eyre=config.use_eyre, norm_mode=config.lambda_norm_mode)


def _check_estimate(est, n, t, y):
    if not math.isfinite(est):
        raise SolverFailure(f"non-finite error estimate at step {n + 1}, t={t:g}", step=n + 1, t=t, state=y)


class _Recorder:
    def __init__(self, problem, y0):
        self.spec = problem.A.spec
        self.eps = problem.epsilon
        self.y0 = np.array(y0, dtype=float)
        self.records = [self.make(0, 0.0, 0.0, 0, None, self.y0)]

    def make(self, n, t, tau, matvecs, est, y, m_used=None, pc=0):
        energy = discrete_energy(self.spec, self.eps, y) if self.spec is not None else float("nan")
        mass = float(np.sum(y))
        dev, _ = mass_deviation(y, self.y0, return_flag=True)
        return StepRecord(n, t, tau, matvecs, est, energy, mass, m_used, pc, dev)

    def add(self, *args, **kw):
        self.records.append(self.make(*args, **kw))


def run_adaptive_lim(problem: CahnHilliardProblem, config: SolverConfig, y0) -> RunResult:
    problem = _problem_for(problem, config)
    T = config.T
    rec = _Recorder(problem, y0)
    y = rec.y0.copy()
    t, tau, n = 0.0, config.tau0, 0
    while t < T:
        last = t + tau >= T
        if last:
            tau = T - t
        sys = problem.linearize(y)
        sched = build_schedule(tau, sys.one_norm())
        try:
            y_new = lim_step(sys, y, tau, schedule=sched)
        except FloatingPointError as exc:
            raise SolverFailure(f"LIM step {n + 1} at t={t:g}: {exc}", step=n + 1, t=t, state=y) from exc
        _, est = pc_estimate(problem, y, y_new, tau)
        _check_estimate(est, n, t, y)
        y = y_new
        t = T if last else t + tau
        n += 1
        rec.add(n, t, tau, sys.matvecs, est, y, pc=1)
        tau = lim_tau_update(tau, est, config.tol, config.lim_growth_cap)
    return RunResult(y, rec.records)


def run_adaptive_ee2(problem: CahnHilliardProblem, config: SolverConfig, y0) -> RunResult:
    problem = _problem_for(problem, config)
    T = config.T
    rec = _Recorder(problem, y0)
    y = rec.y0.copy()
    t, tau, n = 0.0, config.tau0, 0
    while t < T:
        if t + tau > T:
            tau = T - t
        sys = problem.linearize(y)
        r0 = sys.residual(y)
        tol_phi = tol_phi_select(np.linalg.norm(sys.g_hat), np.linalg.norm(r0), config.tol, config.tol_phi_floor)
        matvecs = 1
        for attempt in range(EE2_MAX_RETRIES + 1):
            try:
                res = ee2_krylov_step(sys, y, tau, tol_phi, config.m_max, trace=config.trace, r0=r0)
                matvecs += res.m_used
                break
            except KrylovStepFailure as exc:
                matvecs += config.m_max
                if attempt == EE2_MAX_RETRIES:
                    raise SolverFailure(
                        f"EE2 step {n + 1} at t={t:g} failed after {attempt} retries: {exc}",
                        step=n + 1, t=t, state=y,
                    ) from exc
                tau *= 0.5
                log.info("EE2 step %d: Krylov failure, retrying with tau=%g", n + 1, tau)
        step = res.tau_accepted
        _, est = pc_estimate(problem, y, res.y_next, step)
        _check_estimate(est, n, t, y)
        y = res.y_next
        t = T if t + step >= T else t + step
        n += 1
        rec.add(n, t, step, matvecs, est, y, m_used=res.m_used, pc=1)
        tau = ee2_tau_update(step, est, config.tol)
        if config.tau_max is not None:
            tau = min(tau, config.tau_max)
    return RunResult(y, rec.records)


def run_constant(problem: CahnHilliardProblem, config: SolverConfig, y0) -> RunResult:
    """Fixed step ``tau0``; the final step is shortened to land on ``T``."""
    problem = _problem_for(problem, config)
    T, tau0 = config.T, config.tau0
    nsteps = max(1, math.ceil(T / tau0 - 1e-9))
    rec = _Recorder(problem, y0)
    y = rec.y0.copy()
    t = 0.0
    for n in range(1, nsteps + 1):
        t_next = T if n == nsteps else n * tau0
        tau = t_next - t
        sys = problem.linearize(y)
        m_used = None
        try:
            if config.scheme == "LIM":
                y = lim_step(sys, y, tau)
            else:
                r0 = sys.residual(y)
                tol_phi = tol_phi_select(np.linalg.norm(sys.g_hat), np.linalg.norm(r0), config.tol, config.tol_phi_floor)
                res = ee2_constant_step(sys, y, tau, tol_phi, config.m_max, trace=config.trace, r0=r0)
                y, m_used = res.y_next, res.m_used
        except (FloatingPointError, KrylovStepFailure) as exc:
            raise SolverFailure(f"{config.scheme} step {n} at t={t:g}: {exc}", step=n, t=t, state=y) from exc
        t = t_next
        rec.add(n, t, tau, sys.matvecs, None, y, m_used=m_used)
    return RunResult(y, rec.records)


def run(problem: CahnHilliardProblem, config: SolverConfig, y0) -> RunResult:
    if not config.adaptive:
        return run_constant(problem, config, y0)
    if config.scheme == "LIM":
        return run_adaptive_lim(problem, config, y0)
    return run_adaptive_ee2(problem, config, y0)


def reference_solve(
    problem: CahnHilliardProblem,
    y0,
    T: float,
    method: str = "dop853",
    tol: float = 1e-10,
    tau_max: float = 0.05,
) -> np.ndarray:
    """High-accuracy solution at ``T`` of the unsplit nonlinear system.

    ``method="dop853"`` uses an embedded 8(5,3) Runge-Kutta pair with
    ``rtol=tol``; ``method="ee2"`` runs adaptive EE2 (no Eyre splitting,
    ``m_max=30``) with step tolerance ``tol``, steps capped at ``tau_max`` and
    the Krylov tolerance floor lowered to ``tol``.
    """
    y0 = np.array(y0, dtype=float)
    base = replace(problem, use_eyre=False) if problem.use_eyre else problem
    if method == "dop853":
        sol = solve_ivp(
            lambda _t, y: base.rhs(y), (0.0, T), y0, method="DOP853",
            rtol=tol, atol=tol * 1e-2 * max(1e-300, float(np.max(np.abs(y0)))),
        )
        if not sol.success:
            raise SolverFailure(f"reference integration failed: {sol.message}")
        return sol.y[:, -1]
    if method == "ee2":
        # a small first step: the controller never redoes a step
        cfg = SolverConfig(
            scheme="EE2", adaptive=True, tau0=min(1e-2, tau_max), T=T, tol=tol, m_max=30,
            tau_max=tau_max, tol_phi_floor=min(1e-7, tol),
        )
        return run_adaptive_ee2(base, cfg, y0).y
    raise ValueError(f"unknown reference method {method!r}")
