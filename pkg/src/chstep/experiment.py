"""Benchmark runs: configuration, random initial data, CSV output and sweeps.

Every run writes ``steps.csv`` (one row per recorded step), ``summary.csv``
(one row) and ``config.json`` (the resolved configuration) into its output
directory.  Floats are written with 17 significant digits so files are
bit-reproducible for a given seed on one platform.

The initial state draws from numpy's PCG64 generator (``default_rng(seed)``).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diag import relative_error
from .driver import SolverConfig, SolverFailure, reference_solve, run
from .grid import GridSpec, build_laplacian
from .problem import CahnHilliardProblem, epsilon_m

log = logging.getLogger(__name__)

STEPS_HEADER = ["n", "t", "tau", "matvecs", "est", "energy", "mass_dev", "m_used"]
SUMMARY_HEADER = [
    "scheme", "adaptive", "eyre", "nx", "ny", "T", "tau0", "tol", "m_max", "seed",
    "status", "steps", "final_t", "matvecs", "pc_matvecs", "error", "wall_time",
]
SWEEP_HEADER = [
    "run", "scheme", "adaptive", "eyre", "tau0", "tol", "m_max",
    "matvecs", "pc_matvecs", "steps", "error", "status",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

IC_AMPLITUDE = 0.01


@dataclass
class ExperimentConfig:
    nx: int = 64
    ny: int = 64
    length: float = 64.0
    eps_m: int = 4
    eps_base_n: int = 64
    eps_value: float | None = None
    T: float = 1000.0
    scheme: str = "LIM"
    adaptive: bool = False
    eyre: bool = False
    tol: float = 1e-2
    tau0: float = 1.0
    m_max: int = 30
    norm_mode: str = "exact"
    seed: int = 0
    output_path: str = "out"
    sample_every: int = 1
    reference: str = "none"

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"need nx >= 2 and ny >= 2, got {self.nx}x{self.ny}")
        if not self.length > 0:
            raise ValueError(f"length must be positive, got {self.length}")
        if self.sample_every < 1:
            raise ValueError("sample_every must be at least 1")
        if self.reference not in ("none", "dop853", "ee2"):
            raise ValueError(f"unknown reference method {self.reference!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.solver_config()

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.nx, self.ny, self.length, self.length)

    @property
    def epsilon(self) -> float:
        """Explicit value, or the formula value for the base grid's step.

        Anchoring to the base grid keeps epsilon fixed under refinement.
        """
        if self.eps_value is not None:
            return float(self.eps_value)
        return epsilon_m(self.length / self.eps_base_n, self.eps_m)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            scheme=self.scheme, adaptive=self.adaptive, use_eyre=self.eyre,
            tau0=self.tau0, T=self.T, tol=self.tol, m_max=self.m_max,
            lambda_norm_mode=self.norm_mode,
        )

    def problem(self) -> CahnHilliardProblem:
        return CahnHilliardProblem(build_laplacian(self.grid), self.epsilon, self.eyre, self.norm_mode)

    def reference_key(self):
        return (self.nx, self.ny, self.length, self.epsilon, self.T, self.seed, self.reference)


def initial_condition(spec: GridSpec, seed: int) -> np.ndarray:
    """Uniform random entries strictly inside ``(-0.01, 0.01)``."""
    rng = np.random.default_rng(seed)
    y = rng.uniform(-IC_AMPLITUDE, IC_AMPLITUDE, spec.size)
    lo = np.nextafter(-IC_AMPLITUDE, 0.0)
    hi = np.nextafter(IC_AMPLITUDE, 0.0)
    return np.clip(y, lo, hi)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % x


def state_checksum(y) -> str:
    return hashlib.sha256(np.ascontiguousarray(y, dtype="<f8").tobytes()).hexdigest()[:16]


def write_steps(path, records, sample_every: int = 1) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(STEPS_HEADER)
        last = len(records) - 1
        for i, r in enumerate(records):
            if i % sample_every and i != last:
                continue
            w.writerow([_fmt(v) for v in (r.n, r.t, r.tau, r.matvecs, r.est, r.energy, r.mass_dev, r.m_used)])


def read_steps(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def compute_reference(config: ExperimentConfig, problem=None, y0=None) -> np.ndarray:
    problem = problem or config.problem()
    if y0 is None:
        y0 = initial_condition(config.grid, config.seed)
    return reference_solve(problem, y0, config.T, method=config.reference)


def run_experiment(config: ExperimentConfig, y_ref: np.ndarray | None = None) -> tuple[int, dict]:
    """Run one configuration and write its files.

    Returns ``(exit_code, summary)``, where ``summary`` holds the row written
    to ``summary.csv`` plus the paths of the files produced.
    """
    out = Path(config.output_path)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as f:
        json.dump(dataclasses.asdict(config) | {"epsilon": config.epsilon}, f, indent=2, sort_keys=True)

    problem = config.problem()
    y0 = initial_condition(config.grid, config.seed)
    summary = {
        "scheme": config.scheme.upper(), "adaptive": config.adaptive, "eyre": config.eyre,
        "nx": config.nx, "ny": config.ny, "T": config.T, "tau0": config.tau0, "tol": config.tol,
        "m_max": config.m_max, "seed": config.seed,
    }
    code = EXIT_OK
    start = time.perf_counter()
    try:
        result = run(problem, config.solver_config(), y0)
    except SolverFailure as exc:
        checksum = state_checksum(exc.state) if exc.state is not None else ""
        log.error("solver failure at step %s (state checksum %s): %s", exc.step, checksum, exc)
        summary.update(status=f"failed at step {exc.step} (state {checksum})", steps=exc.step,
                       final_t=exc.t, matvecs=None, pc_matvecs=None, error=None)
        code = EXIT_SOLVER
        result = None
    wall = time.perf_counter() - start

    if result is not None:
        error = None
        if config.reference != "none":
            if y_ref is None:
                y_ref = compute_reference(config, problem, y0)
            error = relative_error(result.y, y_ref)
        summary.update(status="ok", steps=result.steps, final_t=result.records[-1].t,
                       matvecs=result.matvecs, pc_matvecs=result.pc_matvecs, error=error)
        write_steps(out / "steps.csv", result.records, config.sample_every)
    summary["wall_time"] = wall

    with open(out / "summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SUMMARY_HEADER)
        w.writerow([v if isinstance(v, str) else _fmt(v) for v in (summary[k] for k in SUMMARY_HEADER)])
    summary["files"] = {name: str(out / name) for name in ("steps.csv", "summary.csv", "config.json")
                        if (out / name).exists()}
    return code, summary


def _run_entry(args):
    config, y_ref = args
    return run_experiment(config, y_ref)


def sweep(configs: list[ExperimentConfig], out_path, jobs: int = 1) -> tuple[int, list[dict]]:
    """Run several configurations and write ``sweep.csv`` into ``out_path``.

    References are computed once per distinct grid, epsilon, horizon and
    seed.  Each entry writes its own files under ``run_<i>/``.
    """
    out = Path(out_path)
    out.mkdir(parents=True, exist_ok=True)
    refs = {}
    tasks = []
    for i, cfg in enumerate(configs):
        cfg = dataclasses.replace(cfg, output_path=str(out / f"run_{i:03d}"))
        y_ref = None
        if cfg.reference != "none":
            key = cfg.reference_key()
            if key not in refs:
                refs[key] = compute_reference(cfg)
            y_ref = refs[key]
        tasks.append((cfg, y_ref))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_entry, tasks))
    else:
        results = [_run_entry(t) for t in tasks]

    rows = []
    with open(out / "sweep.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SWEEP_HEADER)
        for i, (_, s) in enumerate(results):
            row = {"run": i, **s}
            rows.append(row)
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in (row[k] for k in SWEEP_HEADER)])
    code = max((c for c, _ in results), default=EXIT_OK)
    return code, rows
