"""Command line entry point: ``chstep [options]`` or ``python -m chstep``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from .experiment import EXIT_CONFIG, ExperimentConfig, run_experiment, sweep


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="chstep",
        description="Integrate the 2D Cahn-Hilliard benchmark with the LIM or EE2 scheme.",
    )
    p.add_argument("--nx", type=int, default=64)
    p.add_argument("--ny", type=int, default=64)
    p.add_argument("--length", type=float, default=64.0, help="side of the square domain")
    p.add_argument("--T", type=float, default=1000.0, help="final time")
    p.add_argument("--scheme", choices=["lim", "ee2"], default="lim")
    p.add_argument("--adaptive", action="store_true", help="adaptive step size (default: constant tau0)")
    p.add_argument("--eyre", action="store_true", help="use the Eyre convex splitting")
    p.add_argument("--tol", type=float, default=1e-2, help="step tolerance; also drives the Krylov tolerance")
    p.add_argument("--tau0", type=float, default=1.0, help="constant or initial step size")
    p.add_argument("--mmax", type=int, default=30, help="maximum Krylov dimension (EE2)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps-m", type=int, default=4, help="epsilon = eps_m formula on the base grid")
    p.add_argument("--eps-base-n", type=int, default=64, help="base grid cells per side for --eps-m")
    p.add_argument("--eps-value", type=float, default=None, help="explicit epsilon (overrides --eps-m)")
    p.add_argument("--norm-mode", choices=["exact", "bound"], default="exact",
                   help="spectral bound for LIM: exact 1-norm or cheap product bound")
    p.add_argument("--reference", choices=["none", "dop853", "ee2"], default="none",
                   help="compute the error against a reference solution")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--sweep-file", default=None,
                   help="JSON list of option overrides; one run per entry, plus sweep.csv")
    p.add_argument("--sample-every", type=int, default=1, help="write every k-th step to steps.csv")
    p.add_argument("--jobs", type=int, default=1, help="parallel sweep entries")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


_SWEEP_KEYS = {"mmax": "m_max", "eyre": "eyre", "norm_mode": "norm_mode"}


def _config_from_args(args) -> ExperimentConfig:
    return ExperimentConfig(
        nx=args.nx, ny=args.ny, length=args.length, eps_m=args.eps_m, eps_base_n=args.eps_base_n,
        eps_value=args.eps_value, T=args.T, scheme=args.scheme.upper(), adaptive=args.adaptive,
        eyre=args.eyre, tol=args.tol, tau0=args.tau0, m_max=args.mmax, norm_mode=args.norm_mode,
        seed=args.seed, output_path=args.out, sample_every=args.sample_every, reference=args.reference,
    )


def load_sweep(path, base: ExperimentConfig) -> list[ExperimentConfig]:
    with open(path) as f:
        entries = json.load(f)
    if not isinstance(entries, list):
        raise ValueError("sweep file must hold a JSON list of objects")
    fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    configs = []
    for entry in entries:
        over = {}
        for key, value in entry.items():
            key = _SWEEP_KEYS.get(key, key.replace("-", "_"))
            if key not in fields:
                raise ValueError(f"unknown sweep option {key!r}")
            over[key] = value.upper() if key == "scheme" else value
        configs.append(dataclasses.replace(base, **over))
    return configs


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _config_from_args(args)
        configs = load_sweep(args.sweep_file, config) if args.sweep_file else None
    except (ValueError, TypeError, OSError) as exc:
        print(f"chstep: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if configs is not None:
        code, rows = sweep(configs, args.out, jobs=args.jobs)
        for row in rows:
            print(f"run {row['run']}: {row['scheme']} matvecs={row['matvecs']} error={row['error']} {row['status']}")
        return code
    code, summary = run_experiment(config)
    print(f"{summary['scheme']}: status={summary['status']} steps={summary['steps']} "
          f"matvecs={summary['matvecs']} error={summary['error']} wall={summary['wall_time']:.2f}s")
    return code


if __name__ == "__main__":
    sys.exit(main())
