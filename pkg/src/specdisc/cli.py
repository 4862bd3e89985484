"""``specdisc`` command-line entry point."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGED = 3
EXIT_PRECONDITION = 4

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="specdisc", description="Spectral experiments for discrete Schrödinger operators.")
    p.add_argument("subcommand", choices=["weyl", "agmon", "delta", "wkb", "finsler-dist"])
    p.add_argument("--config", required=True, help="INI experiment file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=None)
    return p


def _cap_threads() -> None:
    # must run before numpy loads its BLAS
    n = os.environ.get("SPECDISC_THREADS")
    if n:
        for var in _THREAD_VARS:
            os.environ.setdefault(var, n)


def main(argv=None) -> int:
    _cap_threads()
    logging.basicConfig(level=logging.WARNING, format="specdisc: %(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)

    from .config import ConfigError, load_config
    from .delta_mode import KernelSizeError, PreconditionError
    from .decay import EmptyRegionError
    from .experiments import RUNNERS
    from .finsler import EmptySourceError
    from .lattice import LatticeSizeError
    from .phase_volume import PhaseVolumeError
    from .potential import PotentialError
    from .spectral import ConvergenceError, InertiaError
    from .wkb import WkbError

    try:
        cfg = load_config(args.config)
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            overrides[key.strip()] = value.strip()
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        cfg = cfg.with_overrides(overrides)
        if cfg.subcommand != args.subcommand:
            raise ConfigError(f"config is for {cfg.subcommand!r}, not {args.subcommand!r}")
        if cfg.expr:
            from .potential import PotentialSpec

            PotentialSpec.from_source(cfg.expr, cfg.dim)
    except (ConfigError, PotentialError) as exc:
        print(f"specdisc: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        summary = RUNNERS[cfg.subcommand](cfg, out)
    except (ConvergenceError, InertiaError) as exc:
        print(f"specdisc: solver did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (PreconditionError, WkbError, PhaseVolumeError, EmptySourceError, EmptyRegionError,
            LatticeSizeError, KernelSizeError, PotentialError, ValueError) as exc:
        print(f"specdisc: precondition violated: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    status = "PASS" if summary.get("pass") else "done"
    print(f"specdisc {cfg.subcommand}: {status} ({cfg.digest()})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
