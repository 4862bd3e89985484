"""Experiment runners behind the command-line subcommands.

Each runner writes its fixed set of files under ``out`` and returns a summary
dict.  Outputs embed the config hash and tool version and contain no
timestamps, so equal configs give byte-identical files.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .decay import agmon_series
from .delta_mode import PreconditionError, delta_eigenpair, free_resolvent_kernel, optimality_experiment, stencil_residual
from .finsler import AgmonProblem, agmon_distance_field
from .lattice import write_dfield
from .phase_volume import PhaseRegionSpec, estimate_phase_volume, weyl_table, weyl_trend_ok
from .potential import PotentialSpec
from .wkb import (
    eigenvalue_asymptotics,
    harmonic_levels,
    loglog_slope,
    quasimode_residual,
    transport_residual,
    wkb_solution,
)

log = logging.getLogger(__name__)


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[list], cfg: ExperimentConfig) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header + ["config_hash", "tool_version"])
        for row in rows:
            w.writerow([fmt(v) for v in row] + [cfg.digest(), __version__])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def write_json(path: Path, payload: dict, cfg: ExperimentConfig) -> None:
    body = dict(payload)
    body["config_hash"] = cfg.digest()
    body["tool_version"] = __version__
    with open(path, "w") as fh:
        json.dump(_clean(body), fh, sort_keys=True, indent=2)
        fh.write("\n")


def potential_of(cfg: ExperimentConfig) -> PotentialSpec:
    return PotentialSpec.from_source(cfg.expr, cfg.dim)


def run_weyl(cfg: ExperimentConfig, out: Path) -> dict:
    pot = potential_of(cfg)
    region = PhaseRegionSpec(pot, cfg.a, cfg.b, cfg.rx, cfg.samples, cfg.replicates, cfg.seed)
    vol = estimate_phase_volume(region)
    rows = weyl_table(region, cfg.h, cfg.margin, vol, cfg.radii if cfg.box == "radii" else None)
    empty = vol.value == 0
    if empty:
        log.warning("interval [%g, %g] is empty in phase space; counts only", cfg.a, cfg.b)
    ratios = [r.ratio for r in rows]
    final_ok = (not empty) and abs(ratios[-1] - 1.0) <= cfg.ratio_tol
    trend = (not empty) and weyl_trend_ok(ratios)
    write_csv(
        out / "weyl.csv",
        ["h", "count", "volume", "stderr", "ratio"],
        [[r.h, r.count, r.volume, r.stderr, r.ratio] for r in rows],
        cfg,
    )
    summary = {
        "volume": vol.value,
        "stderr": vol.stderr,
        "rx": vol.rx,
        "samples": vol.samples,
        "empty": empty,
        "rows": [
            {"h": r.h, "count": r.count, "ratio": r.ratio, "box_radius": r.box_radius, "sites": r.sites, "fuzz": r.fuzz}
            for r in rows
        ],
        "final_ratio_ok": final_ok,
        "trend_ok": trend,
        "pass": final_ok and trend,
    }
    write_json(out / "report.json", summary, cfg)
    return summary


def run_agmon(cfg: ExperimentConfig, out: Path) -> dict:
    pot = potential_of(cfg)
    series = agmon_series(
        pot, cfg.h, cfg.energy, cfg.epsilon, cfg.extent, cfg.pitch, cfg.stencil, cfg.tol, cfg.seed,
        max_iter=cfg.max_iter,
    )
    payload = series.to_json()
    payload["region"] = list(series.region)
    write_json(out / "agmon-report.json", payload, cfg)
    return payload


def run_delta(cfg: ExperimentConfig, out: Path) -> dict:
    d = cfg.dim
    for direction in cfg.directions:
        if len(direction) != d:
            raise PreconditionError(f"direction {direction} does not have {d} components")
    if cfg.n_max * max(max(abs(c) for c in v) for v in cfg.directions) > cfg.fft_size // 4:
        raise PreconditionError(f"n_max along the given directions leaves |x|_inf <= N/4 = {cfg.fft_size // 4}")
    kernel = free_resolvent_kernel(cfg.energy, d, cfg.fft_size)
    pair = delta_eigenpair(cfg.energy, d, cfg.fft_size, kernel=kernel)
    res_stencil = stencil_residual(kernel)
    rays = optimality_experiment(cfg.energy, d, cfg.fft_size, cfg.directions, (cfg.n_min, cfg.n_max), cfg.shift)
    write_csv(
        out / "delta.csv",
        ["E", "dim", "N", "u0", "amplitude", "eigen_residual", "rayleigh", "stencil_residual", "periodization_bound"],
        [[cfg.energy, d, cfg.fft_size, pair.u0, pair.amplitude, pair.residual, pair.rayleigh, res_stencil,
          kernel.periodization_bound]],
        cfg,
    )
    write_csv(
        out / "rays.csv",
        ["direction", "n_min", "n_max", "slope", "stderr", "local_slope", "log_slope", "reference", "rel_error", "pass"],
        [
            [" ".join(str(c) for c in r.slope.direction), cfg.n_min, cfg.n_max, r.slope.slope, r.slope.stderr,
             r.slope.local_slope, r.slope.log_slope, r.slope.reference, r.slope.relative_error("local"), r.passed]
            for r in rays
        ],
        cfg,
    )
    write_dfield(out / "kernel.dfield", kernel.values.ravel(), {"kind": "free-resolvent", "E": cfg.energy, "dim": d, "N": cfg.fft_size,
                                                       "config_hash": cfg.digest(), "tool_version": __version__})
    return {
        "u0": pair.u0,
        "eigen_residual": pair.residual,
        "rays": [{"direction": r.slope.direction, "local_slope": r.slope.local_slope, "pass": r.passed} for r in rays],
        "pass": all(r.passed for r in rays) and pair.residual <= 1e-10,
    }


def run_wkb(cfg: ExperimentConfig, out: Path) -> dict:
    pot = potential_of(cfg)
    alphas = [tuple(a) for a in np.ndindex(*([3] * cfg.dim))]
    levels = harmonic_levels(pot, alphas)
    level_rows = [
        {"alpha": list(a), "E0": levels.levels[a], "unique": levels.unique[a]}
        for a in sorted(levels.levels, key=lambda a: (levels.levels[a], a))
    ]
    payload = {"lambdas": list(levels.lambdas), "E0": levels.ground(), "levels": level_rows}
    if cfg.dim != 1:
        write_csv(out / "wkb.csv", ["alpha", "E0", "unique"],
                  [[" ".join(map(str, r["alpha"])), r["E0"], r["unique"]] for r in level_rows], cfg)
        payload["pass"] = True
        write_json(out / "quasimode.json", payload, cfg)
        return payload
    hs = list(cfg.h)
    sol = wkb_solution(pot, cfg.half_width, cfg.wkb_pitch)
    sol.meta.update({"config_hash": cfg.digest(), "tool_version": __version__})
    sol.save(str(out / "wkb"))
    q = [quasimode_residual(pot, h, sol) for h in hs]
    ctrl = [quasimode_residual(pot, h, sol, E=sol.E0 + cfg.control_offset) for h in hs]
    asym = eigenvalue_asymptotics(pot, hs, cfg.half_width, cfg.tol, cfg.seed, sol.E0, cfg.max_iter)
    slope = loglog_slope(hs, [r.ratio for r in q])
    ctrl_slope = loglog_slope(hs, [r.ratio for r in ctrl])
    halving = [a.deviation / b.deviation for a, b in zip(asym, asym[1:])]
    write_csv(
        out / "wkb.csv",
        ["h", "ground", "scaled", "deviation", "E1", "quasimode_ratio", "control_ratio"],
        [[a.h, a.ground, a.scaled, a.deviation, a.E1, r.ratio, c.ratio] for a, r, c in zip(asym, q, ctrl)],
        cfg,
    )
    payload.update({
        "quasimode_slope": slope,
        "control_slope": ctrl_slope,
        "deviation_ratios": halving,
        "transport_residual": transport_residual(pot, sol.x, sol.a0, sol.E0, sol.seed_radius),
        "window": list(q[0].window),
        "pass": slope >= 1.9 and 0.8 <= ctrl_slope <= 1.2 and all(abs(r - 2.0) <= 0.4 for r in halving),
    })
    write_json(out / "quasimode.json", payload, cfg)
    return payload


def run_finsler_dist(cfg: ExperimentConfig, out: Path) -> dict:
    pot = potential_of(cfg)
    field = agmon_distance_field(AgmonProblem(pot, cfg.energy), cfg.pitch, cfg.extent, cfg.stencil, cfg.quad_nodes)
    field.meta.update({"config_hash": cfg.digest(), "tool_version": __version__})
    field.save(out / "distance.dfield")
    payload = {
        "E": cfg.energy,
        "pitch": cfg.pitch,
        "stencil": cfg.stencil,
        "radii": list(field.radii),
        "source_nodes": int(field.source.sum()),
        "max_distance": float(field.values.max()),
    }
    write_json(out / "distance.json", payload, cfg)
    return payload


RUNNERS = {
    "weyl": run_weyl,
    "agmon": run_agmon,
    "delta": run_delta,
    "wkb": run_wkb,
    "finsler-dist": run_finsler_dist,
}
