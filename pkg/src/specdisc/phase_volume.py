"""Phase-space volume of ``{a <= p(xi, x) <= b}`` and the Weyl-law table."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .finsler import agmon_box_radius, shell_min
from .lattice import assemble_hamiltonian, build_box
from .potential import PotentialSpec
from .spectral import count_in_interval, interval_fuzz

log = logging.getLogger(__name__)

RX_STEP = 0.5
RX_RUN = 4
REPLICATES = 16


class PhaseVolumeError(ValueError):
    """The truncation radius failed its verification scan."""


def symbol(potential: PotentialSpec, xi, x) -> np.ndarray:
    """``p(xi, x) = sum_j (2 - 2 cos xi_j) + V(x)`` for rows of ``xi`` and ``x``."""
    xi = np.atleast_2d(xi)
    return np.sum(2.0 - 2.0 * np.cos(xi), axis=1) + potential(np.atleast_2d(x))


def phase_indicator(potential: PotentialSpec, a: float, b: float, xi, x) -> np.ndarray:
    p = symbol(potential, xi, x)
    return (p >= a) & (p <= b)


def auto_rx(potential: PotentialSpec, b: float, step: float = RX_STEP, run: int = RX_RUN, r_max: float = 1e3) -> float:
    """First shell of a run of ``run`` shells on which ``min V > b + 0.1 |b|``."""
    level = b + 0.1 * abs(b)
    r, start, count = step, None, 0
    while r <= r_max:
        if shell_min(potential, r) > level:
            start = r if start is None else start
            count += 1
            if count == run:
                return start
        else:
            start, count = None, 0
        r += step
    raise PhaseVolumeError(f"V does not exceed {level} on {run} consecutive shells within {r_max}")


def verify_rx(potential: PotentialSpec, b: float, rx: float) -> float:
    """Dense scan of ``rx <= |x|_inf <= 2 rx``; returns the minimum of V found.

    The pitch is ``rx / 200`` (coarser in d=3 to bound the point count).  This is
    a heuristic check of ``V > b`` outside the truncation cube.
    """
    d = potential.dim
    pitch = rx / {1: 200, 2: 200, 3: 40}[d]
    t = np.arange(-2 * rx, 2 * rx + pitch / 2, pitch)
    lowest = np.inf
    # iterate over the first coordinate to keep memory bounded in d=3
    rest = np.stack([g.ravel() for g in np.meshgrid(*([t] * (d - 1)), indexing="ij")], axis=1) if d > 1 else None
    for x1 in t:
        pts = np.array([[x1]]) if rest is None else np.column_stack([np.full(rest.shape[0], x1), rest])
        keep = np.abs(pts).max(axis=1) >= rx - 1e-12
        if keep.any():
            lowest = min(lowest, float(potential(pts[keep]).min()))
    if not lowest > b:
        raise PhaseVolumeError(f"V reaches {lowest} <= b = {b} outside |x|_inf = {rx}")
    return lowest


@dataclass
class PhaseRegionSpec:
    potential: PotentialSpec
    a: float
    b: float
    rx: float | None = None  # None: chosen by auto_rx
    samples: int = 16384  # per replicate
    replicates: int = REPLICATES
    seed: int = 0

    def __post_init__(self):
        if not self.a < self.b < 0:
            raise ValueError(f"need a < b < 0, got [{self.a}, {self.b}]")
        if self.samples < 1 or self.replicates < 2:
            raise ValueError("need samples >= 1 and replicates >= 2")

    def resolved_rx(self) -> float:
        rx = auto_rx(self.potential, self.b) if self.rx is None else float(self.rx)
        verify_rx(self.potential, self.b, rx)
        return rx


@dataclass
class VolumeEstimate:
    value: float
    stderr: float
    samples: int
    rx: float


def estimate_phase_volume(region: PhaseRegionSpec) -> VolumeEstimate:
    """Scrambled-Halton QMC over ``[0, 2pi)^d x [-R_x, R_x]^d``.

    Each replicate is an independently scrambled sequence; the standard error
    is the spread of the replicate means over ``sqrt(replicates)``.
    """
    d = region.potential.dim
    rx = region.resolved_rx()
    cell = (2.0 * math.pi) ** d * (2.0 * rx) ** d
    seeds = np.random.SeedSequence(region.seed).spawn(region.replicates)
    means = np.empty(region.replicates)
    for i, ss in enumerate(seeds):
        sampler = qmc.Halton(d=2 * d, scramble=True, seed=np.random.default_rng(ss))
        u = sampler.random(region.samples)
        xi = 2.0 * math.pi * u[:, :d]
        x = rx * (2.0 * u[:, d:] - 1.0)
        means[i] = phase_indicator(region.potential, region.a, region.b, xi, x).mean()
    value = cell * float(np.mean(means))
    stderr = cell * float(np.std(means, ddof=1)) / math.sqrt(region.replicates)
    return VolumeEstimate(value, stderr, region.samples * region.replicates, rx)


@dataclass
class WeylRow:
    h: float
    count: int
    volume: float
    stderr: float
    ratio: float  # (2 pi h)^d N / Vol; nan when the region is empty
    box_radius: float
    sites: int
    fuzz: float

    @property
    def empty(self) -> bool:
        return math.isnan(self.ratio)


def weyl_trend_ok(ratios, inversion: float = 0.05) -> bool:
    """Ratios non-increasing along the series, allowing one rise of at most 5%."""
    rises = [(b - a) / abs(a) for a, b in zip(ratios, ratios[1:]) if b > a * (1 + 1e-12)]
    return len(rises) == 0 or (len(rises) == 1 and rises[0] <= inversion)


def weyl_table(
    region: PhaseRegionSpec,
    h_list,
    margin: float = 25.0,
    volume: VolumeEstimate | None = None,
    half_widths=None,
) -> list[WeylRow]:
    """Eigenvalue counts in ``[a, b]`` against the phase-space volume, per mesh.

    Boxes are sized so the Agmon distance from ``{V <= b}`` to the boundary is
    at least ``margin * h``, unless fixed physical ``half_widths`` are given.
    """
    h_list = [float(h) for h in h_list]
    if any(h2 >= h1 for h1, h2 in zip(h_list, h_list[1:])):
        raise ValueError("h_list must be strictly descending")
    pot = region.potential
    d = pot.dim
    vol = volume if volume is not None else estimate_phase_volume(region)
    rows = []
    for h in h_list:
        if half_widths is None:
            R = agmon_box_radius(pot, region.b, h, margin)
            radii = int(math.ceil(R / h))
        else:
            hw = np.broadcast_to(np.asarray(half_widths, dtype=float), (d,))
            R = float(hw.max())
            radii = [int(math.ceil(r / h)) for r in hw]
        box = build_box(d, h, radii)
        H = assemble_hamiltonian(pot, box)
        count = count_in_interval(H, region.a, region.b)
        ratio = (2.0 * math.pi * h) ** d * count / vol.value if vol.value > 0 else float("nan")
        if vol.value == 0:
            log.warning("phase region is empty at [%g, %g]; ratio undefined", region.a, region.b)
        rows.append(WeylRow(h, count, vol.value, vol.stderr, ratio, R, box.size, interval_fuzz(H)))
    return rows
