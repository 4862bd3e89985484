"""Decay-rate fields of eigenfunctions and one-sided Agmon checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .finsler import AgmonProblem, DistanceField, agmon_distance_field, rho_E
from .lattice import SEMICLASSICAL, UNIT, DiscreteField, LatticeBox, assemble_hamiltonian, build_box
from .potential import PotentialSpec
from .spectral import lanczos_extremal

TINY = 1e-300
DEFAULT_ANNULUS = (0.2, 0.8)
UNIFORMITY = 0.10


class EmptyRegionError(ValueError):
    pass


@dataclass
class RateField:
    box: LatticeBox
    values: np.ndarray  # nan on masked sites
    mask: np.ndarray  # True where |u| fell below the floor
    floor: float
    mode: str

    @property
    def excluded(self) -> int:
        return int(self.mask.sum())


def rate_field(u: DiscreteField, h: float, mode: str = SEMICLASSICAL, floor: float = TINY, noise: float = 0.0) -> RateField:
    """``r = -h log|u|`` (or ``-log|u|`` on the unit mesh) where ``|u|`` clears the floor.

    The effective floor is ``max(floor, noise)``; pass ``noise = 10 * residual``
    to drop sites that only carry solver round-off.
    """
    if mode not in (SEMICLASSICAL, UNIT):
        raise ValueError(f"unknown mode {mode!r}")
    if abs(u.norm() - 1.0) > 1e-8:
        raise ValueError("rate_field expects a normalized field")
    cut = max(floor, noise)
    a = np.abs(u.values)
    mask = a < cut
    if mask.all():
        raise EmptyRegionError("every site is below the floor")
    scale = h if mode == SEMICLASSICAL else 1.0
    with np.errstate(divide="ignore"):
        r = np.where(mask, np.nan, -scale * np.log(np.where(mask, 1.0, a)))
    return RateField(u.box, r, mask, cut, mode)


@dataclass
class AgmonReport:
    epsilon: float
    C: float
    worst_site: list
    tested: int
    excluded: int
    region: tuple[float, float]

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "C": self.C,
            "worst_site": self.worst_site,
            "tested": self.tested,
            "excluded": self.excluded,
            "region": list(self.region),
        }


def bound_at_sites(bound, box: LatticeBox) -> np.ndarray:
    """Evaluate a DistanceField (interpolated) or a callable on the box sites."""
    pts = box.coords()
    if isinstance(bound, DistanceField):
        return bound.sample(pts)
    return np.asarray(bound(pts), dtype=float)


def annulus(values: np.ndarray, usable: np.ndarray, fractions=DEFAULT_ANNULUS) -> tuple[float, float]:
    top = float(values[usable].max())
    return fractions[0] * top, fractions[1] * top


def agmon_report(r: RateField, bound, epsilon: float, region: tuple[float, float] | None = None) -> AgmonReport:
    """Smallest ``C`` with ``r >= (1 - eps) bound - C`` on the tested sites.

    ``region`` is a closed range of bound values; by default the annulus
    ``[0.2, 0.8] * max bound`` over unmasked sites.
    """
    if not 0 <= epsilon < 1:
        raise ValueError("epsilon must lie in [0, 1)")
    b = bound_at_sites(bound, r.box)
    usable = ~r.mask
    if region is None:
        region = annulus(b, usable)
    sel = usable & (b >= region[0]) & (b <= region[1])
    if not sel.any():
        raise EmptyRegionError(f"no unmasked site has bound in [{region[0]}, {region[1]}]")
    gap = np.full(b.shape, -np.inf)
    gap[sel] = (1.0 - epsilon) * b[sel] - r.values[sel]
    worst = int(np.argmax(gap))
    site = [float(c) for c in r.box.coords()[worst]]
    return AgmonReport(epsilon, float(gap[worst]), site, int(sel.sum()), r.excluded, (float(region[0]), float(region[1])))


@dataclass
class AgmonSeries:
    energy: float
    epsilon: float
    h: list[float]
    C: list[float]
    ground_energies: list[float]
    region: tuple[float, float]
    reports: list[AgmonReport] = field(default_factory=list)

    @property
    def median(self) -> float:
        return float(np.median(self.C))

    @property
    def uniform_C(self) -> float:
        """Median plus 10% of its magnitude: the single constant being tested."""
        return self.median + UNIFORMITY * abs(self.median)

    @property
    def passed(self) -> bool:
        return max(self.C) <= self.uniform_C

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "energy": self.energy,
            "C": self.uniform_C,
            "C_median": self.median,
            "worst_site": self.reports[int(np.argmax(self.C))].worst_site if self.reports else None,
            "pass": self.passed,
            "h_series": [
                {"h": h, "C": c, "ground_energy": e, **rep.to_json()}
                for h, c, e, rep in zip(self.h, self.C, self.ground_energies, self.reports)
            ],
        }


def agmon_series(
    potential: PotentialSpec,
    h_list,
    energy: float = -1.0,
    epsilon: float = 0.1,
    box_extent: float = 4.0,
    pitch: float = 0.01,
    stencil: int = 3,
    tol: float = 1e-12,
    seed: int = 0,
    fractions=DEFAULT_ANNULUS,
    max_iter: int = 5000,
) -> AgmonSeries:
    """Ground states across ``h_list`` checked against ``(1 - eps) d_E`` with one annulus.

    ``d_E`` is computed once on a continuum grid.  The annulus uses the smallest
    (over h) maximum of ``d_E`` on unmasked sites, so every h is tested on the
    same set of bound values.
    """
    problem = AgmonProblem(potential, energy)
    dist = agmon_distance_field(problem, pitch, box_extent, stencil)
    rates, bounds, gs = [], [], []
    for h in h_list:
        box = build_box(potential.dim, h, int(round(box_extent / h)))
        H = assemble_hamiltonian(potential, box)
        res = lanczos_extremal(H, "lowest", 1, tol=tol, max_iter=max_iter, seed=seed)
        u = res.fields()[0]
        r = rate_field(u, h, SEMICLASSICAL, noise=10.0 * float(res.residuals[0]))
        rates.append(r)
        bounds.append(bound_at_sites(dist, box))
        gs.append(float(res.values[0]))
    top = min(float(b[~r.mask].max()) for b, r in zip(bounds, rates))
    region = (fractions[0] * top, fractions[1] * top)
    reports = [agmon_report(r, dist, epsilon, region) for r in rates]
    return AgmonSeries(energy, epsilon, [float(h) for h in h_list], [rep.C for rep in reports], gs, region, reports)


# ---------------------------------------------------------------- rays


@dataclass
class RaySlope:
    direction: tuple[int, ...]
    n: np.ndarray
    rates: np.ndarray
    slope: float  # least squares over the range
    stderr: float
    local_slope: float  # r(n_max) - r(n_max - 1)
    log_slope: float  # fit of a + s n + c log n
    reference: float  # rho_E(direction)

    def relative_error(self, which: str = "local") -> float:
        s = {"lsq": self.slope, "local": self.local_slope, "log": self.log_slope}[which]
        return abs(s - self.reference) / self.reference


def ray_rate_slopes(rate, directions, n_range, energy: float) -> list[RaySlope]:
    """Fit ``r(n * dir)`` against ``n`` along each integer direction.

    ``rate`` is a RateField on the unit mesh or a callable taking integer sites
    (k, d) and returning rates.  Three slopes are reported: plain least squares,
    the last-step difference, and a fit with a ``log n`` term that absorbs the
    algebraic prefactor of the decay.
    """
    n = np.arange(int(n_range[0]), int(n_range[1]) + 1)
    if isinstance(rate, RateField):
        field_ = rate

        def rate(sites):
            idx = field_.box.index(sites)
            return field_.values[idx]

    out = []
    for direction in directions:
        dvec = np.asarray(direction, dtype=np.int64)
        r = np.asarray(rate(n[:, None] * dvec[None, :]), dtype=float)
        ok = np.isfinite(r)
        if ok.sum() < 4:
            raise EmptyRegionError(f"fewer than 4 usable points along {tuple(direction)}")
        nn, rr = n[ok], r[ok]
        A = np.column_stack([np.ones_like(nn, dtype=float), nn])
        coef, *_ = np.linalg.lstsq(A, rr, rcond=None)
        resid = rr - A @ coef
        dof = max(nn.size - 2, 1)
        sxx = np.sum((nn - nn.mean()) ** 2)
        stderr = math.sqrt(float(resid @ resid) / dof / sxx)
        B = np.column_stack([np.ones_like(nn, dtype=float), nn, np.log(nn)])
        lcoef, *_ = np.linalg.lstsq(B, rr, rcond=None)
        local = float(rr[-1] - rr[-2]) if nn[-1] - nn[-2] == 1 else float(coef[1])
        out.append(
            RaySlope(
                tuple(int(c) for c in dvec), nn, rr, float(coef[1]), stderr, local, float(lcoef[1]),
                rho_E(energy, dvec.astype(float)),
            )
        )
    return out
