"""Free lattice resolvent by torus quadrature and the delta-potential eigenpair."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .decay import RaySlope, ray_rate_slopes
from .finsler import rho_E, support_function
from .lattice import UNIT, DiscreteField, HamiltonianOp, build_box

KERNEL_CAP = 1 << 26  # grid points
IMAG_TRIPWIRE = 1e-13
OPTIMALITY_TOL = 0.02


class KernelSizeError(ValueError):
    pass


class PreconditionError(ValueError):
    pass


@dataclass
class ResolventKernel:
    """``w(x) = u(x) exp(<eta, x>)`` on the block ``[-N/2, N/2)^d``.

    ``values[i_1, ..., i_d]`` holds the site ``x_j = i_j - N/2``.  With
    ``eta = 0`` the values are the kernel itself.  A nonzero ``eta`` (strictly
    inside ``{q < |E|}``) comes from shifting the torus contour and keeps the
    kernel accurate far below the round-off level of the plain transform along
    directions where ``<eta, x>`` is large.
    """

    energy: float
    dim: int
    N: int
    values: np.ndarray
    eta: np.ndarray
    periodization_bound: float

    def _slot(self, sites) -> tuple:
        sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
        if np.any(sites < -self.N // 2) or np.any(sites >= self.N // 2):
            raise IndexError("site outside the computed block")
        return tuple((sites + self.N // 2).T)

    def weighted(self, sites) -> np.ndarray:
        return self.values[self._slot(sites)]

    def log_value(self, sites) -> np.ndarray:
        """``log u`` at integer sites (n, d); nan where the weighted value is not positive."""
        w = self.weighted(sites)
        sites = np.atleast_2d(np.asarray(sites, dtype=float))
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(w > 0, np.log(np.where(w > 0, w, 1.0)), np.nan) - sites @ self.eta

    def value(self, sites) -> np.ndarray:
        return np.exp(self.log_value(sites))

    @property
    def u0(self) -> float:
        return float(self.weighted(np.zeros((1, self.dim), dtype=np.int64))[0])

    def sites(self) -> np.ndarray:
        ax = np.arange(-self.N // 2, self.N // 2)
        mesh = np.meshgrid(*([ax] * self.dim), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)


def free_resolvent_kernel(E: float, dim: int, N: int, eta=None) -> ResolventKernel:
    """Trapezoid rule on the ``N^d`` torus grid for the lattice Green function at ``E < 0``."""
    if not E < 0:
        raise ValueError("E must be negative")
    if dim not in (1, 2, 3):
        raise ValueError("dim must be 1, 2 or 3")
    if N < 64 or N & (N - 1):
        raise ValueError("N must be a power of two >= 64")
    if N**dim > KERNEL_CAP:
        raise KernelSizeError(f"N^d = {N**dim} exceeds the cap {KERNEL_CAP}")
    eta = np.zeros(dim) if eta is None else np.asarray(eta, dtype=float)
    if 4.0 * np.sum(np.sinh(eta / 2.0) ** 2) >= abs(E):
        raise ValueError("eta must lie strictly inside {q(eta) < |E|}")
    xi = 2.0 * math.pi * np.arange(N) / N
    # symbol at xi - i*eta, one axis at a time
    parts = [4.0 * np.sin((xi - 1j * e) / 2.0) ** 2 for e in eta]
    sym = np.full((N,) * dim, abs(E), dtype=complex)
    for j, p in enumerate(parts):
        shape = [1] * dim
        shape[j] = N
        sym = sym + p.reshape(shape)
    # sum_k F(xi_k) e^{-i x xi_k} / N^d is a forward DFT
    raw = np.fft.fftn(1.0 / sym) / float(N) ** dim
    if np.max(np.abs(raw.imag)) > IMAG_TRIPWIRE * max(1.0, np.max(np.abs(raw.real))):
        raise ArithmeticError("torus quadrature produced a non-negligible imaginary part")
    values = np.fft.fftshift(raw.real)
    # nearest periodic image of a safe-zone site is 3N/4 away in sup norm
    slowest = rho_E(E, np.eye(dim)[0])
    u0 = 1.0 / abs(E)  # crude bound for u(0)
    bound = 2 * dim * u0 * math.exp(-(0.75 * N) * (slowest - np.abs(eta).sum()))
    return ResolventKernel(float(E), dim, N, values, eta, bound)


def stencil_residual(kernel: ResolventKernel, radius: int | None = None) -> float:
    """``max |(H_0 + |E|) u - delta_0|`` over ``|x|_inf <= radius`` (default N/4)."""
    if np.any(kernel.eta != 0):
        raise ValueError("residual is defined for the unweighted kernel")
    N, d = kernel.N, kernel.dim
    radius = N // 4 if radius is None else radius
    u = kernel.values
    out = (2 * d + abs(kernel.energy)) * u
    for ax in range(d):
        out = out - np.roll(u, 1, axis=ax) - np.roll(u, -1, axis=ax)
    center = (N // 2,) * d
    out[center] -= 1.0
    inner = tuple(slice(N // 2 - radius, N // 2 + radius + 1) for _ in range(d))
    return float(np.abs(out[inner]).max())


@dataclass
class DeltaEigenpair:
    energy: float
    amplitude: float  # -1/u(0)
    u0: float
    field: DiscreteField  # normalized eigenvector on the box
    residual: float  # ||(H_0 + V - E) u|| / ||u||
    rayleigh: float
    operator: HamiltonianOp


def delta_eigenpair(E: float, dim: int, N: int, radius: int | None = None, kernel: ResolventKernel | None = None) -> DeltaEigenpair:
    """Eigenpair of ``H_0 - u(0)^{-1} delta_0`` on the box ``|x|_inf <= radius`` (default N/4)."""
    kernel = kernel or free_resolvent_kernel(E, dim, N)
    radius = N // 4 if radius is None else int(radius)
    if radius > N // 2 - 1:
        raise PreconditionError("box radius must stay inside the computed block")
    box = build_box(dim, 1.0, radius)
    vals = kernel.weighted(box.integer_sites())
    amp = -1.0 / kernel.u0
    H = HamiltonianOp(box, np.zeros(box.size), UNIT, (int(box.index(np.zeros(dim, dtype=int))), amp))
    nrm = np.linalg.norm(vals)
    v = vals / nrm
    Hv = H.apply(v)
    rq = float(v @ Hv)
    res = float(np.linalg.norm(Hv - E * v))
    return DeltaEigenpair(float(E), amp, kernel.u0, DiscreteField(box, v), res, rq, H)


@dataclass
class RayRow:
    slope: RaySlope
    passed: bool


def optimality_experiment(E: float, dim: int, N: int, directions, n_range, shift: float = 0.1) -> list[RayRow]:
    """Rates ``-log u(n dir)`` along rays against ``rho_E(dir)``.

    Each ray uses a contour-shifted kernel with ``eta = (1 - shift) xi*`` where
    ``xi*`` maximizes ``<xi, dir>`` over ``{q <= |E|}``; this keeps relative
    accuracy at sites where ``u`` is far below double-precision round-off.
    PASS compares the last-step slope at the largest n with ``rho_E(dir)``.
    """
    lo, hi = int(n_range[0]), int(n_range[1])
    if not 1 <= lo < hi:
        raise PreconditionError("n_range must satisfy 1 <= n_min < n_max")
    rows = []
    for direction in directions:
        dvec = np.asarray(direction, dtype=np.int64)
        if hi * np.abs(dvec).max() > N // 4:
            raise PreconditionError(f"ray {tuple(direction)} leaves the safe zone |x|_inf <= N/4 = {N // 4}")
        xi_star = support_function(abs(E) / 4.0, dvec.astype(float)).maximizer
        kernel = free_resolvent_kernel(E, dim, N, eta=(1.0 - shift) * xi_star)
        slope = ray_rate_slopes(lambda s, k=kernel: -k.log_value(s), [dvec], (lo, hi), E)[0]
        rows.append(RayRow(slope, slope.relative_error("local") <= OPTIMALITY_TOL))
    return rows
