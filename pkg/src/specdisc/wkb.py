"""Leading-order WKB data: harmonic levels in any dimension, phase/amplitude in d=1.

Near a nondegenerate minimum the operator behaves like ``-h^2 Laplacian + V``,
so with ``lambda_j^2`` the eigenvalues of ``V''(0)/2`` the low levels are
``h * sum_j lambda_j (2 alpha_j + 1)``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Chebyshev
from scipy.interpolate import CubicSpline

from .finsler import AgmonProblem, agmon_distance_field
from .lattice import assemble_hamiltonian, build_box, write_dfield
from .potential import PotentialSpec
from .spectral import lanczos_extremal

FD_STEP = 1e-4
MIN_TOL = 1e-6


class WkbError(ValueError):
    pass


# ---------------------------------------------------------------- harmonic levels


def _hessian(spec: PotentialSpec, step: float = FD_STEP):
    d = spec.dim
    e = np.eye(d) * step
    v0 = float(spec(np.zeros((1, d)))[0])
    grad = np.array([(spec(e[i][None])[0] - spec(-e[i][None])[0]) / (2 * step) for i in range(d)])
    hess = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            pts = np.array([e[i] + e[j], e[i] - e[j], -e[i] + e[j], -e[i] - e[j]])
            f = spec(pts)
            hess[i, j] = (f[0] - f[1] - f[2] + f[3]) / (4 * step * step)
    return v0, grad, 0.5 * (hess + hess.T)


@dataclass
class HessianData:
    lambdas: np.ndarray  # ascending, sqrt of eigenvalues of V''(0)/2
    half_hessian: np.ndarray
    levels: dict  # multi-index -> E_0
    unique: dict  # multi-index -> no other multi-index gives the same level
    residual: float  # eigen-decomposition check of V''(0)/2

    def ground(self) -> float:
        return level_of(self.lambdas, (0,) * self.lambdas.size)


def level_of(lambdas, alpha) -> float:
    return float(np.sum(np.asarray(lambdas) * (2 * np.asarray(alpha) + 1)))


def _same_level(lambdas, alpha, tol):
    """Every multi-index whose level equals that of ``alpha`` (within tol)."""
    target = level_of(lambdas, alpha)
    base = float(np.sum(lambdas))
    caps = [int(math.floor((target - base + tol) / (2 * lam))) for lam in lambdas]
    hits = []
    for beta in itertools.product(*[range(c + 1) for c in caps]):
        if abs(level_of(lambdas, beta) - target) <= tol:
            hits.append(beta)
    return hits


def harmonic_levels(spec: PotentialSpec, multi_indices=None) -> HessianData:
    """Frequencies at the minimum ``x = 0`` and the levels ``sum lambda_j (2 alpha_j + 1)``."""
    d = spec.dim
    v0, grad, hess = _hessian(spec)
    if abs(v0) > MIN_TOL or np.max(np.abs(grad)) > MIN_TOL:
        raise WkbError(f"x = 0 is not a critical point with V = 0 (V = {v0:.3g}, |grad| = {np.max(np.abs(grad)):.3g})")
    half = 0.5 * hess
    w, vecs = np.linalg.eigh(half)
    if w[0] <= MIN_TOL:
        raise WkbError(f"V''(0) is not positive definite (smallest half-eigenvalue {w[0]:.3g})")
    residual = float(np.max(np.abs(half @ vecs - vecs * w)))
    lambdas = np.sqrt(w)
    if multi_indices is None:
        multi_indices = [(0,) * d]
    tol = 1e-9 * max(1.0, float(lambdas.max()))
    levels, unique = {}, {}
    for alpha in multi_indices:
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != d or min(alpha) < 0:
            raise ValueError(f"multi-index {alpha} must have {d} non-negative entries")
        levels[alpha] = level_of(lambdas, alpha)
        unique[alpha] = len(_same_level(lambdas, alpha, tol)) == 1
    return HessianData(lambdas, half, levels, unique, residual)


# ---------------------------------------------------------------- phase


def _adaptive_simpson(f, a, b, tol=1e-14, depth=50):
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4 * fm + fb)

    def rec(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6.0 * (fa + 4 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4 * frm + fb)
        if depth <= 0 or abs(left + right - whole) <= 15 * tol:
            return left + right + (left + right - whole) / 15.0
        return rec(a, m, fa, flm, fm, left, tol / 2, depth - 1) + rec(m, b, fm, frm, fb, right, tol / 2, depth - 1)

    return rec(a, b, fa, fm, fb, whole, tol, depth)


def phase_derivative(spec: PotentialSpec, x) -> np.ndarray:
    """``phi'(x) = sign(x) 2 arsinh(sqrt(V(x)) / 2)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    V = np.maximum(spec(x[:, None]), 0.0)
    return np.sign(x) * 2.0 * np.arcsinh(np.sqrt(V) / 2.0)


def grid_1d(half_width: float, pitch: float) -> np.ndarray:
    n = int(round(half_width / pitch))
    if abs(n * pitch - half_width) > 1e-9 * max(1.0, half_width):
        raise ValueError("half_width must be a multiple of pitch")
    return pitch * np.arange(-n, n + 1)


def eikonal_phase_1d(spec: PotentialSpec, half_width: float, pitch: float, tol: float = 1e-14) -> tuple[np.ndarray, np.ndarray]:
    """Phase on the grid ``pitch * n`` over ``[-half_width, half_width]``.

    Integrates ``phi'`` cell by cell outward from 0 with adaptive Simpson.
    """
    if spec.dim != 1:
        raise WkbError("the phase construction is one-dimensional")
    x = grid_1d(half_width, pitch)
    V = spec(x[:, None])
    if np.any(V < 0):
        raise WkbError(f"V < 0 on the domain (min {V.min():.3g})")
    if np.any(V[x != 0] <= 0):
        raise WkbError("V must be positive away from 0")

    def dphi(t):
        return 2.0 * math.asinh(math.sqrt(max(float(spec(np.array([[t]]))[0]), 0.0)) / 2.0)

    phi = np.zeros_like(x)
    c = x.size // 2
    for side in (1, -1):
        acc = 0.0
        for i in range(1, c + 1):
            a, b = abs(x[c + side * (i - 1)]), abs(x[c + side * i])
            acc += _adaptive_simpson(lambda t: dphi(side * t), a, b, tol)
            phi[c + side * i] = acc
    return x, phi


def phase_equals_distance_check(spec: PotentialSpec, half_width: float = 1.0, pitch: float = 0.005, stencil: int = 3) -> float:
    """``max |phi - d_0|`` with ``d_0`` the graph distance to ``{V <= 0}`` at energy 0."""
    x, phi = eikonal_phase_1d(spec, half_width, pitch)
    dist = agmon_distance_field(AgmonProblem(spec, 0.0), pitch, half_width, stencil)
    return float(np.max(np.abs(dist.values.ravel() - phi)))


# ---------------------------------------------------------------- transport


def _series_mul(a, b):
    return np.convolve(a, b)[: a.size]


def _series_inv(a):
    out = np.zeros_like(a)
    out[0] = 1.0 / a[0]
    for k in range(1, a.size):
        out[k] = -np.dot(a[1 : k + 1], out[k - 1 :: -1][:k]) / a[0]
    return out


def _series_sqrt(a):
    # b^2 = a with b[0] = sqrt(a[0])
    out = np.zeros_like(a)
    out[0] = math.sqrt(a[0])
    for k in range(1, a.size):
        out[k] = (a[k] - np.dot(out[1:k], out[k - 1 : 0 : -1])) / (2 * out[0])
    return out


def taylor_coefficients(spec: PotentialSpec, degree: int = 8, radius: float = 0.25, nodes: int = 33) -> np.ndarray:
    """Power-series coefficients of V at 0 from a Chebyshev fit on ``[-radius, radius]``."""
    t = radius * np.cos(np.pi * (np.arange(nodes) + 0.5) / nodes)
    cheb = Chebyshev.fit(t, spec(t[:, None]), degree, domain=[-radius, radius])
    return cheb.convert(kind=np.polynomial.Polynomial, domain=[-1, 1], window=[-1, 1]).coef


def log_amplitude_series(spec: PotentialSpec, E0: float, terms: int = 4) -> np.ndarray:
    """Coefficients ``b_1..b_terms`` of ``log a0(x) = sum_k b_k x^k`` near 0."""
    K = terms + 4
    c = np.zeros(K + 3)
    fit = taylor_coefficients(spec, degree=min(K + 2, 12))
    c[: min(fit.size, c.size)] = fit[: c.size]
    c[:2] = 0.0  # V(0) = V'(0) = 0
    W = c[2 : 2 + K]  # V / x^2
    dV_over_x = np.array([(k + 2) * c[k + 2] for k in range(K)])  # V'/x
    Vs = np.concatenate([[0.0, 0.0], W[: K - 2]])  # V itself, truncated
    A = _series_sqrt(np.eye(1, K, 0).ravel() + Vs / 4.0)  # sqrt(1 + V/4)
    rootW = _series_sqrt(W)
    two_a_rw = 2.0 * _series_mul(A, rootW)
    cosh = np.eye(1, K, 0).ravel() + Vs / 2.0
    num = -_series_mul(cosh, _series_mul(dV_over_x, _series_inv(two_a_rw)))
    num[0] += E0
    if abs(num[0]) > 1e-6 * max(1.0, abs(E0)):
        raise WkbError(
            f"transport equation is singular at 0: E0 = {E0} differs from the removable value {E0 - num[0]}"
        )
    rhs = _series_mul(np.append(num[1:], 0.0), _series_inv(two_a_rw))  # (num/x) / (2 A sqrt W)
    return np.array([rhs[k] / (k + 1) for k in range(terms)])


def transport_rhs(spec: PotentialSpec, E0: float, x) -> np.ndarray:
    """``(E0 - cosh(phi') phi'') / (2 sinh(phi'))`` for ``x != 0``.

    Uses ``sinh(phi') = s sqrt(1 + V/4)``, ``cosh(phi') = 1 + V/2`` and
    ``phi'' = V' / (2 s sqrt(1 + V/4))`` with ``s = sign(x) sqrt(V)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    dx = 1e-3 * np.maximum(1.0, np.abs(x))
    f = [spec((x + k * dx)[:, None]) for k in (-2, -1, 1, 2)]
    dV = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * dx)
    V = spec(x[:, None])
    s = np.sign(x) * np.sqrt(V)
    A = np.sqrt(1.0 + V / 4.0)
    phi2 = dV / (2.0 * s * A)
    return (E0 - (1.0 + V / 2.0) * phi2) / (2.0 * s * A)


@dataclass
class WkbSolution:
    x: np.ndarray
    phi: np.ndarray
    a0: np.ndarray
    E0: float
    lam: float
    pitch: float
    seed_radius: float
    meta: dict = field(default_factory=dict)

    def eikonal_residual(self, spec: PotentialSpec) -> float:
        d = phase_derivative(spec, self.x)
        return float(np.max(np.abs(4.0 * np.sinh(d / 2.0) ** 2 - spec(self.x[:, None]))))

    def save(self, prefix) -> None:
        meta = {"E0": self.E0, "lambda": self.lam, "pitch": self.pitch, "seed_radius": self.seed_radius,
                "domain": [float(self.x[0]), float(self.x[-1])], **self.meta}
        write_dfield(f"{prefix}.phi.dfield", self.phi, {"kind": "wkb-phase", **meta})
        write_dfield(f"{prefix}.a0.dfield", self.a0, {"kind": "wkb-amplitude", **meta})
        with open(f"{prefix}.json", "w") as fh:
            json.dump(meta, fh, sort_keys=True, indent=2)


def transport_a0_1d(spec: PotentialSpec, x: np.ndarray, E0: float, seed_terms: int = 4, seed_cells: int = 10) -> np.ndarray:
    """Amplitude with ``a0(0) = 1`` solving ``(L - E0) a0 = 0`` on the grid ``x``.

    A Taylor seed of ``log a0`` covers ``|x| <= seed_cells * pitch``; beyond it
    RK4 integrates ``(log a0)' = rhs(x)`` outward from the seed edge.
    """
    pitch = float(x[1] - x[0])
    c = x.size // 2
    if abs(x[c]) > 1e-12 * pitch:
        raise ValueError("grid must be centred on 0")
    b = log_amplitude_series(spec, E0, seed_terms)
    seed_r = seed_cells * pitch
    loga = np.zeros_like(x)
    inner = np.abs(x) <= seed_r + 1e-12 * pitch
    xi = x[inner]
    loga[inner] = sum(bk * xi ** (k + 1) for k, bk in enumerate(b))
    for side in (1, -1):
        i0 = c + side * seed_cells
        y = loga[i0]
        for i in range(seed_cells, c):
            t0 = x[c + side * i]
            t1 = x[c + side * (i + 1)]
            f0, fm, f1 = transport_rhs(spec, E0, np.array([t0, 0.5 * (t0 + t1), t1]))
            y += (t1 - t0) / 6.0 * (f0 + 4 * fm + f1)
            loga[c + side * (i + 1)] = y
    return np.exp(loga)


def transport_residual(spec: PotentialSpec, x: np.ndarray, a0: np.ndarray, E0: float, exclude: float) -> float:
    """``max |(L - E0) a0|`` with ``a0'`` from 5-point differences, for ``|x| > exclude``."""
    pitch = float(x[1] - x[0])
    da = np.full_like(a0, np.nan)
    da[2:-2] = (a0[:-4] - 8 * a0[1:-3] + 8 * a0[3:-1] - a0[4:]) / (12 * pitch)
    sel = (np.abs(x) > exclude) & np.isfinite(da)
    xs = x[sel]
    V = spec(xs[:, None])
    s = np.sign(xs) * np.sqrt(V)
    A = np.sqrt(1.0 + V / 4.0)
    sinh = s * A
    rhs = transport_rhs(spec, E0, xs)
    # (L - E0) a = 2 sinh(phi') a' + (cosh(phi') phi'' - E0) a = 2 sinh(phi') (a' - rhs a)
    res = 2.0 * sinh * (da[sel] - rhs * a0[sel])
    return float(np.max(np.abs(res)))


def wkb_solution(spec: PotentialSpec, half_width: float, pitch: float, seed_cells: int = 10) -> WkbSolution:
    levels = harmonic_levels(spec)
    E0 = levels.ground()
    x, phi = eikonal_phase_1d(spec, half_width, pitch)
    a0 = transport_a0_1d(spec, x, E0, seed_cells=seed_cells)
    return WkbSolution(x, phi, a0, E0, float(levels.lambdas[0]), pitch, seed_cells * pitch)


# ---------------------------------------------------------------- quasimode


@dataclass
class QuasimodeResidual:
    h: float
    E: float
    ratio: float  # ||(H - h E) psi|| / ||psi|| over the window
    window: tuple[float, float]
    sites: int


def default_window(sol: WkbSolution) -> tuple[float, float]:
    level = 0.5 * min(sol.phi[0], sol.phi[-1])
    inside = sol.x[sol.phi <= level]
    return float(inside.min()), float(inside.max())


def quasimode_residual(spec: PotentialSpec, h: float, sol: WkbSolution, E: float | None = None, window=None) -> QuasimodeResidual:
    """Residual of ``a0 exp(-phi/h)`` against ``H(h) - h E`` on lattice sites in the window."""
    E = sol.E0 if E is None else float(E)
    lo, hi = default_window(sol) if window is None else window
    n = np.arange(math.ceil(lo / h - 1e-9), math.floor(hi / h + 1e-9) + 1)
    xs = h * np.concatenate([[n[0] - 1], n, [n[-1] + 1]])
    if xs[0] < sol.x[0] - 1e-12 or xs[-1] > sol.x[-1] + 1e-12:
        raise WkbError("window plus one lattice step must stay inside the construction domain")
    ratio = h / sol.pitch
    if abs(ratio - round(ratio)) < 1e-9:
        idx = np.rint((xs - sol.x[0]) / sol.pitch).astype(int)
        phi, a0 = sol.phi[idx], sol.a0[idx]
    else:
        phi = CubicSpline(sol.x, sol.phi)(xs)
        a0 = CubicSpline(sol.x, sol.a0)(xs)
    # work relative to the centre to avoid underflow: psi * exp(phi_min/h)
    psi = a0 * np.exp(-(phi - phi.min()) / h)
    V = spec(xs[:, None])
    res = (2.0 + V[1:-1] - h * E) * psi[1:-1] - psi[:-2] - psi[2:]
    return QuasimodeResidual(h, E, float(np.linalg.norm(res) / np.linalg.norm(psi[1:-1])), (lo, hi), int(n.size))


def loglog_slope(hs, values) -> float:
    return float(np.polyfit(np.log(np.asarray(hs)), np.log(np.asarray(values)), 1)[0])


@dataclass
class AsymptoticsRow:
    h: float
    ground: float
    scaled: float  # E_gs / h
    deviation: float  # E_gs / h - E0
    E1: float  # slope of deviation against h with the next row (nan on the last)


def eigenvalue_asymptotics(spec: PotentialSpec, h_series, half_width: float = 3.0, tol: float = 1e-12, seed: int = 0, E0: float | None = None, max_iter: int = 5000) -> list[AsymptoticsRow]:
    """Ground energies across ``h_series`` compared with ``h E0``.

    E1 is estimated from consecutive pairs as ``(dev_i - dev_j) / (h_i - h_j)``.
    """
    E0 = harmonic_levels(spec).ground() if E0 is None else float(E0)
    rows = []
    for h in h_series:
        box = build_box(spec.dim, h, int(round(half_width / h)))
        res = lanczos_extremal(assemble_hamiltonian(spec, box), "lowest", 1, tol=tol, max_iter=max_iter, seed=seed)
        eg = float(res.values[0])
        rows.append(AsymptoticsRow(float(h), eg, eg / h, eg / h - E0, float("nan")))
    for r, s in zip(rows, rows[1:]):
        r.E1 = (r.deviation - s.deviation) / (r.h - s.h)
    return rows
