"""Agmon-Finsler metric: support function, graph distance, free rate function.

The metric at ``x`` for energy ``E`` is the support function of the convex body
``K_x = {xi : sum_j sinh(xi_j/2)^2 <= m}`` with ``m = (V(x) - E)_+ / 4``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import gcd
from functools import reduce
from itertools import product

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.csgraph import dijkstra

from .lattice import write_dfield
from .potential import PotentialSpec

BISECTION_STEPS = 60
NEWTON_STEPS = 3
SIMPSON_WEIGHTS = {3: np.array([1.0, 4.0, 1.0]) / 6.0, 5: np.array([1.0, 4.0, 2.0, 4.0, 1.0]) / 12.0}


class EmptySourceError(ValueError):
    """No grid node lies in the classically allowed region."""


@dataclass
class SupportResult:
    value: float
    maximizer: np.ndarray
    multiplier: float | None = None


def _half_sinh2(s):
    # sinh(arsinh(s)/2)^2 = (sqrt(1+s^2) - 1)/2, written without cancellation
    s2 = s * s
    return s2 / (2.0 * (np.sqrt(1.0 + s2) + 1.0))


def _support_core(m, v, fast: bool = False):
    """Vectorized dual solve.  ``m`` has shape (n,), ``v`` shape (n, d).

    Returns ``(L, xi, lam)``; rows with ``m == 0`` or ``v == 0`` give zeros and
    ``lam = nan``.  The default path bisects in ``log(lam)`` and polishes with
    Newton; ``fast`` runs bracket-safeguarded Newton to convergence instead,
    which is what bulk edge-weight evaluation uses.
    """
    m = np.asarray(m, dtype=float)
    v = np.asarray(v, dtype=float)
    n, d = v.shape
    L = np.zeros(n)
    xi = np.zeros((n, d))
    lam = np.full(n, np.nan)
    vinf = np.abs(v).max(axis=1) if d else np.zeros(n)
    live = (m > 0) & (vinf > 0)
    if not np.any(live):
        return L, xi, lam
    mm, vv, vi = m[live], v[live], vinf[live]

    def g(u, rows=slice(None)):
        return _half_sinh2(2.0 * vv[rows] * np.exp(-u)[:, None]).sum(axis=1) - mm[rows]

    def dg(u, rows=slice(None)):
        # derivative in u = log(lam) of (sqrt(1+s^2)-1)/2 with s = 2v e^{-u}
        s = 2.0 * vv[rows] * np.exp(-u)[:, None]
        return -(s * s / (2.0 * np.sqrt(1.0 + s * s))).sum(axis=1)

    # exact bracket: the largest component alone reaches m at lo; with all
    # components equal to |v|_inf the sum is m at hi
    md = mm / d
    lo = np.log(vi / np.sqrt(mm * (1.0 + mm)))
    hi = np.log(vi / np.sqrt(md * (1.0 + md)))
    if fast:
        u = 0.5 * (lo + hi)
        act = np.arange(u.size)
        for _ in range(100):
            ua = u[act]
            gu = g(ua, act)
            conv = np.abs(gu) <= 1e-13 * mm[act]
            act, ua, gu = act[~conv], ua[~conv], gu[~conv]
            if act.size == 0:
                break
            la = np.where(gu > 0, ua, lo[act])
            ha = np.where(gu > 0, hi[act], ua)
            lo[act], hi[act] = la, ha
            nxt = ua - gu / dg(ua, act)
            bad = ~((nxt > la) & (nxt < ha))
            nxt[bad] = 0.5 * (la[bad] + ha[bad])
            u[act] = nxt
    else:
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            pos = g(mid) > 0
            lo = np.where(pos, mid, lo)
            hi = np.where(pos, hi, mid)
        u = 0.5 * (lo + hi)
        for _ in range(NEWTON_STEPS):
            u = np.clip(u - g(u) / dg(u), lo, hi)
    x = np.arcsinh(2.0 * vv * np.exp(-u)[:, None])
    L[live] = (vv * x).sum(axis=1)
    xi[live] = x
    lam[live] = np.exp(u)
    return L, xi, lam


def support_function(m: float, v) -> SupportResult:
    """``sup { <xi, v> : sum_j sinh(xi_j/2)^2 <= m }`` by a scalar dual root-find."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if m < 0:
        raise ValueError("m must be non-negative")
    if not np.all(np.isfinite(v)):
        raise ValueError("v must be finite")
    L, xi, lam = _support_core(np.array([m]), v[None, :])
    return SupportResult(float(L[0]), xi[0], None if np.isnan(lam[0]) else float(lam[0]))


def support_values(m, v, fast: bool = False) -> np.ndarray:
    """Batched support function values: ``m`` shape (n,), ``v`` shape (n, d) or (d,)."""
    m = np.atleast_1d(np.asarray(m, dtype=float))
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = np.broadcast_to(v, (m.size, v.size))
    return _support_core(m, v, fast)[0]


@dataclass(frozen=True)
class AgmonProblem:
    potential: PotentialSpec
    energy: float

    @property
    def dim(self) -> int:
        return self.potential.dim

    def budget(self, x) -> np.ndarray:
        """``m(x) = (V(x) - E)_+ / 4`` at points of shape (n, d)."""
        return np.maximum(self.potential(np.atleast_2d(x)) - self.energy, 0.0) / 4.0


def metric_length(problem: AgmonProblem, x, v) -> float:
    m = float(problem.budget(np.asarray(x, dtype=float).reshape(1, -1))[0])
    return support_function(m, v).value


def rho_E(E: float, x) -> float:
    """Free-lattice decay rate ``sup { <x, xi> : q(xi) <= |E| }``."""
    if not E < 0:
        raise ValueError("rho_E needs E < 0")
    return support_function(abs(E) / 4.0, x).value


def rho_E_batch(E: float, x) -> np.ndarray:
    if not E < 0:
        raise ValueError("rho_E needs E < 0")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return support_values(np.full(x.shape[0], abs(E) / 4.0), x)


def eikonal_residual(E: float, x) -> float:
    """``|q(grad rho_E(x)) - |E||`` with central differences of step ``1e-5 |x|``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    r = np.linalg.norm(x)
    if r == 0:
        raise ValueError("x must be nonzero")
    step = 1e-5 * r
    pts = np.concatenate([x + step * np.eye(x.size), x - step * np.eye(x.size)])
    vals = rho_E_batch(E, pts)
    grad = (vals[: x.size] - vals[x.size :]) / (2.0 * step)
    q = 4.0 * np.sum(np.sinh(grad / 2.0) ** 2)
    return float(abs(q - abs(E)))


# ---------------------------------------------------------------- graph distance


def stencil_offsets(dim: int, S: int) -> np.ndarray:
    """Integer offsets with max-norm <= S and coprime components."""
    if S < 1:
        raise ValueError("stencil radius must be >= 1")
    out = [
        off
        for off in product(range(-S, S + 1), repeat=dim)
        if any(off) and reduce(gcd, (abs(c) for c in off)) == 1
    ]
    return np.array(out, dtype=np.int64)


@dataclass
class DistanceField:
    """Distance ``d_E`` on the grid ``pitch * n`` with ``|n_j| <= radii[j]``.

    ``values`` is indexed ``[n_1, ..., n_d]`` (axis j is coordinate j).
    """

    energy: float
    pitch: float
    radii: tuple[int, ...]
    values: np.ndarray
    source: np.ndarray
    stencil: int
    quad_nodes: int
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.radii)

    def axes(self) -> list[np.ndarray]:
        return [self.pitch * np.arange(-r, r + 1) for r in self.radii]

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def sample(self, x) -> np.ndarray:
        """Multilinear interpolation at points (n, d); points must lie on the grid."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        interp = RegularGridInterpolator(self.axes(), self.values, method="linear", bounds_error=True)
        return interp(x)

    def save(self, path) -> None:
        header = {
            "kind": "agmon-distance",
            "E": self.energy,
            "stencil": self.stencil,
            "pitch": self.pitch,
            "radii": list(self.radii),
            "quad_nodes": self.quad_nodes,
            "dim": self.dim,
        }
        header.update(self.meta)
        write_dfield(path, self.values.ravel(), header)


def edge_weights(problem: AgmonProblem, pitch: float, start: np.ndarray, offset, quad_nodes: int = 5, ends=None, stop=None):
    """Simpson integral of ``L(x(t), pitch*offset)`` along straight segments.

    ``ends`` optionally supplies the budgets ``m`` at the two endpoints and
    ``stop`` the end points themselves.  Nodes are ``(1-t) start + t stop`` and
    mirrored nodes are summed in pairs, so reversing a segment reproduces its
    weight bit for bit (mirror-symmetric potentials give symmetric fields).
    """
    if quad_nodes not in SIMPSON_WEIGHTS:
        raise ValueError("quad_nodes must be 3 or 5")
    wts = SIMPSON_WEIGHTS[quad_nodes]
    offset = np.asarray(offset, dtype=float)
    step = pitch * offset
    start = np.atleast_2d(start)
    stop = start + step if stop is None else np.atleast_2d(stop)
    ts = np.linspace(0.0, 1.0, quad_nodes)
    ms = []
    for i, t in enumerate(ts):
        if ends is not None and i in (0, quad_nodes - 1):
            ms.append(ends[0] if i == 0 else ends[1])
        else:
            ms.append(problem.budget((1.0 - t) * start + t * stop))
    # L(m, step) depends on x only through m: one batched solve for all nodes
    vals = support_values(np.concatenate(ms), step, fast=True).reshape(quad_nodes, -1)
    half = quad_nodes // 2
    total = wts[half] * vals[half]
    for i in range(half):
        total = total + wts[i] * (vals[i] + vals[quad_nodes - 1 - i])
    return total


def agmon_distance_field(
    problem: AgmonProblem,
    pitch: float,
    extent,
    stencil: int = 3,
    quad_nodes: int = 5,
    sources=None,
) -> DistanceField:
    """Wide-stencil Dijkstra approximation of the distance to ``{V <= E}``.

    ``extent`` is the half-width of the grid per axis (scalar or sequence).
    ``sources`` optionally overrides the source mask (boolean, grid shaped).
    """
    d = problem.dim
    if not pitch > 0:
        raise ValueError("pitch must be positive")
    extent = np.broadcast_to(np.asarray(extent, dtype=float), (d,))
    radii = tuple(int(math.ceil(e / pitch - 1e-9)) for e in extent)
    shape = tuple(2 * r + 1 for r in radii)
    n_nodes = int(np.prod(shape))
    axes = [pitch * np.arange(-r, r + 1) for r in radii]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    vpts = problem.potential(pts)
    budget = np.maximum(vpts - problem.energy, 0.0) / 4.0
    if sources is None:
        src = vpts <= problem.energy
    else:
        src = np.asarray(sources, dtype=bool).ravel()
    if not src.any():
        raise EmptySourceError(f"no grid node has V <= E = {problem.energy}")

    idx = np.arange(n_nodes).reshape(shape)
    rows, cols, wts = [], [], []
    for off in stencil_offsets(d, stencil):
        # each unordered pair once: keep offsets whose first nonzero entry is positive
        if off[np.flatnonzero(off)[0]] < 0:
            continue
        src_sl, dst_sl = [], []
        for o, w in zip(off, shape):
            if o >= 0:
                src_sl.append(slice(0, w - o))
                dst_sl.append(slice(o, w))
            else:
                src_sl.append(slice(-o, w))
                dst_sl.append(slice(0, w + o))
        a = idx[tuple(src_sl)].ravel()
        b = idx[tuple(dst_sl)].ravel()
        if a.size == 0:
            continue
        w = edge_weights(problem, pitch, pts[a], off, quad_nodes, ends=(budget[a], budget[b]), stop=pts[b])
        rows += [a, b]
        cols += [b, a]
        wts += [w, w]
    graph = sp.csr_matrix(
        (np.concatenate(wts), (np.concatenate(rows), np.concatenate(cols))), shape=(n_nodes, n_nodes)
    )
    # zero-weight edges join two source nodes only, so dropping them is harmless
    dist = dijkstra(graph, directed=True, indices=np.flatnonzero(src), min_only=True)
    dist[src] = 0.0
    return DistanceField(
        problem.energy, float(pitch), radii, dist.reshape(shape), src.reshape(shape), stencil, quad_nodes
    )


# ---------------------------------------------------------------- box sizing


def shell_min(spec: PotentialSpec, r: float, samples: int = 64) -> float:
    """Minimum of V sampled on the sup-norm sphere ``|x|_inf = r``."""
    d = spec.dim
    if d == 1:
        return float(spec(np.array([[-r], [r]])).min())
    t = np.linspace(-r, r, samples)
    best = np.inf
    for axis in range(d):
        for sgn in (-1.0, 1.0):
            grids = np.meshgrid(*([t] * (d - 1)), indexing="ij")
            face = np.stack([g.ravel() for g in grids], axis=1)
            pts = np.insert(face, axis, sgn * r, axis=1)
            best = min(best, float(spec(pts).min()))
    return best


def allowed_radius(spec: PotentialSpec, E: float, step: float = 0.05, r_max: float = 1e3) -> float:
    """Smallest scanned ``R`` with ``V > E`` on every shell from R to R + 2."""
    r, run_start, clear = 0.0, None, 0.0
    while r <= r_max:
        if shell_min(spec, r) > E:
            if run_start is None:
                run_start = r
            clear += step
            if clear >= 2.0:
                return run_start
        else:
            run_start, clear = None, 0.0
        r += step
    raise ValueError(f"V does not stay above E = {E} within |x| <= {r_max}")


def agmon_box_radius(spec: PotentialSpec, E: float, h: float, margin: float = 25.0, step: float | None = None) -> float:
    """Radius beyond which the Agmon distance to ``{V <= E}`` exceeds ``margin * h``.

    Uses the lower bound ``L(x, v) >= |v|_inf * 2 arsinh(sqrt(m))`` integrated over
    sup-norm shells, with V replaced by its minimum on each shell.
    """
    r0 = allowed_radius(spec, E)
    step = step or max(h / 4.0, 0.005)
    r, acc = r0, 0.0
    while acc < margin * h:
        m = max(shell_min(spec, r) - E, 0.0) / 4.0
        acc += 2.0 * math.asinh(math.sqrt(m)) * step
        r += step
        if r > r0 + 1e3:
            raise ValueError("Agmon margin not reached; V may approach E at infinity")
    return r
