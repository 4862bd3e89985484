"""Extremal eigenpairs (Lanczos) and eigenvalue counts (LDL^T inertia)."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .lattice import DiscreteField, HamiltonianOp

log = logging.getLogger(__name__)

MAX_BASIS = 400
FLOP_WARNING = 1e9


class ConvergenceError(RuntimeError):
    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class InertiaError(RuntimeError):
    pass


@dataclass
class EigenResult:
    values: np.ndarray  # ascending
    vectors: np.ndarray  # (N, k), unit columns
    residuals: np.ndarray  # ||H v - lambda v||
    iterations: int
    seed: int
    converged: bool
    box: object = None

    def fields(self) -> list[DiscreteField]:
        return [DiscreteField(self.box, self.vectors[:, i]) for i in range(self.vectors.shape[1])]


def _orthonormal_start(rng, n, basis, count):
    v = rng.standard_normal(n)
    for _ in range(2):
        if count:
            v -= basis[:, :count] @ (basis[:, :count].T @ v)
    return v / np.linalg.norm(v)


def _krylov_lowest(op, n, k, tol, scale, max_iter, rng, max_basis):
    """Lowest ``k`` Ritz pairs of the symmetric operator ``op`` (thick restart).

    Returns ``(values, vectors, matvecs, converged)`` where convergence uses the
    Ritz residual estimate ``|beta * y_last|``.
    """
    m_max = min(max_basis, n)
    basis = np.zeros((n, m_max + 1))
    T = np.zeros((m_max, m_max))
    basis[:, 0] = _orthonormal_start(rng, n, basis, 0)
    m = 0  # columns whose images are already projected into T
    beta = 0.0
    matvecs = 0

    def small_enough(theta, y):
        est = np.abs(beta * y[m - 1, :k])
        return bool(np.all(est <= tol * (np.abs(theta[:k]) + scale)))

    while True:
        while m < m_max:
            w = op(basis[:, m])
            matvecs += 1
            # classical Gram-Schmidt, done twice
            coef = basis[:, : m + 1].T @ w
            w -= basis[:, : m + 1] @ coef
            corr = basis[:, : m + 1].T @ w
            w -= basis[:, : m + 1] @ corr
            coef += corr
            T[: m + 1, m] = coef
            T[m, : m + 1] = coef
            beta = float(np.linalg.norm(w))
            m += 1
            if m == n:
                beta = 0.0
                break
            if beta <= 1e-13 * scale:
                # invariant subspace found; continue from a fresh orthogonal direction
                basis[:, m] = _orthonormal_start(rng, n, basis, m)
                beta = 0.0
            else:
                basis[:, m] = w / beta
            if matvecs >= max_iter:
                break
            if m >= k and m % 10 == 0:
                theta, y = np.linalg.eigh(T[:m, :m])
                if small_enough(theta, y):
                    break

        theta, y = np.linalg.eigh(T[:m, :m])
        done = small_enough(theta, y)
        if done or matvecs >= max_iter or m == n:
            vecs = basis[:, :m] @ y[:, :k]
            vecs /= np.linalg.norm(vecs, axis=0)
            return theta[:k], vecs, matvecs, done or m == n
        # thick restart: keep the wanted end of the spectrum plus a buffer
        keep = min(m - 1, max(k + 20, m // 2))
        kept = basis[:, :m] @ y[:, :keep]
        basis[:, keep] = basis[:, m]
        basis[:, :keep] = kept
        T[:] = 0.0
        T[np.arange(keep), np.arange(keep)] = theta[:keep]
        m = keep


def lanczos_extremal(
    H: HamiltonianOp,
    which: str = "lowest",
    k: int = 1,
    tol: float = 1e-10,
    max_iter: int = 5000,
    seed: int = 0,
    max_basis: int = MAX_BASIS,
) -> EigenResult:
    """Lanczos with full reorthogonalization and thick restart.

    Convergence means ``||Hv - lambda v|| <= tol * (|lambda| + ||H||_gersh)`` for
    every returned pair.  ``max_iter`` counts matrix-vector products.  On
    failure a :class:`ConvergenceError` carries the partial result.

    A single Krylov space sees one copy of each degenerate eigenvalue, so after
    the first pass the search is repeated on the orthogonal complement of the
    pairs found so far until it turns up nothing below the current k-th value.
    """
    if which not in ("lowest", "highest"):
        raise ValueError("which must be 'lowest' or 'highest'")
    n = H.size
    if not 1 <= k <= min(20, n):
        raise ValueError(f"k must be in 1..min(20, N={n})")
    sign = 1.0 if which == "lowest" else -1.0
    scale = H.gershgorin_norm()

    def residuals(vals, vecs):
        return np.array([np.linalg.norm(H.apply(vecs[:, i]) - vals[i] * vecs[:, i]) for i in range(vals.size)])

    if n <= max(2 * k + 2, 8):
        # tiny problems: the Krylov space is the whole space
        vals, vecs = np.linalg.eigh(sign * H.to_dense())
        vals, vecs = sign * vals[:k], vecs[:, :k]
        order = np.argsort(vals)
        return EigenResult(vals[order], vecs[:, order], residuals(vals, vecs)[order], n, seed, True, H.box)

    rng = np.random.default_rng(seed)
    theta, vecs, matvecs, ok = _krylov_lowest(
        lambda v: sign * H.apply(v), n, k, tol, scale, max_iter, rng, max_basis
    )
    found_vals, found_vecs = theta, vecs
    while ok and found_vals.size < n and matvecs < max_iter:
        V = found_vecs
        lift = 2.0 * scale + 1.0  # pushes found directions above everything else

        def deflated(v, V=V, lift=lift):
            c = V.T @ v
            p = v - V @ c
            out = sign * H.apply(p)
            out -= V @ (V.T @ out)
            return out + lift * (V @ c)

        kk = min(k, n - V.shape[1])
        extra_vals, extra_vecs, used, ok = _krylov_lowest(
            deflated, n, kk, tol, scale, max_iter - matvecs, rng, max_basis
        )
        matvecs += used
        kth = np.sort(found_vals)[k - 1]
        new = extra_vals < kth - tol * (abs(kth) + scale)
        if not np.any(new):
            break
        # Rayleigh-Ritz on the enlarged space keeps the pairs orthonormal
        Q, _ = np.linalg.qr(np.hstack([found_vecs, extra_vecs[:, new]]))
        HQ = np.column_stack([sign * H.apply(Q[:, i]) for i in range(Q.shape[1])])
        matvecs += Q.shape[1]
        t, y = np.linalg.eigh(Q.T @ HQ)
        found_vals, found_vecs = t, Q @ y
    order = np.argsort(found_vals)[:k]
    vals = sign * found_vals[order]
    vecs = found_vecs[:, order]
    res = residuals(vals, vecs)
    order = np.argsort(vals)
    converged = bool(np.all(res <= tol * (np.abs(vals) + scale)))
    result = EigenResult(vals[order], vecs[:, order], res[order], matvecs, seed, converged, H.box)
    if not converged:
        raise ConvergenceError(
            f"Lanczos did not converge in {matvecs} matvecs (max residual {res.max():.3e})", result
        )
    return result


# ---------------------------------------------------------------- inertia


@dataclass
class InertiaCount:
    shift: float  # requested mu
    count: int  # eigenvalues < effective shift
    perturbations: int  # pivot-triggered retries
    effective_shift: float


def _tridiagonal_negatives(diag, off, small):
    # Sturm count for a symmetric tridiagonal matrix; returns None on a tiny pivot
    neg = 0
    p = diag[0]
    if abs(p) < small:
        return None
    neg += p < 0
    off2 = off * off
    for i in range(1, diag.size):
        p = diag[i] - off2[i - 1] / p
        if abs(p) < small:
            return None
        neg += p < 0
    return int(neg)


def _banded_negatives(ab, small):
    """Negative pivots of LDL^T (no pivoting) of a symmetric band matrix.

    ``ab`` is lower band storage.  A dense (bw+1)^2 window slides down the
    diagonal; rows entering the window are untouched originals, since column
    ``j`` only updates rows up to ``j + bw``.
    """
    bw = ab.shape[0] - 1
    n = ab.shape[1]
    # rows[r, t] = A[r, r - bw + t]
    rows = np.zeros((n + bw + 1, bw + 1))
    for k in range(bw + 1):
        rows[k : n, bw - k] = ab[k, : n - k]
    rows[n:, bw] = 1.0  # identity padding past the end
    W = np.zeros((bw + 1, bw + 1))
    for r in range(min(bw + 1, n + bw + 1)):
        W[r, : r + 1] = rows[r, bw - r :]
        W[: r + 1, r] = rows[r, bw - r :]
    neg = 0
    for j in range(n):
        p = W[0, 0]
        if abs(p) < small:
            return None
        neg += p < 0
        col = W[1:, 0]
        W[:-1, :-1] = W[1:, 1:] - np.multiply.outer(col, col / p)
        nxt = rows[j + bw + 1]
        W[-1, :] = nxt
        W[:, -1] = nxt
    return int(neg)


def factorization_flops(H: HamiltonianOp) -> float:
    return float(H.size) * float(H.bandwidth) ** 2


def count_below(H: HamiltonianOp, mu: float, max_retries: int = 3) -> InertiaCount:
    """Number of eigenvalues of the box operator below ``mu`` via Sylvester inertia."""
    scale = max(H.gershgorin_norm(), 1.0)
    small = 1e-12 * scale
    flops = factorization_flops(H)
    if flops > FLOP_WARNING:
        log.warning("banded LDL^T will take about %.2e flops", flops)
    shift = float(mu)
    for attempt in range(max_retries + 1):
        if H.bandwidth == 1:
            diag = H.diagonal() - shift
            off = H.export_banded()[1, :-1]
            neg = _tridiagonal_negatives(diag, off, small)
        else:
            ab = H.export_banded()
            ab[0] -= shift
            neg = _banded_negatives(ab, small)
        if neg is not None:
            return InertiaCount(float(mu), neg, attempt, shift)
        shift += 1e-9 * scale
    raise InertiaError(f"tiny pivot persisted after {max_retries} shifted retries at mu={mu}")


def interval_fuzz(H: HamiltonianOp) -> float:
    return 1e-9 * H.gershgorin_norm()


def count_in_interval(H: HamiltonianOp, a: float, b: float) -> int:
    """Eigenvalues in the closed interval [a, b], up to a fuzz of 1e-9 ||H||."""
    if not a < b:
        raise ValueError("need a < b")
    eps = interval_fuzz(H)
    return count_below(H, b + eps).count - count_below(H, a - eps).count
