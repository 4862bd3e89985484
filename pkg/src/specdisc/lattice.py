"""Truncated lattice boxes and the discrete Schrödinger operator on them.

Sites are ``h*n`` with ``|n_j| <= R_j``; the linear index runs lexicographically
with axis 1 fastest.  Outside the box the field is taken to be zero (Dirichlet).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .potential import PotentialError, PotentialSpec

DEFAULT_SITE_CAP = 5_000_000
DEFAULT_BAND_CAP = 400_000_000  # entries of banded storage

SEMICLASSICAL = "semiclassical"
UNIT = "unit"


class LatticeSizeError(ValueError):
    """Box or banded storage exceeds the configured cap."""


@dataclass(frozen=True)
class LatticeBox:
    dim: int
    h: float
    radii: tuple[int, ...]

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if not self.h > 0:
            raise ValueError("mesh h must be positive")
        if len(self.radii) != self.dim or any(r < 0 for r in self.radii):
            raise ValueError(f"need {self.dim} radii, each >= 0")

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(2 * r + 1 for r in self.radii)

    @property
    def size(self) -> int:
        return int(np.prod(self.widths))

    @property
    def strides(self) -> tuple[int, ...]:
        s, out = 1, []
        for w in self.widths:
            out.append(s)
            s *= w
        return tuple(out)

    @property
    def grid_shape(self) -> tuple[int, ...]:
        # C-order numpy shape, so that axis 1 varies fastest in the flat index
        return tuple(reversed(self.widths))

    def index(self, n) -> np.ndarray:
        """Linear index of integer site(s) ``n`` (shape (..., dim))."""
        n = np.asarray(n, dtype=np.int64)
        r = np.asarray(self.radii)
        if np.any(np.abs(n) > r):
            raise IndexError("site outside the box")
        return np.sum((n + r) * np.asarray(self.strides), axis=-1)

    def site(self, idx) -> np.ndarray:
        """Integer site(s) for linear index(es); inverse of :meth:`index`."""
        idx = np.asarray(idx, dtype=np.int64)
        if np.any((idx < 0) | (idx >= self.size)):
            raise IndexError("index outside the box")
        out = []
        rem = idx
        for w, r in zip(self.widths, self.radii):
            out.append(rem % w - r)
            rem = rem // w
        return np.stack(out, axis=-1)

    def integer_sites(self) -> np.ndarray:
        return self.site(np.arange(self.size))

    def coords(self) -> np.ndarray:
        """Physical coordinates ``h*n`` of every site, shape (N, dim)."""
        return self.h * self.integer_sites().astype(float)

    def boundary_mask(self) -> np.ndarray:
        n = self.integer_sites()
        return np.any(np.abs(n) == np.asarray(self.radii), axis=1)


def build_box(dim: int, h: float, radii, cap: int = DEFAULT_SITE_CAP) -> LatticeBox:
    radii = tuple(int(r) for r in np.broadcast_to(np.asarray(radii), (dim,)))
    box = LatticeBox(dim, float(h), radii)
    if box.size > cap:
        raise LatticeSizeError(f"box has {box.size} sites, cap is {cap}")
    return box


@dataclass
class DiscreteField:
    box: LatticeBox
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != (self.box.size,):
            raise ValueError(f"field has shape {self.values.shape}, box has {self.box.size} sites")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def grid(self) -> np.ndarray:
        return self.values.reshape(self.box.grid_shape)

    def at(self, n) -> np.ndarray:
        return self.values[self.box.index(n)]

    def save(self, path, **extra) -> None:
        header = {"dim": self.box.dim, "h": self.box.h, "radii": list(self.box.radii)}
        header.update(extra)
        write_dfield(path, self.values, header)

    @classmethod
    def load(cls, path) -> "DiscreteField":
        header, values = read_dfield(path)
        return cls(LatticeBox(header["dim"], header["h"], tuple(header["radii"])), values)


# ---------------------------------------------------------------- .dfield files
#
# Layout: one line of UTF-8 JSON (header, always carrying "count" and "complex"),
# a newline, then `count` little-endian float64 values (re/im interleaved when
# complex).


def write_dfield(path, values, header: dict) -> None:
    values = np.asarray(values)
    is_complex = np.iscomplexobj(values)
    head = dict(header)
    head["count"] = int(values.size)
    head["complex"] = bool(is_complex)
    raw = values.astype("<c16" if is_complex else "<f8").ravel().view("<f8")
    with open(path, "wb") as fh:
        fh.write(json.dumps(head, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(raw.tobytes())


def read_dfield(path) -> tuple[dict, np.ndarray]:
    data = Path(path).read_bytes()
    nl = data.index(b"\n")
    header = json.loads(data[:nl].decode("utf-8"))
    raw = np.frombuffer(data[nl + 1 :], dtype="<f8")
    count = header["count"]
    if header.get("complex"):
        values = raw.view("<c16").astype(complex)
    else:
        values = raw.astype(float)
    if values.size != count:
        raise ValueError(f"{path}: header says {count} values, found {values.size}")
    return header, values


# ---------------------------------------------------------------- the operator


@dataclass(frozen=True)
class HamiltonianOp:
    """``(Hu)(x) = -sum_{|x-y|=h} (u(y) - u(x)) + V(x) u(x)`` on a box.

    ``point`` is an optional ``(linear index, amplitude)`` perturbation added to
    the diagonal, used for the delta potential.
    """

    box: LatticeBox
    potential: np.ndarray
    mode: str = SEMICLASSICAL
    point: tuple[int, float] | None = None

    @property
    def size(self) -> int:
        return self.box.size

    def diagonal(self) -> np.ndarray:
        diag = 2.0 * self.box.dim + self.potential
        if self.point is not None:
            diag = diag.copy()
            diag[self.point[0]] += self.point[1]
        return diag

    def gershgorin(self) -> tuple[float, float]:
        diag = self.diagonal()
        off = 2.0 * self.box.dim
        return float(diag.min() - off), float(diag.max() + off)

    def gershgorin_norm(self) -> float:
        lo, hi = self.gershgorin()
        return max(abs(lo), abs(hi))

    def apply(self, u) -> np.ndarray:
        """Stencil application to a flat array (real or complex) of box length."""
        u = np.asarray(u)
        if u.shape != (self.size,):
            raise ValueError(f"vector has shape {u.shape}, operator acts on {self.size} sites")
        g = u.reshape(self.box.grid_shape)
        out = self.diagonal().reshape(self.box.grid_shape) * g
        for ax in range(self.box.dim):
            lo = [slice(None)] * self.box.dim
            hi = [slice(None)] * self.box.dim
            lo[ax] = slice(0, -1)
            hi[ax] = slice(1, None)
            out[tuple(lo)] -= g[tuple(hi)]
            out[tuple(hi)] -= g[tuple(lo)]
        return out.reshape(-1)

    def __matmul__(self, u):
        if isinstance(u, DiscreteField):
            return DiscreteField(self.box, self.apply(u.values))
        return self.apply(u)

    @property
    def bandwidth(self) -> int:
        return self.box.strides[-1]

    def export_banded(self, cap: int = DEFAULT_BAND_CAP) -> np.ndarray:
        """Lower banded storage ``ab[k, i] = H[i+k, i]`` for ``k = 0..bandwidth``."""
        bw = self.bandwidth
        n = self.size
        if (bw + 1) * n > cap:
            raise LatticeSizeError(f"banded storage needs {(bw + 1) * n} entries, cap is {cap}")
        ab = np.zeros((bw + 1, n))
        ab[0] = self.diagonal()
        sites = self.box.integer_sites()
        for ax, stride in enumerate(self.box.strides):
            # coupling between i and i+stride unless i sits on the upper face of axis `ax`
            valid = sites[: n - stride, ax] < self.box.radii[ax]
            ab[stride, : n - stride] = np.where(valid, -1.0, 0.0)
        return ab

    def to_sparse(self) -> sp.csr_matrix:
        n = self.size
        sites = self.box.integer_sites()
        mats = [sp.diags(self.diagonal())]
        for ax, stride in enumerate(self.box.strides):
            valid = sites[: n - stride, ax] < self.box.radii[ax]
            off = np.where(valid, -1.0, 0.0)
            mats.append(sp.diags([off, off], [stride, -stride], shape=(n, n)))
        return sp.csr_matrix(sum(mats[1:], mats[0]))

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()


def assemble_hamiltonian(
    spec: PotentialSpec, box: LatticeBox, mode: str = SEMICLASSICAL
) -> HamiltonianOp:
    if spec.dim != box.dim:
        raise PotentialError(f"potential is {spec.dim}-dimensional, box is {box.dim}-dimensional")
    if mode not in (SEMICLASSICAL, UNIT):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == UNIT and box.h != 1.0:
        raise ValueError("unit-mesh mode needs h = 1")
    if spec.is_delta:
        if mode != UNIT:
            raise PotentialError("the delta potential is only available in unit-mesh mode")
        site = spec.params.get("site", [0] * spec.dim)
        idx = int(box.index(site))
        return HamiltonianOp(box, np.zeros(box.size), mode, (idx, float(spec.params["amplitude"])))
    return HamiltonianOp(box, spec(box.coords()), mode)
