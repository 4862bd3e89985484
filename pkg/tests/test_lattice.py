import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specdisc.lattice import (
    UNIT,
    DiscreteField,
    LatticeSizeError,
    assemble_hamiltonian,
    build_box,
    read_dfield,
    write_dfield,
)
from specdisc.potential import PotentialError, PotentialSpec

ZERO = {d: PotentialSpec.from_source("0", d) for d in (1, 2, 3)}


def test_site_counts():
    assert build_box(1, 0.1, [10]).size == 21
    assert build_box(2, 1.0, [2, 3]).size == 35
    with pytest.raises(LatticeSizeError):
        build_box(3, 0.5, [200, 200, 200])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3).flatmap(lambda d: st.lists(st.integers(1, 6), min_size=d, max_size=d)))
def test_index_map_is_bijective(radii):
    box = build_box(len(radii), 0.5, radii)
    idx = np.arange(box.size)
    sites = box.site(idx)
    assert np.array_equal(box.index(sites), idx)
    assert len({tuple(s) for s in sites}) == box.size
    # axis 1 varies fastest
    assert np.array_equal(sites[1] - sites[0], np.eye(len(radii), dtype=int)[0])


def test_delta_stencil_d1():
    box = build_box(1, 0.1, [5])
    H = assemble_hamiltonian(ZERO[1], box)
    u = np.zeros(box.size)
    u[box.index([0])] = 1.0
    Hu = H @ u
    assert Hu[box.index([0])] == 2.0
    assert Hu[box.index([1])] == -1.0 and Hu[box.index([-1])] == -1.0
    assert np.count_nonzero(Hu) == 3


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_constant_field_counts_missing_neighbours(dim):
    box = build_box(dim, 0.2, [3] * dim)
    H = assemble_hamiltonian(ZERO[dim], box)
    Hu = H @ np.ones(box.size)
    n = box.integer_sites()
    missing = np.sum(np.abs(n) == 3, axis=1)
    assert np.array_equal(Hu, missing.astype(float))


@pytest.mark.parametrize("dim", [1, 2])
def test_plane_wave_eigenfunction_at_interior(dim):
    h = 0.1
    box = build_box(dim, h, [6] * dim)
    xi0 = np.array([0.7, -1.3][:dim])
    u = np.exp(1j * box.coords() @ xi0 / h)
    Hu = assemble_hamiltonian(ZERO[dim], box) @ u
    interior = ~box.boundary_mask()
    p0 = np.sum(2 - 2 * np.cos(xi0))
    assert np.allclose(Hu[interior], p0 * u[interior], atol=1e-13)


def random_operator(dim, seed):
    rng = np.random.default_rng(seed)
    radii = rng.integers(1, 5, size=dim)
    box = build_box(dim, 0.3, radii)
    spec = PotentialSpec.from_source(["x1^2-2*exp(-x1^2)", "x1^2-3*exp(-x1^2-x2^2)+0.5*x2", "x1*x2-x3^2+1"][dim - 1], dim)
    return assemble_hamiltonian(spec, box), rng


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_symmetry_linearity(dim):
    H, rng = random_operator(dim, dim)
    for _ in range(50):
        u, w = rng.normal(size=(2, H.size))
        lhs, rhs = np.dot(H @ u, w), np.dot(u, H @ w)
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)
        a, b = rng.normal(size=2)
        assert np.allclose(H @ (a * u + b * w), a * (H @ u) + b * (H @ w), rtol=0, atol=1e-14 * np.abs(H @ u).max() * 10)


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_gershgorin_enclosure(dim):
    H, _ = random_operator(dim, 10 + dim)
    ev = np.linalg.eigvalsh(H.to_dense())
    V = H.potential
    assert ev.min() >= V.min() - 1e-9 and ev.max() <= V.max() + 4 * dim + 1e-9
    lo, hi = H.gershgorin()
    assert lo <= ev.min() and ev.max() <= hi


def test_dirichlet_monotonicity():
    spec = PotentialSpec.from_source("x1^2-2*exp(-x1^2)", 1)
    lows = [np.linalg.eigvalsh(assemble_hamiltonian(spec, build_box(1, 0.2, [r])).to_dense())[0] for r in range(2, 20)]
    assert all(b <= a + 1e-14 for a, b in zip(lows, lows[1:]))


def test_banded_export_small_d1():
    H = assemble_hamiltonian(ZERO[1], build_box(1, 1.0, [2]))
    ab = H.export_banded()
    assert H.bandwidth == 1
    assert np.array_equal(ab[0], [2, 2, 2, 2, 2])
    assert np.array_equal(ab[1, :4], [-1, -1, -1, -1])


def band_to_dense(ab):
    n = ab.shape[1]
    A = np.zeros((n, n))
    for k in range(ab.shape[0]):
        idx = np.arange(n - k)
        A[idx + k, idx] = ab[k, : n - k]
        A[idx, idx + k] = ab[k, : n - k]
    return A


@pytest.mark.parametrize("dim, radii", [(1, [7]), (2, [1, 1]), (2, [3, 2]), (3, [2, 1, 2])])
def test_banded_matches_apply(dim, radii):
    spec = PotentialSpec.from_source(["x1^2", "x1^2+x2", "x1+x2*x3"][dim - 1], dim)
    H = assemble_hamiltonian(spec, build_box(dim, 0.5, radii))
    widths = [2 * r + 1 for r in radii]
    assert H.bandwidth == int(np.prod(widths[:-1]))
    A = band_to_dense(H.export_banded())
    for i in range(H.size):
        e = np.zeros(H.size)
        e[i] = 1.0
        assert np.array_equal(A[:, i], H @ e)
    assert np.array_equal(A, H.to_dense())


def test_band_cap():
    H = assemble_hamiltonian(ZERO[2], build_box(2, 1.0, [10, 10]))
    with pytest.raises(LatticeSizeError):
        H.export_banded(cap=100)


def test_delta_only_in_unit_mode():
    spec = PotentialSpec.named("delta", 2, amplitude=-2.5, site=[0, 0])
    with pytest.raises(PotentialError):
        assemble_hamiltonian(spec, build_box(2, 0.5, [2, 2]))
    with pytest.raises(ValueError):
        assemble_hamiltonian(spec, build_box(2, 0.5, [2, 2]), UNIT)
    H = assemble_hamiltonian(spec, build_box(2, 1.0, [2, 2]), UNIT)
    d = H.diagonal()
    assert d[H.box.index([0, 0])] == 4 - 2.5
    assert np.count_nonzero(d != 4) == 1


def test_field_and_dfield_round_trip(tmp_path):
    box = build_box(2, 0.25, [3, 2])
    vals = np.random.default_rng(0).normal(size=box.size)
    f = DiscreteField(box, vals)
    f.save(tmp_path / "f.dfield", note="x")
    g = DiscreteField.load(tmp_path / "f.dfield")
    assert g.box == box and np.array_equal(g.values, vals)
    z = vals + 1j * vals[::-1]
    write_dfield(tmp_path / "z.dfield", z, {"dim": 2})
    head, back = read_dfield(tmp_path / "z.dfield")
    assert head["complex"] and head["count"] == box.size and np.array_equal(back, z)
    raw = (tmp_path / "f.dfield").read_bytes()
    assert raw.split(b"\n", 1)[0].startswith(b"{")
    assert np.array_equal(np.frombuffer(raw.split(b"\n", 1)[1], dtype="<f8"), vals)


def test_field_validation():
    box = build_box(1, 0.5, [2])
    with pytest.raises(ValueError):
        DiscreteField(box, np.zeros(4))
    with pytest.raises(ValueError):
        DiscreteField(box, np.array([0, 1, np.nan, 0, 0]))
    assert DiscreteField(box, np.ones(5)).at([0]) == 1.0
