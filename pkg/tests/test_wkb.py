import json
import math

import numpy as np
import pytest

from oracles import harmonic_phase
from specdisc.potential import PotentialSpec
from specdisc.wkb import (
    WkbError,
    default_window,
    eikonal_phase_1d,
    harmonic_levels,
    log_amplitude_series,
    phase_derivative,
    phase_equals_distance_check,
    quasimode_residual,
    transport_residual,
    wkb_solution,
)

X2 = PotentialSpec.from_source("x1^2", 1)
ANISO = PotentialSpec.from_source("x1^2+4*x2^2", 2)
ISO = PotentialSpec.from_source("x1^2+x2^2", 2)
QUARTIC = PotentialSpec.from_source("x1^2+x1^4/4", 1)
SKEW = PotentialSpec.from_source("x1^2+x1^3/5", 1)


@pytest.fixture(scope="module")
def sol():
    return wkb_solution(X2, 2.0, 0.005)


def test_frequencies():
    lev = harmonic_levels(X2)
    assert lev.lambdas[0] == pytest.approx(1.0, abs=1e-6)
    assert lev.residual <= 1e-6
    assert np.allclose(harmonic_levels(ANISO).lambdas, [1.0, 2.0], atol=1e-6)


def test_levels_match_lattice_ground_states():
    # levels are sum lambda_j (2 alpha_j + 1): the operator's ground state is h * E0 + O(h^2)
    assert harmonic_levels(X2).ground() == pytest.approx(1.0, abs=1e-6)
    assert harmonic_levels(ANISO).ground() == pytest.approx(3.0, abs=1e-6)
    lev = harmonic_levels(ANISO, [(1, 0), (0, 1), (2, 0)])
    assert lev.levels[(1, 0)] == pytest.approx(5.0, abs=1e-6)
    assert lev.unique[(1, 0)] and not lev.unique[(2, 0)] and not lev.unique[(0, 1)]


@pytest.mark.xfail(strict=True, reason="half-integer level convention disagrees with the lattice operator by a factor 2")
def test_levels_half_integer_convention():
    assert harmonic_levels(X2).ground() == pytest.approx(0.5, abs=1e-6)
    assert harmonic_levels(ANISO).ground() == pytest.approx(1.5, abs=1e-6)


def test_degenerate_level_flag():
    lev = harmonic_levels(ISO, [(1, 0), (0, 1), (0, 0)])
    assert not lev.unique[(1, 0)] and not lev.unique[(0, 1)] and lev.unique[(0, 0)]
    assert lev.levels[(1, 0)] == pytest.approx(lev.levels[(0, 1)], abs=1e-9)


@pytest.mark.parametrize("src", ["x1^2+1", "-x1^2", "(x1-0.3)^2", "x1^4"])
def test_minimum_checks(src):
    with pytest.raises(WkbError):
        harmonic_levels(PotentialSpec.from_source(src, 1))


def test_phase(sol):
    x, phi = sol.x, sol.phi
    c = x.size // 2
    assert phi[c] == 0.0 and np.all(phi >= 0)
    assert np.allclose(phi, phi[::-1], rtol=0, atol=1e-14)
    assert phase_derivative(X2, np.array([1.0]))[0] == pytest.approx(2 * math.asinh(0.5), rel=1e-14)
    k = int(np.argmin(np.abs(x - 1.0)))
    assert abs(phi[k] - harmonic_phase(1.0)) <= 1e-10
    assert np.max(np.abs(phi - harmonic_phase(x))) <= 1e-10
    assert sol.eikonal_residual(X2) <= 1e-10


def test_phase_near_origin():
    x, phi = eikonal_phase_1d(X2, 0.01, 0.001)
    k = int(np.argmin(np.abs(x - 1e-3)))
    assert abs(phi[k] / x[k] ** 2 - 0.5) <= 1e-4


def test_phase_uneven_potential():
    x, phi = eikonal_phase_1d(SKEW, 1.0, 0.01)
    assert phi[x.size // 2] == 0.0
    assert not np.allclose(phi, phi[::-1], atol=1e-6)
    with pytest.raises(WkbError):
        eikonal_phase_1d(ANISO, 1.0, 0.01)
    with pytest.raises(WkbError):
        eikonal_phase_1d(PotentialSpec.from_source("x1^2-x1^4", 1), 1.5, 0.01)


def test_phase_equals_distance():
    coarse = phase_equals_distance_check(X2, 1.0, 0.005, 3)
    fine = phase_equals_distance_check(X2, 1.0, 0.0025, 3)
    assert coarse <= 1e-3
    assert fine < coarse


def test_transport(sol):
    c = sol.x.size // 2
    assert sol.a0[c] == 1.0
    assert np.allclose(sol.a0, sol.a0[::-1], rtol=1e-12)
    assert transport_residual(X2, sol.x, sol.a0, sol.E0, sol.seed_radius) <= 1e-8


def test_transport_anharmonic():
    for spec in (QUARTIC, SKEW):
        s = wkb_solution(spec, 1.0, 0.005)
        assert s.a0[s.x.size // 2] == 1.0
        assert transport_residual(spec, s.x, s.a0, s.E0, s.seed_radius) <= 1e-8


def test_singularity_must_be_removable():
    with pytest.raises(WkbError):
        log_amplitude_series(X2, 0.5)


def conjugated_defect(spec, sol, h):
    lo, hi = default_window(sol)
    step = int(round(h / sol.pitch))
    c = sol.x.size // 2
    idx = c + step * np.arange(math.ceil(lo / h), math.floor(hi / h) + 1)
    phi, a0, x = sol.phi, sol.a0, sol.x
    V = spec(x[idx][:, None])
    # e^{phi/h} H e^{-phi/h} a0 - h E0 a0, with L a0 = E0 a0
    fwd = a0[idx + step] * np.exp(-(phi[idx + step] - phi[idx]) / h)
    bwd = a0[idx - step] * np.exp(-(phi[idx - step] - phi[idx]) / h)
    return np.max(np.abs((2 + V) * a0[idx] - fwd - bwd - h * sol.E0 * a0[idx]))


def test_conjugated_relation_is_second_order(sol):
    r1 = conjugated_defect(X2, sol, 0.05)
    r2 = conjugated_defect(X2, sol, 0.025)
    assert r1 / 0.05**2 < 5.0
    assert 3.0 < r1 / r2 < 5.0


def test_quasimode_window_errors(sol):
    with pytest.raises(WkbError):
        quasimode_residual(X2, 0.05, sol, window=(-2.0, 2.0))
    q = quasimode_residual(X2, 0.05, sol)
    assert q.window == default_window(sol) and q.ratio > 0


def test_save(sol, tmp_path):
    sol.save(str(tmp_path / "w"))
    meta = json.loads((tmp_path / "w.json").read_text())
    assert meta["E0"] == sol.E0 and (tmp_path / "w.phi.dfield").exists() and (tmp_path / "w.a0.dfield").exists()
