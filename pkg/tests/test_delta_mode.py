import math

import numpy as np
import pytest

from oracles import bessel_kernel, quadrature_u0_1d
from specdisc.decay import ray_rate_slopes
from specdisc.delta_mode import (
    KernelSizeError,
    PreconditionError,
    delta_eigenpair,
    free_resolvent_kernel,
    optimality_experiment,
    stencil_residual,
)
from specdisc.finsler import rho_E, rho_E_batch

# frozen from the heat-kernel (Bessel) quadrature oracle at E = -1
BESSEL = {(0, 0): 0.2540498400242646, (10, 0): 3.943386806949423e-06, (30, 0): 9.943541673689627e-15,
          (30, 30): 2.2960248341010152e-20}


@pytest.fixture(scope="module")
def kernel2d():
    return free_resolvent_kernel(-1.0, 2, 512)


def test_u0_d1():
    k = free_resolvent_kernel(-1.0, 1, 1024)
    assert abs(k.u0 - 1 / math.sqrt(5)) <= 1e-12
    assert abs(k.u0 - quadrature_u0_1d(-1.0)) <= 1e-10


def test_kernel_d2_against_bessel_oracle(kernel2d):
    assert kernel2d.u0 == pytest.approx(BESSEL[(0, 0)], rel=1e-12)
    assert kernel2d.value([[10, 0]])[0] == pytest.approx(BESSEL[(10, 0)], rel=1e-9)
    assert kernel2d.value([[30, 0]])[0] == pytest.approx(BESSEL[(30, 0)], rel=1e-2)


def test_bessel_values_are_frozen():
    assert bessel_kernel(-1.0, [10, 0]) == pytest.approx(BESSEL[(10, 0)], rel=1e-10)


def test_kernel_even_positive(kernel2d):
    w = kernel2d.values[1:, 1:]  # drop the unpaired -N/2 row and column
    assert np.allclose(w, w[::-1, ::-1], rtol=1e-13, atol=1e-13 * kernel2d.u0)
    # positivity above the round-off level of the transform
    assert np.all(w[np.abs(w) > 1e-14 * kernel2d.u0] > 0)


def test_kernel_positive_along_rays_with_shift():
    for direction in [(1, 0), (1, 1)]:
        rows = optimality_experiment(-1.0, 2, 512, [direction], (10, 30))
        assert np.all(np.isfinite(rows[0].slope.rates))


def test_stencil_residual(kernel2d):
    assert stencil_residual(kernel2d, 64) <= 1e-12
    assert stencil_residual(kernel2d) <= max(kernel2d.periodization_bound, 1e-14)


def test_doubling_N(kernel2d):
    big = free_resolvent_kernel(-1.0, 2, 1024)
    sites = np.array([[i, j] for i in range(-20, 21, 4) for j in range(-20, 21, 4)])
    assert np.max(np.abs(big.weighted(sites) - kernel2d.weighted(sites))) <= 1e-6 * kernel2d.u0


def test_d1_geometric_decay():
    # the shifted contour keeps relative accuracy far below round-off of u(0)
    k = free_resolvent_kernel(-1.0, 1, 1024, eta=[0.9 * 2 * math.asinh(0.5)])
    n = np.arange(1, 200)[:, None]
    ratio = k.value(n + 1) / k.value(n)
    assert np.allclose(ratio, math.exp(-2 * math.asinh(0.5)), rtol=1e-10)


def test_delta_eigenpair_d1():
    pair = delta_eigenpair(-1.0, 1, 1024, radius=256)
    assert pair.residual <= 1e-10
    assert abs(pair.rayleigh - (-1.0)) <= 1e-10
    assert pair.amplitude * pair.u0 == -1.0
    assert pair.field.norm() == pytest.approx(1.0, abs=1e-14)


def test_rate_dominance(kernel2d):
    sites = np.array([[n, m] for n in range(0, 60, 3) for m in range(0, 60, 5) if n or m])
    logu = kernel2d.log_value(sites)
    ok = np.isfinite(logu)
    gap = -logu[ok] - rho_E_batch(-1.0, sites[ok].astype(float))
    # decay is never faster than rho_E up to a bounded log-prefactor
    assert gap.max() <= 5.0


def test_optimality_slopes_one_sided():
    rows = optimality_experiment(-1.0, 2, 512, [(1, 0), (1, 1)], (10, 30))
    for row in rows:
        s = row.slope
        assert row.passed
        assert s.log_slope <= s.reference + 3 * s.stderr


def test_synthetic_exact_field_passes():
    rows = ray_rate_slopes(lambda s: rho_E_batch(-1.0, s.astype(float)), [(1, 0), (1, 1)], (10, 30), -1.0)
    assert all(r.relative_error("local") <= 0.02 for r in rows)


def test_preconditions():
    with pytest.raises(ValueError):
        free_resolvent_kernel(0.5, 2, 512)
    with pytest.raises(ValueError):
        free_resolvent_kernel(-1.0, 2, 500)
    with pytest.raises(KernelSizeError):
        free_resolvent_kernel(-1.0, 3, 1024)
    with pytest.raises(PreconditionError):
        optimality_experiment(-1.0, 2, 64, [(1, 0)], (10, 30))
