import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad

from deltafk.delta_semigroup import DeltaPotential
from deltafk.errors import DegenerateWeights, GridTooNarrow, ValidationError
from deltafk.grids import Grid
from deltafk.levy_models import LevyModel
from deltafk.oracles import Z_brownian, p_mu_brownian, pi_brownian
from deltafk.pathsim import PathConfig
from deltafk.penalization import (
    FdDensityQuery,
    PenalizedSpec,
    ZetaTable,
    batch_means_stderr,
    endpoint_density,
    endpoint_l1_distance,
    q_expectation_exact,
    q_expectation_mc,
    q_fd_density,
    stationary_histogram,
    weak_convergence_check,
    zeta_chain,
)
from deltafk.quadrature import spatial_rule


@pytest.fixture(scope="module")
def bspec(brownian, bpot):
    return PenalizedSpec(bpot, brownian, 1.0, 0.0)


def _line(centers=(0.0,), half_width=30.0):
    return spatial_rule(list(centers), 1.0, half_width, floor=1e-6, max_width=1.0)


# -- validation -------------------------------------------------------------------------


def test_spec_rejects_bad_horizon(brownian, bpot):
    for T in (0.0, -1.0, math.inf):
        with pytest.raises(ValidationError):
            PenalizedSpec(bpot, brownian, T)


def test_spec_rejects_foreign_model(bpot, stable15):
    with pytest.raises(ValidationError):
        PenalizedSpec(bpot, stable15, 1.0)


def test_query_validation():
    with pytest.raises(ValidationError):
        FdDensityQuery((0.5, 0.5), (0.0, 0.0))
    with pytest.raises(ValidationError):
        FdDensityQuery((0.0,), (0.0,))
    with pytest.raises(ValidationError):
        FdDensityQuery((0.5, 1.0), (0.0,))


def test_query_beyond_horizon_rejected(bspec):
    with pytest.raises(ValidationError):
        q_fd_density(bspec, FdDensityQuery((2.0,), (0.0,)))


# -- finite-dimensional densities ----------------------------------------------------------


def test_one_time_density_brownian_closed_form(bspec):
    y = np.array([-2.0, -0.3, 0.0, 0.4, 1.7])
    t, T = 0.4, bspec.T
    got = q_fd_density(bspec, FdDensityQuery((t,), (y,)))
    closing = np.array([Z_brownian(1.0, T - t, yy) for yy in y])
    want = p_mu_brownian(1.0, t, 0.0, y) * closing / Z_brownian(1.0, T)
    assert_allclose(got, want, rtol=1e-8)


def test_density_at_horizon_is_endpoint_density(bspec):
    y = np.array([-1.0, 0.0, 0.6])
    got = q_fd_density(bspec, FdDensityQuery((bspec.T,), (y,)))
    assert_allclose(got, endpoint_density(bspec, y), rtol=1e-12)
    want = p_mu_brownian(1.0, bspec.T, 0.0, y) / Z_brownian(1.0, bspec.T)
    assert_allclose(got, want, rtol=1e-8)


def test_scalar_points_give_float(bspec):
    val = q_fd_density(bspec, FdDensityQuery((0.5,), (0.2,)))
    assert isinstance(val, float)
    assert val > 0


def test_one_time_density_has_unit_mass(bspec):
    z, w = _line()
    for t in (0.3, 1.0):
        dens = q_fd_density(bspec, FdDensityQuery((t,), (z,)))
        assert abs(dens @ w - 1.0) < 1e-7


def test_two_time_marginalizes_to_one_time(bspec):
    z, w = _line()
    y1 = np.array([-0.8, 0.0, 0.5])
    joint = q_fd_density(bspec, FdDensityQuery((0.3, 0.7), (y1, z)))
    assert joint.shape == (3, z.size)
    single = q_fd_density(bspec, FdDensityQuery((0.3,), (y1,)))
    assert_allclose(joint @ w, single, rtol=1e-7)


def test_endpoint_density_mass_stable(stable15, spot):
    spec = PenalizedSpec(spot, stable15, 2.0, 0.0)
    z, w = spatial_rule([0.0], 1.0, 400.0, floor=1e-10, max_width=1.0)
    # the algebraic tail beyond 400 carries about 1e-4 of the mass
    assert abs(endpoint_density(spec, z) @ w - 1.0) < 5e-4


def test_endpoint_l1_distance_brownian_oracle(brownian, bpot):
    spec = PenalizedSpec(bpot, brownian, 2.0, 0.0)
    Z0 = Z_brownian(1.0, 2.0)

    def gap(y):
        return abs(p_mu_brownian(1.0, 2.0, 0.0, y) / Z0 - pi_brownian(0.5, y))

    # nu psi_nu(y) = exp(-|y|) / 2 = pi_brownian(1/2, y) for mu = 1; symmetric in y
    want = 2.0 * quad(gap, 0.0, 60.0, epsabs=1e-13, limit=200)[0]
    assert_allclose(endpoint_l1_distance(spec), want, rtol=1e-7)


def test_endpoint_maxnorm_small_at_long_horizon(brownian, bpot):
    spec = PenalizedSpec(bpot, brownian, 10.0, 0.0)
    y = np.linspace(-5.0, 5.0, 101)
    gap = np.max(np.abs(endpoint_density(spec, y) - bpot.nu * bpot.psi_nu(y)))
    assert gap < 0.02


# -- importance sampling --------------------------------------------------------------------


def test_constant_functional_is_exactly_one(bspec):
    e = q_expectation_mc(bspec, lambda om: np.ones(len(om)), [0.5], PathConfig(1.0, 1e-2), 2000, 3)
    assert e.mean == pytest.approx(1.0, abs=1e-13)
    assert e.stderr < 1e-12
    assert e.ess > 100


def test_half_line_indicator_is_one_half(bspec):
    def below(omega):
        return (omega[:, 0] <= 0.0).astype(float)

    e = q_expectation_mc(bspec, below, [0.6], PathConfig(1.0, 2e-3), 20_000, 5)
    assert e.within(0.5, 3.0, 0.0)
    exact = q_expectation_exact(bspec, lambda y: (y <= 0.0).astype(float), 0.6)
    assert exact == pytest.approx(0.5, abs=1e-8)


def test_is_matches_density_route(bspec):
    def below(omega):
        return (omega[:, 0] <= 0.4).astype(float)

    e = q_expectation_mc(bspec, below, [0.5], PathConfig(1.0, 2e-3), 20_000, 7)
    exact = q_expectation_exact(bspec, lambda y: (y <= 0.4).astype(float), 0.5)
    assert e.within(exact, 3.0, 0.01)


def test_is_times_validated(bspec):
    with pytest.raises(ValidationError):
        q_expectation_mc(bspec, lambda om: np.ones(len(om)), [1.5], PathConfig(2.0, 1e-2), 100, 0)


def test_degenerate_weights_raise(brownian):
    pot = DeltaPotential.solve(brownian, 4.0, 0.0)
    spec = PenalizedSpec(pot, brownian, 20.0, 0.0)
    with pytest.raises(DegenerateWeights):
        q_expectation_mc(spec, lambda om: np.ones(len(om)), [1.0], PathConfig(20.0, 5e-2), 200, 0)


def test_weak_convergence_constant(brownian, bpot):
    specs = [PenalizedSpec(bpot, brownian, T, 0.0) for T in (2.0, 4.0)]
    rows = weak_convergence_check(specs, 1.0, lambda y: np.ones_like(y), PathConfig(4.0, 1e-2),
                                  2000, 1)
    for r in rows:
        assert r.estimate.mean == pytest.approx(1.0, abs=1e-12)
        assert r.exact == pytest.approx(1.0, abs=1e-6)
        assert r.target == pytest.approx(1.0, abs=1e-6)


def test_weak_convergence_rejects_late_event(brownian, bpot):
    specs = [PenalizedSpec(bpot, brownian, 1.0, 0.0)]
    with pytest.raises(ValidationError):
        weak_convergence_check(specs, 1.0, np.ones_like, PathConfig(1.0, 1e-2), 100, 0)


# -- the h-transformed chain ----------------------------------------------------------------


@pytest.fixture(scope="module")
def btable(bpot):
    grid = Grid(-12.0, 24.0 / 480, 481)
    return ZetaTable(bpot, 0.1, grid)


def test_zeta_rows_have_unit_mass(btable):
    for x in (-2.0, 0.0, 0.37, 3.0):
        assert abs(btable.captured_mass(x) - 1.0) < 2e-3


def test_zeta_drifts_toward_the_potential(btable):
    assert btable.row_mean(3.0) < 3.0
    assert btable.row_mean(-3.0) > -3.0
    assert abs(btable.row_mean(0.0)) < 1e-3


def test_zeta_step_outside_grid_raises(btable):
    rng = np.random.default_rng(0)
    with pytest.raises(GridTooNarrow):
        btable.step(50.0, rng)
    with pytest.raises(GridTooNarrow):
        btable.step(11.99, rng)


def test_zeta_two_half_steps_match_one_step(bpot):
    grid = Grid(-12.0, 24.0 / 480, 481)
    full = ZetaTable(bpot, 0.2, grid, row_factor=1)
    half = ZetaTable(bpot, 0.1, grid, row_factor=1)
    cells_half = np.diff(half.cdf, axis=1)
    mids = 0.5 * (grid.x[1:] + grid.x[:-1])
    # mean after two half steps from each start, conditioning on the middle cell
    mid_means = np.array([half.row_mean(m) for m in mids])
    for x in (0.0, 1.0, -2.5):
        i = int(round((x - grid.x0) / grid.h))
        two = cells_half[i] @ mid_means / half.mass[i]
        assert abs(two - full.row_mean(x)) < 2e-3


def test_zeta_chain_is_reproducible(bpot):
    a = zeta_chain(bpot, 0.0, 0.1, 200, seed=4)
    b = zeta_chain(bpot, 0.0, 0.1, 200, seed=4)
    np.testing.assert_array_equal(a, b)


def test_zeta_chain_histogram(bpot):
    chain = zeta_chain(bpot, 0.0, 0.1, 10_000, seed=11, burn_in=1000)
    check = stationary_histogram(bpot, chain, np.linspace(-3.0, 3.0, 13), dt=0.1)
    assert check.passes(4.0)
    # stationary law of zeta is nu psi_nu^2 / ||psi_nu||^2 = pi_brownian(1, .)
    assert_allclose(check.expected.sum(), quad(lambda y: pi_brownian(1.0, y), -3, 3)[0], rtol=1e-8)


def test_batch_means_stderr_iid():
    rng = np.random.default_rng(2)
    ind = (rng.random((50_000, 2)) < np.array([0.5, 0.1])).astype(float)
    se = batch_means_stderr(ind)
    want = np.sqrt(np.array([0.25, 0.09]) / ind.shape[0])
    assert_allclose(se, want, rtol=0.35)


def test_frequency_stderr_reduces_to_iid_for_long_steps(bpot):
    # after a step of 20 time units the chain has forgotten its start
    grid = Grid(-12.0, 24.0 / 480, 481)
    table = ZetaTable(bpot, 20.0, grid)
    edges = np.linspace(-2.0, 2.0, 9)
    se = table.frequency_stderr(edges, 1000)
    p = np.diff(0.5 * (1.0 + np.sign(edges) * (1.0 - np.exp(-2.0 * np.abs(edges)))))
    assert_allclose(se, np.sqrt(p * (1 - p) / 1000), rtol=0.02)


def test_frequency_stderr_grows_with_correlation(bpot):
    grid = Grid(-12.0, 24.0 / 480, 481)
    edges = np.linspace(-2.0, 2.0, 9)
    slow = ZetaTable(bpot, 0.05, grid).frequency_stderr(edges, 1000)
    fast = ZetaTable(bpot, 0.5, grid).frequency_stderr(edges, 1000)
    assert np.all(slow > fast)


def test_endpoint_histogram_matches_density(bspec):
    edges = np.linspace(-4.0, 4.0, 21)
    z, w = spatial_rule(np.concatenate([edges, [0.0]]), 0.4, 8.0, floor=1e-6)
    keep = (z > edges[0]) & (z < edges[-1])
    dens = endpoint_density(bspec, z[keep])
    expected = np.bincount(np.searchsorted(edges, z[keep]) - 1, weights=w[keep] * dens, minlength=20)[:20]
    cfg = PathConfig(1.0, 2e-3)
    bad = []
    for k in range(20):
        lo, hi = edges[k], edges[k + 1]

        def in_bin(omega, lo=lo, hi=hi):
            return ((omega[:, 0] >= lo) & (omega[:, 0] < hi)).astype(float)

        e = q_expectation_mc(bspec, in_bin, [1.0], cfg, 10_000, 21)
        if not e.within(expected[k], 3.0, 0.02):
            bad.append((k, e.mean, e.stderr, expected[k]))
    assert not bad


def test_zeta_two_half_steps_histogram(bpot):
    from deltafk.delta_semigroup import rho_mu_matrix

    grid = Grid(-12.0, 24.0 / 480, 481)
    half = ZetaTable(bpot, 0.1, grid)
    rng = np.random.default_rng(17)
    x0, n = 1.0, 20_000
    ends = np.array([half.step(half.step(x0, rng), rng) for _ in range(n)])
    edges = np.linspace(-1.5, 3.5, 21)
    freq = np.histogram(ends, edges)[0] / n
    z, w = spatial_rule(np.concatenate([edges, [0.0, x0]]), 0.25, 5.0, floor=1e-6)
    keep = (z > edges[0]) & (z < edges[-1])
    r, _ = rho_mu_matrix(bpot, bpot.model, 0.2, [x0], z[keep])
    expected = np.bincount(np.searchsorted(edges, z[keep]) - 1, weights=w[keep] * r[0], minlength=20)[:20]
    se = np.sqrt(expected * (1 - expected) / n)
    assert np.all(np.abs(freq - expected) <= 3.0 * se + 2e-3)
