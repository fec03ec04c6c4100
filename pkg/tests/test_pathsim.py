import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from deltafk.errors import ConfigError, HorizonTooShort, ValidationError
from deltafk.levy_models import LevyModel
from deltafk.pathsim import (
    Constant,
    Indicator,
    MCEstimate,
    OddBump,
    PathConfig,
    block_rng,
    feynman_kac_mc,
    free_local_time_mean,
    laplace_local_time_check,
    limit_theorem_check,
    martingale_check,
    moment_bound_check,
    moment_bound_rhs,
    psi_nu_function,
    psi_nu_pairing,
    simulate_path,
)

BROWNIAN = LevyModel.brownian(1.0)
STABLE = LevyModel.stable(1.5, 1.0)

# E L(1, 0) for the stable process with alpha = 1.5, B = 1: 30-digit mpmath value of
# int_0^1 p0(tau, 0) dtau = Gamma(1/alpha) / (pi alpha) * int_0^1 tau^(-1/alpha) dtau.
STABLE_MEAN_LOCAL_TIME = 0.86205825435649333058


# -- configuration ----------------------------------------------------------------------


@pytest.mark.parametrize("bad", [
    dict(t_end=0.0, dt=0.1), dict(t_end=1.0, dt=2.0), dict(t_end=1.0, dt=0.1, eps=0.0),
    dict(t_end=1.0, dt=0.1, seed=-1), dict(t_end=1.0, dt=0.1, seed=2**64),
    dict(t_end=1.0, dt=0.1, workers=0), dict(t_end=1.0, dt=0.1, steps=3),
])
def test_path_config_validation(bad):
    with pytest.raises(ConfigError):
        PathConfig.from_dict(bad)


def test_path_config_grid():
    cfg = PathConfig(1.0, 0.3)
    assert cfg.n_steps == 4
    assert_allclose(cfg.step, 0.25)
    assert_allclose(cfg.window(BROWNIAN), math.sqrt(0.25) * math.sqrt(0.5))
    assert cfg.resolved(BROWNIAN)["eps"] == cfg.window(BROWNIAN)
    assert PathConfig(1.0, 0.1, eps=0.05).window(STABLE) == 0.05


def test_estimate_helpers():
    e = MCEstimate(1.0, 0.1, 100, 7)
    assert e.within(1.25, 3.0)
    assert not e.within(1.35, 3.0)
    assert e.within(1.35, 3.0, rel=0.05)
    assert e.to_dict() == {"mean": 1.0, "stderr": 0.1, "n": 100, "seed": 7}


# -- single paths --------------------------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32), level=st.floats(-2, 2), k=st.integers(0, 200))
def test_path_invariants(seed, level, k):
    cfg = PathConfig(1.0, 5e-3)
    p = simulate_path(STABLE, cfg, level, np.random.default_rng(seed))
    assert p.values[0] == 0.0
    assert p.times.size == p.values.size == cfg.n_steps + 1
    assert np.all(p.local_time_increments >= 0)
    assert p.local_time == pytest.approx(np.sum(p.local_time_increments), rel=0, abs=0)
    assert_allclose(p.local_time_until(k) + np.sum(p.local_time_increments[k:]), p.local_time,
                    rtol=1e-14, atol=1e-15)


def test_far_level_has_no_local_time():
    p = simulate_path(BROWNIAN, PathConfig(1.0, 1e-3), 1e6, np.random.default_rng(0))
    assert p.local_time == 0.0


def test_frozen_path_sits_in_window():
    m = LevyModel.brownian(1e-14)
    cfg = PathConfig(1.0, 1e-3, eps=0.01)
    p = simulate_path(m, cfg, 0.0, np.random.default_rng(0))
    assert_allclose(p.local_time, 1.0 / (2 * 0.01), rtol=1e-12)


# -- engine ------------------------------------------------------------------------------


def test_block_streams_are_distinct_and_reproducible():
    a = block_rng(5, 0).standard_normal(4)
    assert_array_equal(a, block_rng(5, 0).standard_normal(4))
    assert not np.array_equal(a, block_rng(5, 1).standard_normal(4))
    assert not np.array_equal(a, block_rng(6, 0).standard_normal(4))


def test_results_independent_of_worker_count(brownian, bpot):
    base = PathConfig(1.0, 1e-2, block_size=300)
    one = feynman_kac_mc(brownian, bpot, Constant(1.0), 1.0, 0.0, base, 1000, 11)
    two = feynman_kac_mc(brownian, bpot, Constant(1.0), 1.0, 0.0, PathConfig(1.0, 1e-2, block_size=300, workers=2),
                         1000, 11)
    assert one == two


def test_same_seed_same_estimate(brownian, bpot):
    cfg = PathConfig(1.0, 1e-2, block_size=128)
    a = feynman_kac_mc(brownian, bpot, Indicator(-1, 1), 1.0, 0.2, cfg, 777, 3)
    b = feynman_kac_mc(brownian, bpot, Indicator(-1, 1), 1.0, 0.2, cfg, 777, 3)
    c = feynman_kac_mc(brownian, bpot, Indicator(-1, 1), 1.0, 0.2, cfg, 777, 4)
    assert a == b
    assert a.mean != c.mean


# -- Feynman-Kac -------------------------------------------------------------------------


def test_no_potential_gives_exact_one(brownian):
    e = feynman_kac_mc(brownian, None, Constant(1.0), 1.0, 0.0, PathConfig(1.0, 1e-2), 500, 0)
    assert e.mean == 1.0 and e.stderr == 0.0


def test_weights_at_least_one(stable15, spot):
    e = feynman_kac_mc(stable15, spot, Constant(1.0), 0.5, 0.3, PathConfig(0.5, 1e-2), 2000, 1)
    assert e.mean >= 1.0


def test_fk_requires_positive_time(brownian, bpot):
    with pytest.raises(ValidationError):
        feynman_kac_mc(brownian, bpot, Constant(1.0), 0.0, 0.0, PathConfig(1.0, 0.1), 10, 0)


def test_mean_local_time_brownian():
    lhs, _ = moment_bound_check(BROWNIAN, PathConfig(1.0, 1e-3), Constant(1.0), 1.0, 0.0, 0.0, 1,
                                20_000, 3)
    assert lhs.within(math.sqrt(2 / math.pi), 3.0, 0.02)


# -- Laplace identity ------------------------------------------------------------------------


def test_laplace_horizon_guard():
    with pytest.raises(HorizonTooShort):
        laplace_local_time_check(BROWNIAN, PathConfig(10.0, 1e-2), 0.0, 0.5, 10, 0)
    with pytest.raises(ValidationError):
        laplace_local_time_check(BROWNIAN, PathConfig(10.0, 1e-2), 0.0, 0.0, 10, 0)


def test_laplace_large_lambda():
    e = laplace_local_time_check(BROWNIAN, PathConfig(0.3, 1e-4), 0.0, 50.0, 4000, 4)
    assert e.within(1 / math.sqrt(100.0), 3.0, 0.03)


def test_laplace_refinement_stable_under_halving():
    a = laplace_local_time_check(BROWNIAN, PathConfig(18.5, 2e-3), 0.0, 0.5, 4000, 1)
    b = laplace_local_time_check(BROWNIAN, PathConfig(18.5, 1e-3), 0.0, 0.5, 4000, 1)
    assert abs(a.mean - b.mean) <= 0.03 + 3 * math.hypot(a.stderr, b.stderr)


# -- martingale, moments, limits ---------------------------------------------------------------


def test_martingale_start_is_exact(bpot, brownian):
    (e,) = martingale_check(brownian, bpot, [0.0], 0.7, PathConfig(1.0, 0.1), 10, 0)
    assert_allclose(e.mean, math.exp(-0.7), rtol=1e-8)
    assert e.stderr == 0.0


def test_martingale_far_start(bpot, brownian):
    rows = martingale_check(brownian, bpot, [0.5, 1.0], 3.0, PathConfig(1.0, 1e-3), 20_000, 2)
    for e in rows:
        assert e.within(math.exp(-3.0), 3.0, 0.02)


def test_psi_nu_function_brownian(bpot):
    h = psi_nu_function(bpot)
    x = np.array([-40.0, -3.0, -0.2, 0.0, 0.5, 7.0, 300.0])
    assert_allclose(h(x), np.exp(-np.abs(x)), rtol=1e-7, atol=1e-15)


def test_free_local_time_mean_values():
    for t in (0.3, 1.0, 4.0):
        assert_allclose(free_local_time_mean(BROWNIAN, t), math.sqrt(2 * t / math.pi), rtol=1e-12)
    assert_allclose(free_local_time_mean(STABLE, 1.0), STABLE_MEAN_LOCAL_TIME, rtol=1e-10)


@pytest.mark.parametrize("model", [BROWNIAN, STABLE, LevyModel.mixed(0.5, 1.3, 0.7)])
def test_moment_rhs_first_order_is_mean_local_time(model):
    assert_allclose(moment_bound_rhs(model, 1.0, 1), free_local_time_mean(model, 1.0), rtol=1e-9)


def test_moment_rhs_second_order_brownian():
    assert_allclose(moment_bound_rhs(BROWNIAN, 1.0, 2), 4.0 / math.pi, rtol=1e-12)


def test_moment_bound_rejects_large_k():
    with pytest.raises(ValidationError):
        moment_bound_check(BROWNIAN, PathConfig(1.0, 0.1), Constant(1.0), 1.0, 0.0, 0.0, 5, 10, 0)


def test_pairing_values(bpot):
    val, err = psi_nu_pairing(bpot, Constant(1.0))
    assert abs(val - 2.0) <= 1e-8 + err
    val, err = psi_nu_pairing(bpot, OddBump(0.0))
    assert abs(val) <= 1e-12 + err


def test_limit_rows_martingale_case(bpot, brownian):
    h = psi_nu_function(bpot)
    rows = limit_theorem_check(brownian, bpot, h, 0.0, [0.5, 2.0], PathConfig(2.0, 1e-3), 8000, 5)
    for r in rows:
        assert r.target == pytest.approx(1.0, abs=1e-8)
        assert r.estimate.within(1.0, 3.0, 0.02)


def test_limit_rows_odd_function(bpot, brownian):
    rows = limit_theorem_check(brownian, bpot, OddBump(0.0), 0.0, [1.0, 3.0], PathConfig(3.0, 2e-3),
                               8000, 6)
    for r in rows:
        assert abs(r.target) < 1e-10
        assert abs(r.estimate.mean) <= 3 * r.estimate.stderr + 1e-3
