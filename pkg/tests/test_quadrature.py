import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from deltafk.errors import ConfigError
from deltafk.levy_models import LevyModel
from deltafk.quadrature import (
    QuadratureConfig,
    graded_breaks,
    heat_integral,
    limit_width,
    panel_nodes,
    psi_table,
    resolvent_product_integral,
    spatial_rule,
)

STABLE = LevyModel.stable(1.5, 1.0)
MIXED = LevyModel.mixed(0.5, 1.5, 0.5)

# Reference values from 30-digit mpmath quadrature (quadosc for z > 0) of the
# defining Fourier integrals, frozen here.  The alpha = 1.2 case decays too
# slowly for quadosc; its value comes from QUADPACK's Fourier-integral rule
# (scipy ``quad`` with ``weight="cos"`` on a half-line).
PSI_CASES = [
    (STABLE, 0.5, 0.0, 0.969887676419307909782),
    (STABLE, 0.5, 1.3, 0.232667180385378361370),
    (STABLE, 0.3 + 1j, 0.7, 0.111025129156452228039 - 0.227556511592573842921j),
    (MIXED, 0.8, 2.0, 0.0736143035333942262518),
    (LevyModel.stable(1.2, 2.0), 1.0, 0.4, 0.22634997098617907),
]


@pytest.mark.parametrize("model,lam,z,ref", PSI_CASES)
def test_psi_table_against_frozen_reference(model, lam, z, ref):
    val = psi_table(model, [z], [lam])[0, 0]
    assert abs(val - ref) <= 1e-9 * abs(ref)


def test_psi_table_brownian_closed_form():
    z = np.array([0.0, 0.5, 1.0, 3.0, 10.0])
    for lam in (0.3, 0.5, 2.0, 1.0 + 2.0j):
        r = np.sqrt(2 * complex(lam))
        assert_allclose(psi_table(LevyModel.brownian(1.0), z, [lam])[:, 0], np.exp(-r * z) / r,
                        rtol=1e-10, atol=1e-13)


@pytest.mark.parametrize("model,t,z,ref", [
    (STABLE, 1.0, 0.5, 0.262296840354090035790),
    (MIXED, 0.3, 1.0, 0.143632246576093821463),
])
def test_heat_integral_against_frozen_reference(model, t, z, ref):
    val, err = heat_integral(model, t, [z])
    assert abs(val[0] - ref) <= 1e-10
    assert err[0] < 1e-9


def test_heat_integral_gaussian():
    z = np.array([0.0, 1.0, 2.5])
    val, _ = heat_integral(LevyModel.brownian(1.0), 2.0, z)
    assert_allclose(val, np.exp(-z**2 / 4) / math.sqrt(4 * math.pi), atol=1e-12)


def test_resolvent_product_against_frozen_reference():
    val, err = resolvent_product_integral(STABLE, 0.7, [0.3 + 1j])
    ref = 0.209852687542962817498 - 0.260063459331416999241j
    assert abs(val[0] - ref) <= 1e-10
    assert err[0] < 1e-9


def test_resolvent_product_partial_fractions():
    # 1/((P+k)(P+l)) = (1/(P+k) - 1/(P+l)) / (l - k)
    k, lam = 0.4, 1.7
    val, _ = resolvent_product_integral(STABLE, k, [lam])
    tab = psi_table(STABLE, [0.0], [k, lam])[0]
    assert_allclose(val[0], (tab[0] - tab[1]) / (lam - k), rtol=1e-10)


def test_panel_nodes_integrate_polynomials():
    x, w = panel_nodes([0.0, 0.3, 1.0, 2.0], 8)
    assert_allclose(w @ x**7, 2.0**8 / 8, rtol=1e-13)


def test_graded_breaks_and_width_limit():
    b = graded_breaks(1.0, 10.0, 1.5, 1e-6)
    assert b[0] == 0.0 and b[-1] == 10.0
    assert np.all(np.diff(b) > 0)
    lim = limit_width(b, 0.5)
    assert np.max(np.diff(lim)) <= 0.5 + 1e-12
    assert set(b).issubset(set(np.round(lim, 15))) or np.all(np.isin(b, lim))


@settings(max_examples=30, deadline=None)
@given(c=st.floats(-5, 5), s=st.floats(0.1, 3.0))
def test_spatial_rule_integrates_kinked_function(c, s):
    # int exp(-|x - c| / s) dx over the rule's domain
    z, w = spatial_rule([c], s, 40 * s)
    assert_allclose(w @ np.exp(-np.abs(z - c) / s), 2 * s * (1 - math.exp(-40)), rtol=1e-12)


@pytest.mark.parametrize("bad", [{"p_max": 0.0}, {"n_nodes": 10}, {"tail_tol": -1.0}, {"order": 7},
                                 {"nodes": 100}])
def test_quadrature_config_validation(bad):
    with pytest.raises(ConfigError):
        QuadratureConfig.from_dict(bad)
