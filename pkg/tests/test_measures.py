import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causal_transport.exceptions import DerivativeError, DomainError, UnknownMeasureError
from causal_transport.measures import (
    MEASURE_NAMES,
    eval_gamma,
    eval_phi,
    gamma_gradient,
    get_measure,
    in_domain,
    phi_gradient,
    registry_selfcheck,
    sample_domain,
)

ALL = list(MEASURE_NAMES)


def test_twelve_measures_registered():
    assert len(ALL) == 12
    assert set(ALL) == {
        "RD", "RR", "OR", "NNT", "GRRR", "ERR", "SR", "RS", "logOR",
        "OddsProduct", "ArcsineDiff", "RRR",
    }


def test_lookup_is_case_insensitive():
    assert get_measure("rd").name == "RD"
    assert get_measure("Or") is get_measure("OR")


def test_unknown_measure_lists_valid_names():
    with pytest.raises(UnknownMeasureError, match="RD"):
        get_measure("XYZ")


def test_rd_phi_is_difference():
    rd = get_measure("RD")
    assert rd.phi(0.7, 0.2) == pytest.approx(0.5)


def test_or_gamma_matches_tabulated_form():
    or_ = get_measure("OR")
    t, p = 2.5, 0.3
    assert or_.gamma(t, p) == pytest.approx(t * p / (1 + t * p - p), rel=1e-14)


def test_mortality_example_rd_and_rr():
    # A treatment lowering mortality from 3% to 1%.
    assert eval_phi(get_measure("RD"), 0.01, 0.03) == pytest.approx(-0.02, abs=1e-15)
    assert eval_phi(get_measure("RR"), 0.01, 0.03) == pytest.approx(1 / 3, rel=1e-14)


def test_or_null_is_one():
    assert eval_phi(get_measure("OR"), 0.5, 0.5) == 1.0


def test_gamma_examples():
    assert eval_gamma(get_measure("RD"), 0.2, 0.3) == pytest.approx(0.5)
    for p in (0.05, 0.4, 0.9):
        assert eval_gamma(get_measure("OR"), 1.0, p) == pytest.approx(p, rel=1e-14)
    rr = get_measure("RR")
    assert eval_gamma(rr, eval_phi(rr, 0.4, 0.2), 0.2) == pytest.approx(0.4, rel=1e-14)


def test_domain_errors_name_the_constraint():
    with pytest.raises(DomainError, match="psi0"):
        eval_phi(get_measure("RR"), 0.3, 0.0)
    with pytest.raises(DomainError):
        eval_phi(get_measure("OR"), 1.2, 0.3)


def test_nnt_rejects_null():
    with pytest.raises(DomainError, match="NNT"):
        eval_phi(get_measure("NNT"), 0.3, 0.3)


def test_grrr_boundary_value_and_derivative():
    g = get_measure("GRRR")
    assert eval_phi(g, 0.4, 0.4) == 0.0
    with pytest.raises(DerivativeError):
        phi_gradient(g, 0.4, 0.4)


@pytest.mark.parametrize("name", ["RD", "ArcsineDiff", "logOR", "GRRR", "ERR", "RRR"])
def test_null_value_zero(name):
    m = get_measure(name)
    grid = np.linspace(0.05, 0.95, 19)
    assert np.allclose(m.phi(grid, grid), 0.0, atol=1e-14)


@pytest.mark.parametrize("name", ["RR", "OR", "SR", "RS"])
def test_null_value_one(name):
    m = get_measure(name)
    grid = np.linspace(0.05, 0.95, 19)
    assert np.allclose(m.phi(grid, grid), 1.0, atol=1e-14)


@pytest.mark.parametrize("name", ALL)
def test_roundtrip_on_random_domain_points(name):
    m = get_measure(name)
    p1, p0 = sample_domain(m, 1000, np.random.default_rng(1))
    assert np.all(in_domain(m, p1, p0))
    assert np.max(np.abs(m.gamma(m.phi(p1, p0), p0) - p1)) < 1e-10


@pytest.mark.parametrize("name", ALL)
def test_chain_rule_identities(name):
    m = get_measure(name)
    p1, p0 = sample_domain(m, 500, np.random.default_rng(2))
    tau = m.phi(p1, p0)
    d1, d0 = m.dphi_d1(p1, p0), m.dphi_d0(p1, p0)
    gt, g0 = m.dgamma_dtau(tau, p0), m.dgamma_dpsi0(tau, p0)
    assert np.max(np.abs(d1 * gt - 1)) < 1e-8
    assert np.max(np.abs(d0 * gt + g0)) < 1e-8


@pytest.mark.parametrize("name", ALL)
def test_derivatives_match_central_differences(name):
    m = get_measure(name)
    p1, p0 = sample_domain(m, 300, np.random.default_rng(3))
    h = 1e-6
    fd1 = (m.phi(p1 + h, p0) - m.phi(p1 - h, p0)) / (2 * h)
    fd0 = (m.phi(p1, p0 + h) - m.phi(p1, p0 - h)) / (2 * h)
    an1, an0 = m.dphi_d1(p1, p0), m.dphi_d0(p1, p0)
    scale = lambda a, b: np.abs(a - b) / np.maximum(np.abs(b), 1e-8)
    assert np.max(scale(an1, fd1)) < 1e-4
    assert np.max(scale(an0, fd0)) < 1e-4


def test_gradient_helpers_return_pairs():
    g = phi_gradient(get_measure("RR"), 0.4, 0.2)
    assert g == pytest.approx((1 / 0.2, -0.4 / 0.04))
    gg = gamma_gradient(get_measure("RD"), 0.1, 0.3)
    assert gg == pytest.approx((1.0, 1.0))


def test_rs_stores_algebraic_inverse():
    rs = get_measure("RS")
    tau = rs.phi(0.4, 0.2)
    assert rs.gamma(tau, 0.2) == pytest.approx(0.4, rel=1e-14)
    # The tabulated form does not invert the measure.
    assert rs.printed_gamma is not None
    assert abs(rs.printed_gamma(tau, 0.2) - 0.4) > 1e-3


def test_registry_selfcheck_passes_quickly():
    import time

    t0 = time.perf_counter()
    records = registry_selfcheck()
    assert time.perf_counter() - t0 < 5
    assert len(records) == 12
    for rec in records:
        assert rec["ok"], rec


@settings(max_examples=200, deadline=None)
@given(
    p1=st.floats(0.01, 0.99),
    p0=st.floats(0.01, 0.99),
    name=st.sampled_from(["RD", "RR", "OR", "logOR", "SR", "ArcsineDiff"]),
)
def test_property_roundtrip(p1, p0, name):
    m = get_measure(name)
    tau = eval_phi(m, p1, p0)
    assert math.isclose(eval_gamma(m, tau, p0), p1, rel_tol=1e-9, abs_tol=1e-10)


@settings(max_examples=100, deadline=None)
@given(p1=st.floats(0.01, 0.99), p0=st.floats(0.01, 0.99))
def test_property_or_is_product_of_odds(p1, p0):
    got = eval_phi(get_measure("OR"), p1, p0)
    assert math.isclose(got, (p1 / (1 - p1)) / (p0 / (1 - p0)), rel_tol=1e-12)
