import numpy as np
import pytest

from causal_transport import estimators_effect as eff
from causal_transport.data import StudyData
from causal_transport.exceptions import CapabilityError
from causal_transport.nuisance import NuisancePredictions, fit_nuisances
from causal_transport.simlab import generate


def _with_controls(make_study, seed=0):
    return make_study(binary=True, shift=0.3, seed=seed, target_controls=True)


def _preds(d, r, mu1, mu0, mu0_t):
    N = d.N
    full = lambda v: np.broadcast_to(np.asarray(v, float), (N,)).copy()
    return NuisancePredictions(np.where(d.source, full(r), np.nan), full(mu1), full(mu0),
                               full(mu0_t), d.alpha_hat, d.pi, {})


def test_null_conditional_effect_gives_null(make_study):
    d = _with_controls(make_study)
    rng = np.random.default_rng(0)
    mu = rng.uniform(0.2, 0.8, d.N)
    # The target baseline is the raw mean of target controls, so a flat
    # control surface at that value makes the null hold exactly.
    base = np.mean(d.y[d.target_controls])
    pred = _preds(d, 1.0, mu, mu, base)
    for name, null in (("RD", 0.0), ("RR", 1.0), ("OR", 1.0)):
        for f in (eff.gamma_transported, eff.gamma_weighted):
            assert f(d, name, pred).estimate == pytest.approx(null, abs=1e-12)


def test_rd_transported_is_mean_target_cate(make_study):
    d = _with_controls(make_study, seed=1)
    rng = np.random.default_rng(1)
    mu1, mu0 = rng.uniform(0.3, 0.9, d.N), rng.uniform(0.1, 0.5, d.N)
    pred = _preds(d, 1.0, mu1, mu0, rng.uniform(0.2, 0.6, d.N))
    rep = eff.gamma_transported(d, "RD", pred)
    assert rep.estimate == pytest.approx(np.mean((mu1 - mu0)[d.target]), abs=1e-13)


def test_gamma_weighted_unit_ratio_is_source_average(make_study):
    d = _with_controls(make_study, seed=2)
    rng = np.random.default_rng(2)
    mu1, mu0 = rng.uniform(0.3, 0.9, d.N), rng.uniform(0.1, 0.5, d.N)
    mu0_t = rng.uniform(0.2, 0.6, d.N)
    pred = _preds(d, 1.0, mu1, mu0, mu0_t)
    rep = eff.gamma_weighted(d, "RD", pred)
    psi1 = np.mean((mu1 - mu0 + mu0_t)[d.source])
    psi0 = np.mean(d.y[d.target_controls])
    assert rep.estimate == pytest.approx(psi1 - psi0, abs=1e-13)


@pytest.mark.parametrize("name", ["RD", "RR", "OR"])
def test_eif_effect_mean_zero_at_ee(exp2_or_data, name):
    nf = fit_nuisances(exp2_or_data)
    psi1, _, _ = eff.ee_effect_psi1(exp2_or_data, name, nf)
    phi = eff.eif_effect(exp2_or_data, name, nf, psi1)
    assert abs(np.mean(phi)) < 1e-10


@pytest.mark.parametrize("name", ["RD", "RR", "OR"])
def test_one_step_from_ee_equals_ee(exp2_or_data, name):
    nf = fit_nuisances(exp2_or_data)
    a = eff.one_step_effect(exp2_or_data, name, nf, initial="ee").estimate
    b = eff.ee_effect(exp2_or_data, name, nf).estimate
    assert a == pytest.approx(b, abs=1e-12)


def test_one_step_rd_equals_ee_from_any_start(exp2_or_data):
    nf = fit_nuisances(exp2_or_data)
    ee = eff.ee_effect(exp2_or_data, "RD", nf).estimate
    for init in ("gamma_transported", "gamma_weighted"):
        os_ = eff.one_step_effect(exp2_or_data, "RD", nf, initial=init).estimate
        assert os_ == pytest.approx(ee, abs=1e-12)


def test_one_step_or_differs_from_ee(exp2_or_data):
    nf = fit_nuisances(exp2_or_data)
    os_ = eff.one_step_effect(exp2_or_data, "OR", nf).estimate
    ee = eff.ee_effect(exp2_or_data, "OR", nf).estimate
    assert os_ != ee
    assert os_ == pytest.approx(ee, rel=0.05)


def test_unknown_initializer(exp2_or_data):
    with pytest.raises(ValueError):
        eff.one_step_effect(exp2_or_data, "RD", fit_nuisances(exp2_or_data), initial="wht")


def test_missing_target_controls_raises(appe_data):
    nf = fit_nuisances(appe_data, target_outcomes=False)
    for f in (eff.gamma_transported, eff.gamma_weighted, eff.ee_effect):
        with pytest.raises(CapabilityError, match="target-control"):
            f(appe_data, "RD", nf)


def test_effect_nuisance_measure_mismatch(exp2_or_data):
    en = eff.effect_nuisance(exp2_or_data, "RR", fit_nuisances(exp2_or_data))
    with pytest.raises(ValueError):
        eff.effect_nuisance(exp2_or_data, "OR", en)


def test_report_prefix(exp2_or_data):
    rep = eff.ee_effect(exp2_or_data, "OR", fit_nuisances(exp2_or_data))
    assert rep.estimator == "effect/ee"
    assert rep.diagnostics["n_target_controls"] == int(np.sum(exp2_or_data.target_controls))


def test_estimates_near_truth_exp2_or():
    from causal_transport.simlab import get_spec, true_effects

    spec = get_spec("exp2_or")
    truth = true_effects(spec, "OR").tau_t
    d = generate(spec, 20000, seed=11)
    nf = fit_nuisances(d)
    for f in (eff.gamma_transported, eff.gamma_weighted, eff.ee_effect):
        assert f(d, "OR", nf).estimate == pytest.approx(truth, rel=0.15)


def test_rd_estimating_equation_matches_closed_display(make_study):
    d = _with_controls(make_study, seed=3)
    rng = np.random.default_rng(3)
    r = rng.uniform(0.5, 1.5, d.N)
    mu1, mu0 = rng.uniform(0.3, 0.9, d.N), rng.uniform(0.1, 0.5, d.N)
    mu0_t = rng.uniform(0.2, 0.6, d.N)
    pred = _preds(d, r, mu1, mu0, mu0_t)
    tau = mu1 - mu0
    alpha = d.n / d.N
    src, tgt = d.source, d.target
    a, y = d.a[src], d.y[src]
    resid = r[src] * (a / 0.5 * (y - tau[src] - mu0[src])
                      - (1 - a) / 0.5 * (y - mu0[src]))
    hand = np.mean(mu0_t[tgt] + tau[tgt]) + (1 - alpha) / (alpha * d.m) * resid.sum()
    psi1, _, _ = eff.ee_effect_psi1(d, "RD", pred)
    assert psi1 == pytest.approx(hand, abs=1e-13)
