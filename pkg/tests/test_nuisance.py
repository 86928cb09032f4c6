import numpy as np
import pytest
from scipy.special import expit, logit
from sklearn.base import clone
from sklearn.linear_model import LogisticRegression

from causal_transport.data import StudyData
from causal_transport.exceptions import (
    CapabilityError,
    DomainError,
    FoldError,
    OverlapError,
    SeparationError,
    SingularMatrixError,
)
from causal_transport.measures import get_measure
from causal_transport.nuisance import (
    FunctionOutcome,
    LogisticFit,
    LogisticDensityRatio,
    NewtonLogisticRegression,
    OutcomeRegression,
    crossfit_nuisances,
    crossfit_split,
    density_ratio,
    fit_mu0_target,
    fit_nuisances,
    fit_outcomes,
    fit_selection_logistic,
    newton_logistic,
    plug_in_cate,
)
from causal_transport.simlab import generate, get_spec


def _shifted(N=10000, alpha=0.3, seed=0, p=2, shift=0.0):
    rng = np.random.default_rng(seed)
    s = (rng.random(N) < alpha).astype(int)
    x = rng.standard_normal((N, p)) + np.where(s[:, None] == 1, 0.0, shift)
    a = np.where(s == 1, (rng.random(N) < 0.5).astype(float), np.nan)
    y = np.where(s == 1, x[:, 0] + a + rng.standard_normal(N), np.nan)
    return StudyData(s, x, a, y)


def test_selection_independent_of_x_recovers_logit_alpha():
    d = _shifted()
    fit = fit_selection_logistic(d)
    assert fit.converged and fit.grad_norm < 1e-8
    V = d.design
    p = expit(V @ fit.beta)
    cov = np.linalg.inv(V.T @ (V * (p * (1 - p))[:, None]))
    se = np.sqrt(np.diag(cov))
    assert abs(fit.beta[0] - logit(0.3)) < 3 * se[0]
    assert np.all(np.abs(fit.beta[1:]) < 3 * se[1:])


def test_intercept_only_mle_is_closed_form():
    rng = np.random.default_rng(1)
    y = (rng.random(500) < 0.3).astype(float)
    fit = newton_logistic(np.ones((500, 1)), y)
    assert fit.beta[0] == pytest.approx(logit(y.mean()), abs=1e-8)


def test_newton_matches_sklearn_unpenalized():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((2000, 3))
    y = (rng.random(2000) < expit(0.2 + X @ [1.0, -0.5, 0.3])).astype(float)
    ours = NewtonLogisticRegression().fit(X, y)
    ref = LogisticRegression(penalty=None, tol=1e-12, max_iter=1000).fit(X, y)
    assert ours.coef_ == pytest.approx(ref.coef_.ravel(), abs=1e-5)
    assert ours.intercept_ == pytest.approx(ref.intercept_[0], abs=1e-5)
    assert clone(ours).get_params() == ours.get_params()


def test_separation_detected():
    x = np.r_[np.linspace(-2, -0.1, 20), np.linspace(0.1, 2, 20)]
    y = (x > 0).astype(float)
    with pytest.raises(SeparationError):
        newton_logistic(np.column_stack([np.ones_like(x), x]), y)


def test_duplicated_column_is_singular():
    d = _shifted(N=500)
    x = np.column_stack([d.x[:, 0], d.x[:, 0]])
    dup = StudyData(d.s, x, d.a, d.y)
    with pytest.raises(SingularMatrixError, match="collinear"):
        fit_selection_logistic(dup)


def test_fitted_score_is_zero():
    d = _shifted(shift=0.5)
    fit = fit_selection_logistic(d)
    score = d.design.T @ (d.s - fit.predict_proba(d.x)) / d.N
    assert np.max(np.abs(score)) < 1e-8


def test_intercept_only_ratio_is_one():
    d = _shifted(N=2000)
    fit = LogisticFit(np.array([logit(d.alpha_hat), 0.0, 0.0]), True, 1, 0.0)
    r = density_ratio(fit, d)
    x = np.random.default_rng(0).standard_normal((50, 2)) * 3
    assert np.allclose(r(x), 1.0, atol=1e-12)


def test_ratio_self_normalizes_without_shift():
    d = _shifted()
    nf = fit_nuisances(d)
    r = nf.predict(d).r[d.source]
    assert np.mean(r) == pytest.approx(1.0, abs=0.05)
    assert np.all(r > 0)


def test_ratio_recovers_true_shift():
    spec = get_spec("appE_linear")
    d = generate(spec, 20000, seed=4)
    nf = fit_nuisances(d)
    src = d.source
    est = nf.predict(d).r[src]
    true = spec.density_ratio(d.x[src])
    assert np.median(np.abs(est / true - 1)) < 0.1


def test_overlap_error_far_from_support():
    d = _shifted(shift=1.0)
    nf = fit_nuisances(d)
    with pytest.raises(OverlapError) as info:
        nf.ratio(np.array([[60.0, 60.0]]))
    assert info.value.point is not None


def test_ratio_clip_counts_points():
    d = _shifted(shift=1.5)
    nf = fit_nuisances(d, ratio_clip=3.0)
    pred = nf.predict(d)
    r = pred.r[d.source]
    assert r.max() <= 3.0 and r.min() >= 1 / 3.0
    assert pred.diagnostics["n_clipped"] > 0


def test_density_ratio_estimator_api():
    d = _shifted(shift=0.5)
    est = LogisticDensityRatio().fit(d.x, d.s)
    assert np.allclose(est.predict(d.x[d.source]), fit_nuisances(d).ratio(d.x[d.source]))


def test_outcome_noiseless_line_recovered():
    x = np.linspace(-1, 1, 10)[:, None]
    reg = OutcomeRegression().fit(x, 2 + 3 * x[:, 0])
    assert reg.beta_ == pytest.approx([2.0, 3.0], abs=1e-8)


def test_ols_residuals_orthogonal(appe_data):
    mu = fit_outcomes(appe_data, "identity")
    rows = appe_data.treated
    V = appe_data.design[rows]
    res = appe_data.y[rows] - mu.predict(appe_data.x[rows], 1)
    assert np.max(np.abs(V.T @ res)) < 1e-8 * appe_data.N


def test_appe_coefficients_recovered():
    spec = get_spec("appE_linear")
    d = generate(spec, 16667, seed=11)
    mu = fit_outcomes(d, "identity")
    for a in (1, 0):
        rows = d.treated if a == 1 else d.controls
        V = d.design[rows]
        res = d.y[rows] - mu.predict(d.x[rows], a)
        sigma2 = res @ res / (rows.sum() - V.shape[1])
        se = np.sqrt(np.diag(np.linalg.inv(V.T @ V)) * sigma2)
        truth = np.asarray(spec.params[f"beta{a}"])
        assert np.all(np.abs(mu.beta(a) - truth) < 4 * se)


def test_printed_appe_beta1():
    assert get_spec("appE_linear").params["beta1"] == (0.5, 1.2, 1.1, 3.3, -0.6)
    assert get_spec("appE_linear").params["beta0"] == (-0.2, -0.6, 0.6, 1.7, 0.3)


def test_underdetermined_arm():
    x = np.random.default_rng(0).standard_normal((10, 5))
    s = np.r_[np.ones(4), np.zeros(6)].astype(int)
    a = np.r_[1, 1, 1, 0, np.full(6, np.nan)]
    y = np.r_[1.0, 2.0, 3.0, 4.0, np.full(6, np.nan)]
    with pytest.raises(SingularMatrixError, match="under-determined"):
        fit_outcomes(StudyData(s, x, a, y))


def test_auto_link_selects_logit_for_binary(make_study):
    d = make_study(binary=True)
    assert fit_outcomes(d).link == "logit"
    assert fit_outcomes(make_study()).link == "identity"


def test_mu0_target_requires_controls(make_study):
    with pytest.raises(CapabilityError, match="target-control"):
        fit_mu0_target(make_study())


def test_mu0_target_constant(make_study):
    d = make_study(target_controls=True)
    y = np.where(d.target, 0.4, d.y)
    d2 = StudyData(d.s, d.x, d.a, y)
    mu = fit_mu0_target(d2)
    assert np.allclose(mu.predict(d.x[:7], 0), 0.4)


def test_mu0_target_linear_surface():
    spec = get_spec("exp2_rd")
    d = generate(spec, 20000, seed=3)
    mu = fit_mu0_target(d, "identity")
    truth = np.asarray(spec.params["beta0"]) + np.asarray(spec.params["theta"])
    rows = d.target_controls
    V = d.design[rows]
    res = d.y[rows] - mu.predict(d.x[rows], 0)
    se = np.sqrt(np.diag(np.linalg.inv(V.T @ V)) * res.var())
    assert np.all(np.abs(mu.beta(0) - truth) < 4 * se)


def test_cate_null_rr_is_one():
    f = FunctionOutcome({1: lambda x: np.full(len(x), 0.3), 0: lambda x: np.full(len(x), 0.3)})
    cate = plug_in_cate(get_measure("RR"), f)
    assert np.allclose(cate(np.zeros((5, 2))), 1.0)


def test_cate_domain_error_carries_x():
    f = FunctionOutcome({1: lambda x: np.full(len(x), 0.3), 0: lambda x: x[:, 0]})
    cate = plug_in_cate("RR", f)
    with pytest.raises(DomainError) as info:
        cate(np.array([[0.2], [0.0]]))
    assert info.value.x.tolist() == [0.0]


def test_cate_or_design_matches_exp_gamma():
    spec = get_spec("exp2_or")
    d = generate(spec, 200000, seed=5)
    mu = fit_outcomes(d, "logit")
    cate = plug_in_cate("OR", mu)
    grid = np.array([[0.0] * 4, [0.5, -0.5, 0.2, 0.1], [-1.0, 0.3, 0.0, 0.4]])
    V = np.column_stack([np.ones(3), grid])
    truth = np.exp(V @ np.asarray(spec.params["gamma"]))
    assert np.allclose(cate(grid), truth, rtol=0.1)


def test_crossfit_split_partition_and_determinism(make_study):
    d = make_study(n=40, m=60)
    folds = crossfit_split(d, 2, seed=3)
    ev = [set(e.tolist()) for _, e in folds]
    assert sorted(len(e) for e in ev) == [50, 50]
    assert ev[0].isdisjoint(ev[1]) and ev[0] | ev[1] == set(range(100))
    again = crossfit_split(d, 2, seed=3)
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(folds, again))
    for tr, e in folds:
        assert set(tr.tolist()) == set(range(100)) - set(e.tolist())


def test_crossfit_small_stratum():
    s = np.r_[np.ones(3), np.zeros(20)].astype(int)
    a = np.r_[1, 0, 0, np.full(20, np.nan)]
    y = np.r_[1.0, 0.0, 2.0, np.full(20, np.nan)]
    d = StudyData(s, np.random.default_rng(0).standard_normal((23, 1)), a, y)
    with pytest.raises(FoldError):
        crossfit_split(d, 5)
    with pytest.raises(FoldError):
        crossfit_split(d, 1)


def test_crossfit_predictions_cover_every_row(make_study):
    d = make_study(shift=0.3)
    pred = crossfit_nuisances(d, 2, seed=0)
    assert np.all(np.isfinite(pred.r[d.source]))
    assert np.all(np.isfinite(pred.mu1)) and np.all(np.isfinite(pred.mu0))
    assert pred.diagnostics["folds"] == 2
