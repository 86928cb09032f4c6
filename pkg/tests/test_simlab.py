import json

import numpy as np
import pytest
from scipy.special import expit

from causal_transport.measures import eval_phi
from causal_transport.nuisance import newton_logistic
from causal_transport.simlab import (
    SPEC_NAMES,
    generate,
    get_spec,
    population_means,
    qmc_means,
    run_study,
    true_effects,
)


def test_all_specs_load():
    for name in SPEC_NAMES:
        spec = get_spec(name)
        assert spec.name == name
        assert json.loads(json.dumps(spec.to_dict()))["name"] == name


def test_spec_alias_and_unknown():
    assert get_spec("exp1").name == "exp1_nonlinear"
    with pytest.raises(KeyError, match="valid names"):
        get_spec("exp9")


def test_selection_fraction_at_scale():
    d = generate("exp1", 1_000_000, seed=0)
    assert d.n / d.N == pytest.approx(0.3, abs=0.002)


def test_generated_layout():
    d, lat = generate("exp2_or", 2000, seed=1, return_latent=True)
    assert d.has_target_controls
    assert np.all(d.a[d.target] == 0)
    np.testing.assert_array_equal(d.y[d.target], lat.y0[d.target])
    d2 = generate("exp2_or", 2000, seed=1, target_controls=False)
    assert not d2.has_target_controls
    assert np.all(np.isnan(d2.y[d2.target]))


def test_exp2_or_logistic_recovers_coefficients():
    spec = get_spec("exp2_or")
    d = generate(spec, 200_000, seed=2)
    src = d.source
    x, a, y = d.x[src], d.a[src], d.y[src]
    V = np.column_stack([np.ones(x.shape[0]), x])
    D = np.column_stack([V, a[:, None] * V])
    fit = newton_logistic(D, y)
    p = expit(D @ fit.beta)
    se = np.sqrt(np.diag(np.linalg.inv(D.T @ (D * (p * (1 - p))[:, None]))))
    target = np.r_[spec.params["beta_s"], spec.params["gamma"]]
    assert np.all(np.abs(fit.beta - target) < 4 * se)


def test_deterministic_generation():
    a = generate("appE_linear", 500, seed=9)
    b = generate("appE_linear", 500, seed=9)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.y, b.y)


def test_qmc_truth_agrees_with_monte_carlo():
    t = true_effects("exp1", "RD")
    psi1, psi0 = qmc_means("exp1", m_log2=20)
    assert psi1 - psi0 == pytest.approx(t.tau_t, abs=3 * t.se_t + 1e-4)


def test_linear_truth_is_exact():
    spec = get_spec("appE_linear")
    pm = population_means(spec)
    v = np.r_[1.0, spec.nu_t]
    assert pm.psi1 == pytest.approx(v @ spec.params["beta1"], abs=1e-14)
    assert pm.method == "exact"


def test_identical_populations_share_effects():
    from dataclasses import replace

    spec = replace(get_spec("exp1"), nu_t=get_spec("exp1").nu_s)
    for m in ("RD", "RR", "OR"):
        t = true_effects(spec, m)
        assert t.tau_t == t.tau_s


def test_truth_needs_enough_draws():
    with pytest.raises(ValueError):
        true_effects("exp1", "RD", M=10_000)


def test_truth_is_phi_of_means():
    t = true_effects("exp2_or", "OR")
    assert t.tau_t == pytest.approx(eval_phi("OR", t.target.psi1, t.target.psi0), rel=1e-14)


@pytest.fixture(scope="module")
def small_study():
    return run_study("appE_linear", N=800, R=12, estimators=["wht", "ee", "os"],
                     measures=["RD", "RR"], seed=5)


def test_study_identity_rmse(small_study):
    for c in small_study.cells:
        assert c.rmse**2 == pytest.approx(c.bias**2 + c.sd**2, abs=1e-12)


def test_study_records_invariants(small_study):
    assert len(small_study.ee_residuals) == 12
    assert max(small_study.ee_residuals) < 1e-10
    assert max(small_study.os_ee_rd_diffs) < 1e-12


def test_study_deterministic_and_thread_invariant(small_study):
    again = run_study("appE_linear", N=800, R=12, estimators=["wht", "ee", "os"],
                      measures=["RD", "RR"], seed=5, threads=2)
    assert again.to_json() == small_study.to_json()
    assert again.to_csv() == small_study.to_csv()


def test_study_rejects_effect_without_controls():
    with pytest.raises(ValueError, match="target-control"):
        run_study("appE_linear", N=200, R=1, estimators=["effect/ee"])


def test_study_write(tmp_path, small_study):
    paths = small_study.write(tmp_path, replicates=True)
    assert [p.rsplit("/", 1)[-1] for p in paths] == ["report.json", "summary.csv",
                                                     "replicates.csv"]
    rep = json.loads(open(paths[0]).read())
    assert rep["R"] == 12 and len(rep["cells"]) == 6
    assert small_study.cell("os", "rd").measure == "RD"
    with pytest.raises(KeyError):
        small_study.cell("tG", "RD")


def test_exp1_source_effects_match_published_values():
    targets = {"RD": (0.45, 0.05), "RR": (3.2, 0.1), "OR": (7.5, 0.3)}
    for m, (value, tol) in targets.items():
        assert abs(true_effects("exp1", m).tau_s - value) < tol
