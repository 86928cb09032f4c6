"""Acceptance suite: one test per criterion, at the stated tolerances.

Every simulation study is run once per session and shared between the tests
that read it. All studies use seed 0.
"""

import io
import time

import pytest

from causal_transport.cli import main
from causal_transport.measures import registry_selfcheck
from causal_transport.oracle import discrete_oracle_check
from causal_transport.pipeline import NuisanceConfig
from causal_transport.simlab import get_spec, run_study, true_effects

SEED = 0
N = 5000
R = 300
MEASURES = ("RD", "RR", "OR")
MEAN_ESTIMATORS = ("wht", "g_weighted", "g_transported", "ee", "os")
EFFECT_ESTIMATORS = (
    "effect/gamma_transported",
    "effect/gamma_weighted",
    "effect/ee",
    "effect/os:ee",
)

_STUDIES = {}


def _timed(key, **kwargs):
    """Run a study once and remember it with its wall-clock time."""
    if key not in _STUDIES:
        t0 = time.perf_counter()
        report = run_study(seed=SEED, threads=1, **kwargs)
        _STUDIES[key] = (report, time.perf_counter() - t0)
    return _STUDIES[key]


def appe_study():
    return _timed("appE", spec="appE_linear", N=N, R=R, estimators=MEAN_ESTIMATORS,
                  measures=MEASURES, se="none")


def exp1_study():
    return _timed("exp1", spec="exp1", N=N, R=R, estimators=MEAN_ESTIMATORS,
                  measures=MEASURES, se="none")


def exp2_study(name):
    own = name.split("_")[1].upper()
    measures = ("RD",) if own == "RD" else ("RD", own)
    return _timed(name, spec=name, N=N, R=R, estimators=MEAN_ESTIMATORS + EFFECT_ESTIMATORS,
                  measures=measures, se="none")


def dr_study(case):
    spec = get_spec("exp1")
    if case == "zero_outcome":
        config = NuisanceConfig(link=spec.link, outcome_model="zero")
    else:
        config = NuisanceConfig(link=spec.link, ratio_model="one", outcome_model="oracle")
    # The one-step estimator is carried along for the identities of criterion 7.
    # Its default start, the transported G-formula, is Phi(0, 0) when the
    # outcome model is zero, which is outside the RR and OR domains, so those
    # cells are allowed to fail here; ee failures are checked explicitly.
    return _timed(f"dr_{case}", spec=spec, N=N, R=R, estimators=("ee", "os"),
                  measures=MEASURES, se="none", config=config, max_failure_rate=1.0)


def _z(report, est, m):
    return report.cell(est, m).bias_z


# ---------------------------------------------------------------------------
# 1. Measure registry
# ---------------------------------------------------------------------------

def test_criterion_1_measure_registry():
    t0 = time.perf_counter()
    records = registry_selfcheck(n_points=1000)
    elapsed = time.perf_counter() - t0
    assert len(records) == 12
    for rec in records:
        assert rec["roundtrip_max_abs_err"] < 1e-10, rec
        assert rec["derivative_max_rel_err"] < 1e-4, rec
    assert elapsed < 5.0


# ---------------------------------------------------------------------------
# 2. Discrete-population oracle
# ---------------------------------------------------------------------------

def test_criterion_2_discrete_oracle():
    t0 = time.perf_counter()
    res = discrete_oracle_check()
    elapsed = time.perf_counter() - t0
    bad = [r for r in res.rows if r["error"] >= 1e-10]
    assert not bad, bad
    assert {r["measure"] for r in res.rows if r["check"] == "effect/closed_form"} == set(MEASURES)
    assert elapsed < 5.0


# ---------------------------------------------------------------------------
# 3. Linear design
# ---------------------------------------------------------------------------

def test_criterion_3_appe_unbiased():
    report, elapsed = appe_study()
    z = {(e, m): _z(report, e, m) for e in MEAN_ESTIMATORS for m in MEASURES}
    biased = {k: round(v, 2) for k, v in z.items() if abs(v) >= 3}
    assert not biased, biased
    assert all(report.cell(e, m).failures == 0 for e, m in z)
    assert elapsed < 600


def test_criterion_3_appe_variance_ordering():
    report, _ = appe_study()
    v_tg = report.cell("g_transported", "RD").sd ** 2
    v_wg = report.cell("g_weighted", "RD").sd ** 2
    v_wht = report.cell("wht", "RD").sd ** 2
    assert v_tg <= 1.05 * v_wg
    assert v_wg <= 1.05 * v_wht


# ---------------------------------------------------------------------------
# 4. Nonlinear binary design
# ---------------------------------------------------------------------------

def test_criterion_4_exp1_bias_pattern():
    report, elapsed = exp1_study()
    for m in MEASURES:
        assert abs(_z(report, "ee", m)) < 3, (m, _z(report, "ee", m))
        assert abs(_z(report, "g_transported", m)) > 5, m
        assert abs(_z(report, "g_weighted", m)) > 5, m
    assert abs(_z(report, "os", "RD")) < 3
    assert abs(_z(report, "os", "RR")) > 3
    assert abs(_z(report, "os", "OR")) > 3
    assert elapsed < 900


def test_criterion_4_exp1_source_effects():
    targets = {"RD": (0.45, 0.05), "RR": (3.2, 0.2), "OR": (7.5, 0.8)}
    for m, (value, tol) in targets.items():
        assert abs(true_effects("exp1", m).tau_s - value) < tol, m


# ---------------------------------------------------------------------------
# 5. Conditional-effect exchangeability designs
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("name", ["exp2_rd", "exp2_rr", "exp2_or"])
def test_criterion_5_exp2(name):
    report, elapsed = exp2_study(name)
    own = name.split("_")[1].upper()
    for e in MEAN_ESTIMATORS:
        z = _z(report, e, own)
        if own == "RD":
            assert abs(z) < 3, (e, z)
        else:
            assert abs(z) > 5, (e, z)
    for e in EFFECT_ESTIMATORS:
        z = _z(report, e, own)
        assert abs(z) < 3, (e, z)
    assert elapsed < 900


# ---------------------------------------------------------------------------
# 6. Double robustness
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("case", ["zero_outcome", "unit_ratio"])
def test_criterion_6_double_robustness(case):
    report, _ = dr_study(case)
    for m in MEASURES:
        assert report.cell("ee", m).failures == 0
        assert abs(_z(report, "ee", m)) < 3, (m, _z(report, "ee", m))


# ---------------------------------------------------------------------------
# 7. Estimating-equation identities on every simulated dataset
# ---------------------------------------------------------------------------

def test_criterion_7_ee_identities():
    reports = [appe_study()[0], exp1_study()[0]]
    reports += [exp2_study(n)[0] for n in ("exp2_rd", "exp2_rr", "exp2_or")]
    reports += [dr_study(c)[0] for c in ("zero_outcome", "unit_ratio")]
    for rep in reports:
        assert len(rep.ee_residuals) == R
        assert len(rep.os_ee_rd_diffs) == R
        assert max(rep.ee_residuals) < 1e-10, rep.spec["name"]
        assert max(rep.os_ee_rd_diffs) < 1e-12, rep.spec["name"]


# ---------------------------------------------------------------------------
# 8. Variance engines
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def variance_studies():
    t0 = time.perf_counter()
    sandwich = run_study("appE_linear", N=10000, R=1000, estimators=("g_transported",),
                         measures=("RD",), seed=SEED, se="sandwich")
    oracle = run_study("appE_linear", N=10000, R=1000, estimators=("wht",),
                       measures=("RD",), seed=SEED, se="auto",
                       config=NuisanceConfig(link="identity", ratio_model="oracle"))
    return sandwich, oracle, time.perf_counter() - t0


def _mean_se(report, est):
    ses = [s for s in report.std_errors[(est, "RD")] if s is not None]
    assert len(ses) == report.R
    return sum(ses) / len(ses)


def test_criterion_8_sandwich_se(variance_studies):
    sandwich, _, elapsed = variance_studies
    sd = sandwich.cell("g_transported", "RD").sd
    assert abs(_mean_se(sandwich, "g_transported") / sd - 1) < 0.15
    assert elapsed < 1200


def test_criterion_8_oracle_se(variance_studies):
    _, oracle, _ = variance_studies
    assert oracle.config["ratio_model"] == "oracle"
    sd = oracle.cell("wht", "RD").sd
    assert abs(_mean_se(oracle, "wht") / sd - 1) < 0.15


def test_criterion_8_sandwich_coverage(variance_studies):
    sandwich, _, _ = variance_studies
    cell = sandwich.cell("g_transported", "RD")
    assert cell.n_se == sandwich.R
    assert 0.925 <= cell.coverage <= 0.975


# ---------------------------------------------------------------------------
# 9. Determinism
# ---------------------------------------------------------------------------

def test_criterion_9_simulate_byte_identical(tmp_path):
    argv = ["simulate", "--spec", "exp2_or", "--n", "1000", "--reps", "6",
            "--truth-draws", "1000000", "--replicates"]
    outputs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        code = main(argv + ["--out", str(out)], io.StringIO(), io.StringIO())
        assert code == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outputs[0] == outputs[1]
    assert set(outputs[0]) == {"report.json", "summary.csv", "replicates.csv"}
