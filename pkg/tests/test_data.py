import numpy as np
import pytest

from causal_transport.data import CsvSchema, StudyData, concat, load_csv, profile, write_csv
from causal_transport.exceptions import CsvSchemaError, DataValidationError

SCHEMA = CsvSchema("S", "A", "Y", ("x1", "x2"))


def test_load_counts_rows(toy_csv):
    d = load_csv(toy_csv, SCHEMA)
    assert (d.n, d.m, d.N) == (4, 2, 6)
    assert d.p == 2
    assert np.isnan(d.a[d.target]).all()


def test_schema_as_dict(toy_csv):
    d = load_csv(toy_csv, {"cols_x": ("x1",)})
    assert d.p == 1
    assert d.feature_names == ("x1",)


def test_missing_column(toy_csv):
    with pytest.raises(CsvSchemaError, match="x9"):
        load_csv(toy_csv, CsvSchema(cols_x=("x9",)))


def _write(tmp_path, body):
    path = tmp_path / "bad.csv"
    path.write_text("S,A,Y,x1\n" + body)
    return path


def test_target_row_with_treatment_rejected(tmp_path):
    path = _write(tmp_path, "1,1,1,0\n1,0,0,1\n0,1,0,2\n")
    with pytest.raises(DataValidationError, match="target rows never carry treatment"):
        load_csv(path, CsvSchema(cols_x=("x1",)))


def test_bad_s_value_names_row(tmp_path):
    path = _write(tmp_path, "1,1,1,0\n2,0,0,1\n0,,,2\n")
    with pytest.raises(DataValidationError, match="row 1") as info:
        load_csv(path, CsvSchema(cols_x=("x1",)))
    assert info.value.row == 1


def test_non_numeric_covariate(tmp_path):
    path = _write(tmp_path, "1,1,1,abc\n1,0,0,1\n0,,,2\n")
    with pytest.raises(DataValidationError, match="non-numeric"):
        load_csv(path, CsvSchema(cols_x=("x1",)))


def test_missing_covariate_rejected(tmp_path):
    path = _write(tmp_path, "1,1,1,\n1,0,0,1\n0,,,2\n")
    with pytest.raises(DataValidationError, match="missing"):
        load_csv(path, CsvSchema(cols_x=("x1",)))


def test_all_source_rejected(tmp_path):
    path = _write(tmp_path, "1,1,1,0\n1,0,0,1\n")
    with pytest.raises(DataValidationError):
        load_csv(path, CsvSchema(cols_x=("x1",)))


def test_empty_arm_rejected():
    with pytest.raises(DataValidationError):
        StudyData([1, 1, 0], [[0.0], [1.0], [2.0]], [1, 1, np.nan], [0, 1, np.nan])


def test_trial_row_needs_outcome():
    with pytest.raises(DataValidationError):
        StudyData([1, 1, 0], [[0.0], [1.0], [2.0]], [1, 0, np.nan], [np.nan, 1, np.nan])


def test_pi_validated():
    with pytest.raises(DataValidationError, match="pi"):
        StudyData([1, 1, 0], [[0.0], [1.0], [2.0]], [1, 0, np.nan], [0, 1, np.nan], pi=1.0)


def test_target_controls_detected():
    d = StudyData([1, 1, 0, 0], [[0.0], [1.0], [2.0], [3.0]], [1, 0, 0, np.nan],
                  [0, 1, 1, np.nan])
    assert d.has_target_controls
    assert d.target_controls.tolist() == [False, False, True, False]
    assert not d.without_target_controls().has_target_controls


def test_immutable():
    d = StudyData([1, 1, 0], [[0.0], [1.0], [2.0]], [1, 0, np.nan], [0, 1, np.nan])
    with pytest.raises(ValueError):
        d.x[0, 0] = 5.0


def test_csv_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    n, m = 30, 20
    x = rng.standard_normal((n + m, 3)) * 1e3
    d = StudyData(np.r_[np.ones(n), np.zeros(m)].astype(int), x,
                  np.r_[rng.integers(0, 2, n), np.full(m, np.nan)],
                  np.r_[rng.standard_normal(n) / 7, np.full(m, np.nan)])
    path = tmp_path / "rt.csv"
    write_csv(d, path)
    back = load_csv(path, CsvSchema(cols_x=d.feature_names))
    assert np.array_equal(back.x, d.x)
    assert np.array_equal(back.s, d.s)
    assert np.array_equal(back.y, d.y, equal_nan=True)
    assert np.array_equal(back.a, d.a, equal_nan=True)


def test_split_and_concat_preserves_rows(appe_data):
    src, tgt = appe_data.split_by_s()
    back = concat([src, tgt])
    order = np.r_[np.flatnonzero(appe_data.source), np.flatnonzero(appe_data.target)]
    assert np.array_equal(back.x, appe_data.x[order])
    assert np.array_equal(back.y, appe_data.y[order], equal_nan=True)


def test_profile_alpha_and_counts():
    n, N = 30, 100
    rng = np.random.default_rng(5)
    a = np.r_[np.tile([0.0, 1.0], n // 2), np.full(N - n, np.nan)]
    y = np.r_[rng.random(n), np.full(N - n, np.nan)]
    x = np.column_stack([np.ones(N), rng.standard_normal(N)])
    d = StudyData(np.r_[np.ones(n), np.zeros(N - n)].astype(int), x, a, y)
    prof = profile(d)
    assert prof.alpha_hat == pytest.approx(0.3)
    assert prof.n1 + prof.n0 + prof.m == prof.N
    assert prof.covariates["x1"]["sd_source"] == 0.0
    assert prof.covariates["x1"]["sd_target"] == 0.0


def test_profile_arm_counts_binomial(appe_data):
    prof = profile(appe_data)
    sd = np.sqrt(prof.n * 0.25)
    assert abs(prof.n1 - prof.n / 2) < 4 * sd
    assert profile(appe_data).to_dict() == prof.to_dict()
