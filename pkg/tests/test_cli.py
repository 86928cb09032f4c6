import io
import json

import numpy as np
import pytest

from causal_transport import __version__
from causal_transport.cli import (
    EXIT_FATAL,
    EXIT_NOINPUT,
    EXIT_OK,
    EXIT_PARTIAL,
    EXIT_USAGE,
    main,
)
from causal_transport.data import StudyData, write_csv
from causal_transport.simlab import generate


def _run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def trial_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "trial.csv"
    write_csv(generate("exp2_or", 1500, seed=1), path)
    return path


@pytest.fixture(scope="module")
def no_controls_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "plain.csv"
    write_csv(generate("exp2_or", 1500, seed=1, target_controls=False), path)
    return path


def test_no_command_is_usage():
    assert _run()[0] == EXIT_USAGE


def test_bad_flag_is_usage(trial_csv):
    assert _run("estimate", "--data", str(trial_csv), "--bogus")[0] == EXIT_USAGE


def test_estimate_basic(trial_csv):
    code, out, err = _run("estimate", "--data", str(trial_csv), "--measures", "RD,RR,OR",
                          "--estimators", "ee,tG,effect/ee")
    assert code == EXIT_OK, err
    payload = json.loads(out)
    assert payload["version"] == __version__
    assert payload["config"]["cols_x"] == ["x1", "x2", "x3", "x4"]
    assert payload["config"]["estimators"] == ["ee", "g_transported", "effect/ee"]
    assert len(payload["results"]) == 9
    assert all(r["estimate"] is not None for r in payload["results"])
    assert payload["data"]["n"] + payload["data"]["m"] == 1500


def test_estimate_bootstrap_and_out(trial_csv, tmp_path):
    code, out, err = _run("estimate", "--data", str(trial_csv), "--measure", "RD",
                          "--estimator", "ee", "--boot", "100", "--out", str(tmp_path))
    assert code == EXIT_OK, err
    assert out == ""
    res = json.loads((tmp_path / "estimates.json").read_text())["results"][0]
    lo, hi = res["ci"]
    assert lo <= res["estimate"] <= hi
    assert res["diagnostics"]["bootstrap_se"] > 0


def test_estimate_deterministic(trial_csv):
    args = ("estimate", "--data", str(trial_csv), "--measure", "OR", "--estimator", "os",
            "--boot", "100", "--seed", "3")
    assert _run(*args)[1] == _run(*args)[1]


def test_boot_below_minimum(trial_csv):
    assert _run("estimate", "--data", str(trial_csv), "--boot", "50")[0] == EXIT_USAGE


def test_unknown_names_are_usage(trial_csv):
    assert _run("estimate", "--data", str(trial_csv), "--estimator", "ipw")[0] == EXIT_USAGE
    assert _run("estimate", "--data", str(trial_csv), "--measure", "XX")[0] == EXIT_USAGE
    assert _run("simulate", "--spec", "nope")[0] == EXIT_USAGE


def test_missing_file_and_column(tmp_path, trial_csv):
    assert _run("estimate", "--data", str(tmp_path / "absent.csv"))[0] == EXIT_NOINPUT
    code, _, err = _run("estimate", "--data", str(trial_csv), "--cols-x", "x1,zz")
    assert code == EXIT_NOINPUT and "zz" in err


def test_effect_without_controls_is_partial(no_controls_csv):
    code, out, err = _run("estimate", "--data", str(no_controls_csv), "--measure", "RD",
                          "--estimators", "ee,effect/ee")
    assert code == EXIT_PARTIAL
    assert "CapabilityError" in err
    res = json.loads(out)["results"]
    assert res[0]["estimate"] is not None and res[1]["estimate"] is None


def test_nnt_at_null_is_partial(tmp_path):
    rng = np.random.default_rng(0)
    n, m = 200, 100
    x = rng.standard_normal((n + m, 1))
    y = (rng.random(n) < 0.4).astype(float)
    a = np.r_[np.ones(n // 2), np.zeros(n // 2)]
    # Duplicate the trial with arms swapped so both arms are identical.
    s = np.r_[np.ones(n), np.zeros(m)].astype(int)
    xx = np.r_[x[: n // 2], x[: n // 2], x[n:]]
    yy = np.r_[y[: n // 2], y[: n // 2], np.full(m, np.nan)]
    d = StudyData(s, xx, np.r_[a, np.full(m, np.nan)], yy)
    path = tmp_path / "null.csv"
    write_csv(d, path)
    code, out, err = _run("estimate", "--data", str(path), "--measure", "NNT",
                          "--estimator", "ee", "--link", "identity")
    assert code == EXIT_PARTIAL
    assert "DomainError" in err


def test_config_file_and_override(trial_csv, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"measures": "RR", "estimators": ["wht", "ee"], "seed": 4}))
    code, out, _ = _run("estimate", "--data", str(trial_csv), "--config", str(cfg))
    payload = json.loads(out)
    assert code == EXIT_OK
    assert [r["measure"] for r in payload["results"]] == ["RR", "RR"]
    code, out, _ = _run("estimate", "--data", str(trial_csv), "--config", str(cfg),
                        "--measure", "OR")
    assert [r["measure"] for r in json.loads(out)["results"]] == ["OR", "OR"]
    assert json.loads(out)["seed"] == 4


def test_key_value_config(tmp_path):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("# study\nn = 300\nreps=2\nestimators = ee\nmeasures=RD\n")
    code, out, _ = _run("simulate", "--spec", "appE_linear", "--config", str(cfg))
    assert code == EXIT_OK
    assert json.loads(out)["R"] == 2


def test_bad_config_key(tmp_path):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("colour = blue\n")
    assert _run("selfcheck", "--config", str(cfg))[0] == EXIT_USAGE


def test_simulate_byte_identical(tmp_path):
    args = ["simulate", "--spec", "exp1", "--n", "600", "--reps", "4",
            "--estimators", "ee,tG", "--truth-draws", "1000000"]
    first = _run(*args)
    second = _run(*args, "--threads", "2")
    assert first[0] == EXIT_OK
    assert first[1] == second[1]
    _run(*args, "--out", str(tmp_path / "a"), "--replicates")
    _run(*args, "--out", str(tmp_path / "b"), "--replicates")
    for name in ("report.json", "summary.csv", "replicates.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_effect_on_plain_spec_is_usage():
    assert _run("simulate", "--spec", "appE_linear", "--n", "200", "--reps", "1",
                "--estimators", "effect/ee")[0] == EXIT_USAGE


def test_truth(tmp_path):
    code, _, _ = _run("truth", "--spec", "appE_linear", "--measures", "RD",
                      "--out", str(tmp_path))
    assert code == EXIT_OK
    truth = json.loads((tmp_path / "truth.json").read_text())["truth"]["RD"]
    assert truth["method"] == "exact"


def test_selfcheck():
    code, out, err = _run("selfcheck")
    assert code == EXIT_OK
    assert json.loads(out)["ok"] is True
    assert "passed" in err


def test_exit_code_constants():
    assert (EXIT_OK, EXIT_FATAL, EXIT_PARTIAL, EXIT_USAGE, EXIT_NOINPUT) == (0, 1, 2, 64, 66)
