import numpy as np
import pytest

from causal_transport.data import StudyData
from causal_transport.simlab import generate


@pytest.fixture(scope="session")
def appe_data():
    return generate("appE_linear", 5000, seed=123)


@pytest.fixture(scope="session")
def exp2_or_data():
    return generate("exp2_or", 5000, seed=7)


@pytest.fixture
def toy_csv(tmp_path):
    """Six rows: four trial rows and two target rows."""
    path = tmp_path / "toy.csv"
    path.write_text(
        "S,A,Y,x1,x2\n"
        "1,1,1,0.5,1.0\n"
        "1,0,0,-0.2,0.3\n"
        "1,1,0,1.5,-1.0\n"
        "1,0,1,0.1,0.0\n"
        "0,,,0.7,0.2\n"
        "0,,,-0.4,2.5\n"
    )
    return path


def _make_study(n=400, m=600, p=2, shift=0.0, seed=0, binary=False, target_controls=False):
    """Small randomized trial plus target sample with a linear outcome."""
    rng = np.random.default_rng(seed)
    xs = rng.standard_normal((n, p))
    xt = rng.standard_normal((m, p)) + shift
    a = (rng.random(n) < 0.5).astype(float)
    lin = 0.3 + xs @ np.linspace(0.5, -0.5, p) + 0.4 * a
    if binary:
        ys = (rng.random(n) < 1 / (1 + np.exp(-lin))).astype(float)
    else:
        ys = lin + rng.standard_normal(n)
    at = np.full(m, np.nan)
    yt = np.full(m, np.nan)
    if target_controls:
        lt = 0.3 + xt @ np.linspace(0.5, -0.5, p)
        at = np.zeros(m)
        yt = (rng.random(m) < 1 / (1 + np.exp(-lt))).astype(float) if binary else lt + rng.standard_normal(m)
    return StudyData(
        np.r_[np.ones(n), np.zeros(m)].astype(int),
        np.vstack([xs, xt]),
        np.r_[a, at],
        np.r_[ys, yt],
    )


@pytest.fixture
def make_study():
    return _make_study
