"""Exact checks on a population with a three-point covariate.

With a covariate taking three values, a one-hot design makes every nuisance
model saturated: the selection logistic regression reproduces the cell
frequencies and the per-arm regressions reproduce the cell means. A sample
that holds every (population, cell, arm, outcome) combination in its exact
proportion therefore *is* the population, and every estimator run on it must
equal the identification formula it is built on, evaluated by enumeration
over the three support points.

>>> res = discrete_oracle_check()
>>> res.max_error < 1e-10
True
"""

from dataclasses import dataclass, field
from fractions import Fraction
from math import lcm
from typing import Dict, Tuple

import numpy as np

from .data import StudyData
from .measures import get_measure
from .nuisance import fit_nuisances

__all__ = [
    "DiscretePopulation",
    "DEFAULT_POPULATION",
    "OracleResult",
    "enumerate_means",
    "enumerate_effect",
    "closed_form_effect",
    "exact_sample",
    "discrete_oracle_check",
]


@dataclass(frozen=True)
class DiscretePopulation:
    """Trial and target populations on the support ``{0, 1, 2}``.

    All quantities are rational so that an exact sample can be built.

    Parameters
    ----------
    p_s, p_t : tuple of Fraction
        Covariate distributions in the trial and in the target.
    mu1_s, mu0_s : tuple of Fraction
        Trial conditional outcome means ``P(Y(a)=1 | X=k, S=1)``.
    mu0_t : tuple of Fraction
        Target conditional control mean ``P(Y(0)=1 | X=k, S=0)``.
    pi : Fraction
        Trial assignment probability.
    n, m : int
        Trial and target sizes of the exact sample; the smallest valid sizes
        are used when omitted.
    """

    p_s: Tuple[Fraction, ...]
    p_t: Tuple[Fraction, ...]
    mu1_s: Tuple[Fraction, ...]
    mu0_s: Tuple[Fraction, ...]
    mu0_t: Tuple[Fraction, ...]
    pi: Fraction = Fraction(1, 2)
    n: int = 0
    m: int = 0

    def __post_init__(self):
        for name in ("p_s", "p_t"):
            vals = getattr(self, name)
            if len(vals) != 3 or sum(vals) != 1 or min(vals) <= 0:
                raise ValueError(f"{name} must be a positive distribution on 3 points")
        for name in ("mu1_s", "mu0_s", "mu0_t"):
            vals = getattr(self, name)
            if len(vals) != 3 or not all(0 < v < 1 for v in vals):
                raise ValueError(f"{name} must hold 3 probabilities in (0, 1)")
        if not 0 < self.pi < 1:
            raise ValueError("pi must lie in (0, 1)")

    @property
    def ratio(self):
        """Density ratio ``p_T(k) / p_S(k)`` on the support."""
        return tuple(t / s for t, s in zip(self.p_t, self.p_s))

    def sizes(self):
        """Trial and target sample sizes giving integer cell counts."""
        den_s = lcm(*(
            (p * arm * mu).denominator
            for p in self.p_s
            for arm, mus in ((self.pi, self.mu1_s), (1 - self.pi, self.mu0_s))
            for mu in (mus + (Fraction(1),))
        ))
        den_t = lcm(*((p * mu).denominator for p in self.p_t for mu in self.mu0_t + (1,)))
        n = self.n or den_s
        m = self.m or den_t
        if n % den_s or m % den_t:
            raise ValueError(f"n must be a multiple of {den_s} and m of {den_t}")
        return n, m


DEFAULT_POPULATION = DiscretePopulation(
    p_s=(Fraction(1, 2), Fraction(1, 3), Fraction(1, 6)),
    p_t=(Fraction(1, 5), Fraction(2, 5), Fraction(2, 5)),
    mu1_s=(Fraction(3, 5), Fraction(2, 5), Fraction(4, 5)),
    mu0_s=(Fraction(3, 10), Fraction(1, 5), Fraction(1, 2)),
    mu0_t=(Fraction(2, 5), Fraction(1, 10), Fraction(7, 10)),
)


def _onehot(k):
    k = np.asarray(k)
    return np.column_stack([(k == 1), (k == 2)]).astype(float)


def exact_sample(pop=DEFAULT_POPULATION):
    """Pooled sample reproducing ``pop`` exactly.

    Target rows carry their control outcome (``A = 0``).

    Returns
    -------
    StudyData
        Covariates are the one-hot columns ``(1{X=1}, 1{X=2})``.
    """
    n, m = pop.sizes()
    s, k, a, y = [], [], [], []

    def add(pop_flag, cell, arm, count, mean):
        ones = int(count * mean)
        s.extend([pop_flag] * int(count))
        k.extend([cell] * int(count))
        a.extend([arm] * int(count))
        y.extend([1.0] * ones + [0.0] * (int(count) - ones))

    for cell in range(3):
        c = n * pop.p_s[cell]
        add(1, cell, 1.0, c * pop.pi, pop.mu1_s[cell])
        add(1, cell, 0.0, c * (1 - pop.pi), pop.mu0_s[cell])
        add(0, cell, 0.0, m * pop.p_t[cell], pop.mu0_t[cell])
    return StudyData(
        np.asarray(s, dtype=np.int8), _onehot(k), np.asarray(a), np.asarray(y),
        pi=float(pop.pi), feature_names=("x_is_1", "x_is_2"),
    )


def enumerate_means(pop=DEFAULT_POPULATION):
    """Target arm means by the three identification formulas.

    Returns
    -------
    dict
        ``{"transport": (psi1, psi0), "weight_outcomes": ...,
        "weight_conditional": ...}``. The first transports the trial
        conditional means to the target covariate distribution, the second
        reweights trial outcomes by the density ratio, the third reweights
        the trial conditional means.
    """
    r = pop.ratio
    out = {}
    for key in ("transport", "weight_outcomes", "weight_conditional"):
        arms = []
        for mus, prob in ((pop.mu1_s, pop.pi), (pop.mu0_s, 1 - pop.pi)):
            if key == "transport":
                val = sum(pt * mu for pt, mu in zip(pop.p_t, mus))
            elif key == "weight_outcomes":
                # E_S[r(X) 1{A=a} Y / P(A=a)] summed over cells and outcomes.
                val = sum(ps * rk * prob * mu / prob for ps, rk, mu in zip(pop.p_s, r, mus))
            else:
                val = sum(ps * rk * mu for ps, rk, mu in zip(pop.p_s, r, mus))
            arms.append(val)
        out[key] = tuple(arms)
    return out


def _cell_gamma(m, pop):
    tau = np.array([float(m.phi(float(a), float(b))) for a, b in zip(pop.mu1_s, pop.mu0_s)])
    mu0 = np.array([float(v) for v in pop.mu0_t])
    return m.gamma(tau, mu0), tau, mu0


def enumerate_effect(m, pop=DEFAULT_POPULATION):
    """Target effect under exchangeability of the conditional effect.

    Returns
    -------
    dict
        ``{"transport": tau, "weight": tau}``, the transporting and the
        weighting identification formulas.
    """
    m = get_measure(m)
    g, _, mu0 = _cell_gamma(m, pop)
    pt = np.array([float(v) for v in pop.p_t])
    ps = np.array([float(v) for v in pop.p_s])
    r = np.array([float(v) for v in pop.ratio])
    psi0 = float(pt @ mu0)
    return {
        "transport": float(m.phi(float(pt @ g), psi0)),
        "weight": float(m.phi(float(ps @ (r * g)), psi0)),
    }


def closed_form_effect(m, pop=DEFAULT_POPULATION):
    """Measure-specific closed forms of the target RD, RR and OR."""
    name = get_measure(m).name
    pt = np.array([float(v) for v in pop.p_t])
    p1 = np.array([float(v) for v in pop.mu1_s])
    p0 = np.array([float(v) for v in pop.mu0_s])
    mu0 = np.array([float(v) for v in pop.mu0_t])
    base = float(pt @ mu0)
    if name == "RD":
        return float(pt @ (p1 - p0))
    if name == "RR":
        return float(pt @ (p1 / p0 * mu0)) / base
    if name == "OR":
        t = p1 * (1 - p0) / (p0 * (1 - p1))
        q = float(pt @ (t * mu0 / (1 + t * mu0 - mu0)))
        return q / (1 - q) / (base / (1 - base))
    raise ValueError(f"no closed form for {name}")


@dataclass
class OracleResult:
    """Comparisons made by :func:`discrete_oracle_check`.

    Attributes
    ----------
    rows : list of dict
        One entry per comparison with keys ``check``, ``measure``,
        ``expected``, ``got`` and ``error``.
    """

    rows: list = field(default_factory=list)

    @property
    def max_error(self):
        return max(r["error"] for r in self.rows)

    def passed(self, tol=1e-10):
        return self.max_error < tol

    def to_dict(self) -> Dict:
        return {"max_error": self.max_error, "rows": self.rows}


_MEAN_ESTIMATORS = {
    "transport": "g_transported",
    "weight_outcomes": "wht",
    "weight_conditional": "g_weighted",
}
_EFFECT_ESTIMATORS = {"transport": "gamma_transported", "weight": "gamma_weighted"}


def discrete_oracle_check(pop=DEFAULT_POPULATION, measures=("RD", "RR", "OR")):
    """Run the estimators on the exact sample and compare with enumeration.

    Returns
    -------
    OracleResult
    """
    from . import estimators_effect as eff
    from . import estimators_mean as em

    d = exact_sample(pop)
    nf = fit_nuisances(d, link="identity", tol=1e-13)
    res = OracleResult()

    def record(check, measure, expected, got):
        res.rows.append({
            "check": check, "measure": measure, "expected": float(expected),
            "got": float(got), "error": abs(float(expected) - float(got)),
        })

    truth = enumerate_means(pop)
    for key, est in _MEAN_ESTIMATORS.items():
        arms = getattr(em, f"{est}_arm_means")(d, nf)
        for arm, val in zip((1, 0), truth[key]):
            record(f"{key}/{est}", f"psi{arm}", val, arms[arm])
    for name in measures:
        mm = get_measure(name)
        psi = truth["transport"]
        tau_mean = mm.phi(float(psi[0]), float(psi[1]))
        for est in ("wht", "g_weighted", "g_transported", "ee"):
            record(f"mean/{est}", mm.name, tau_mean, getattr(em, est)(d, mm, nf).estimate)
        enum = enumerate_effect(mm, pop)
        closed = closed_form_effect(mm, pop)
        record("effect/closed_form", mm.name, closed, enum["transport"])
        for key, est in _EFFECT_ESTIMATORS.items():
            got = getattr(eff, est)(d, mm, nf).estimate
            record(f"effect/{key}/{est}", mm.name, enum[key], got)
        record("effect/ee", mm.name, enum["transport"], eff.ee_effect(d, mm, nf).estimate)
    return res
