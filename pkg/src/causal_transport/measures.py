"""Registry of first-moment causal effect measures.

A first-moment causal measure is a function ``Phi(psi1, psi0)`` of the two
potential-outcome means that is invertible in its first argument. Its partial
inverse ``Gamma(tau, psi0)`` (the *effect function*) satisfies
``Gamma(Phi(psi1, psi0), psi0) == psi1``.

Every callable in this module is vectorised over numpy arrays so that the
estimators can apply ``Gamma`` row-wise to conditional effects.

Notes
-----
For several measures the effect functions found in the literature do not
invert the corresponding measure. The registry stores the algebraic inverse of
``Phi`` as :attr:`EffectMeasure.gamma` and keeps the tabulated expression as
:attr:`EffectMeasure.printed_gamma` so that :func:`registry_selfcheck` can
report the discrepancy.

Examples
--------
>>> from causal_transport.measures import get_measure, eval_phi, eval_gamma
>>> rr = get_measure("rr")
>>> round(eval_phi(rr, 0.01, 0.03), 12)
0.333333333333
>>> eval_gamma(rr, eval_phi(rr, 0.4, 0.2), 0.2)
0.4
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.special import expit, logit

from .exceptions import DerivativeError, DomainError, UnknownMeasureError

__all__ = [
    "EffectMeasure",
    "MEASURES",
    "MEASURE_NAMES",
    "get_measure",
    "eval_phi",
    "eval_gamma",
    "phi_gradient",
    "gamma_gradient",
    "in_domain",
    "sample_domain",
    "registry_selfcheck",
]

NNT_NULL_TOL = 1e-12

Constraint = Tuple[str, Callable]


def _asarr(*xs):
    return [np.asarray(x, dtype=float) for x in xs]


def _ones_like(a, b):
    return np.ones(np.broadcast(a, b).shape)


@dataclass(frozen=True)
class EffectMeasure:
    """A causal effect measure with its effect function and derivatives.

    Parameters
    ----------
    name : str
        Canonical identifier, e.g. ``"RD"``.
    label : str
        Human readable name.
    phi : callable
        ``phi(psi1, psi0)``, the effect measure.
    gamma : callable
        ``gamma(tau, psi0)``, the inverse of ``phi`` in its first argument.
    dphi_d1, dphi_d0 : callable
        Partial derivatives of ``phi`` with respect to ``psi1`` and ``psi0``.
    dgamma_dtau, dgamma_dpsi0 : callable
        Partial derivatives of ``gamma`` with respect to ``tau`` and ``psi0``.
    constraints : tuple of (str, callable)
        Named predicates ``(psi1, psi0) -> bool`` whose conjunction defines
        the admissible domain of ``phi``.
    gamma_constraints : tuple of (str, callable)
        Named predicates ``(tau, psi0) -> bool`` for ``gamma``.
    null_value : float or None
        Value of ``phi(p, p)``; ``None`` when the measure has no constant
        null value.
    printed_gamma : callable or None
        Effect function as commonly tabulated, kept for comparison only.
    """

    name: str
    label: str
    phi: Callable
    gamma: Callable
    dphi_d1: Callable
    dphi_d0: Callable
    dgamma_dtau: Callable
    dgamma_dpsi0: Callable
    constraints: Tuple[Constraint, ...] = ()
    gamma_constraints: Tuple[Constraint, ...] = ()
    null_value: Optional[float] = None
    printed_gamma: Optional[Callable] = field(default=None, compare=False)
    probability_scale: bool = False

    def domain(self, psi1, psi0):
        """Return a boolean (array) for membership of ``(psi1, psi0)`` in the domain."""
        psi1, psi0 = _asarr(psi1, psi0)
        ok = np.isfinite(psi1) & np.isfinite(psi0)
        with np.errstate(all="ignore"):
            for _, pred in self.constraints:
                ok = ok & pred(psi1, psi0)
        return ok

    def gamma_domain(self, tau, psi0):
        """Return a boolean (array) for admissibility of ``(tau, psi0)`` in ``gamma``."""
        tau, psi0 = _asarr(tau, psi0)
        ok = np.isfinite(tau) & np.isfinite(psi0)
        with np.errstate(all="ignore"):
            for _, pred in self.gamma_constraints:
                ok = ok & pred(tau, psi0)
        return ok

    def __repr__(self):
        return f"EffectMeasure({self.name!r})"


def _unit_open(x):
    return (x > 0.0) & (x < 1.0)


def _unit_closed(x):
    return (x >= 0.0) & (x <= 1.0)


# ---------------------------------------------------------------------------
# Individual measures
# ---------------------------------------------------------------------------

def _rd():
    return EffectMeasure(
        name="RD",
        label="Risk Difference",
        phi=lambda p1, p0: np.subtract(p1, p0),
        gamma=lambda t, p0: np.add(p0, t),
        dphi_d1=lambda p1, p0: _ones_like(p1, p0),
        dphi_d0=lambda p1, p0: -_ones_like(p1, p0),
        dgamma_dtau=lambda t, p0: _ones_like(t, p0),
        dgamma_dpsi0=lambda t, p0: _ones_like(t, p0),
        null_value=0.0,
    )


def _rr():
    return EffectMeasure(
        name="RR",
        label="Risk Ratio",
        phi=lambda p1, p0: np.divide(p1, p0),
        gamma=lambda t, p0: np.multiply(t, p0),
        dphi_d1=lambda p1, p0: 1.0 / np.asarray(p0) * _ones_like(p1, p0),
        dphi_d0=lambda p1, p0: -np.asarray(p1) / np.square(p0),
        dgamma_dtau=lambda t, p0: np.asarray(p0) * _ones_like(t, p0),
        dgamma_dpsi0=lambda t, p0: np.asarray(t) * _ones_like(t, p0),
        constraints=(("psi0 != 0", lambda p1, p0: p0 != 0.0),),
        null_value=1.0,
    )


def _or_gamma(t, p0):
    t, p0 = _asarr(t, p0)
    return t * p0 / (1.0 + t * p0 - p0)


def _or():
    def phi(p1, p0):
        p1, p0 = _asarr(p1, p0)
        return p1 * (1.0 - p0) / ((1.0 - p1) * p0)

    def d1(p1, p0):
        p1, p0 = _asarr(p1, p0)
        return (1.0 - p0) / (p0 * np.square(1.0 - p1))

    def d0(p1, p0):
        p1, p0 = _asarr(p1, p0)
        return -p1 / ((1.0 - p1) * np.square(p0))

    def dtau(t, p0):
        t, p0 = _asarr(t, p0)
        return p0 * (1.0 - p0) / np.square(1.0 - p0 + t * p0)

    def dpsi0(t, p0):
        t, p0 = _asarr(t, p0)
        return t / np.square(1.0 - p0 + t * p0)

    return EffectMeasure(
        name="OR",
        label="Odds Ratio",
        phi=phi,
        gamma=_or_gamma,
        dphi_d1=d1,
        dphi_d0=d0,
        dgamma_dtau=dtau,
        dgamma_dpsi0=dpsi0,
        constraints=(
            ("0 < psi1 < 1", lambda p1, p0: _unit_open(p1)),
            ("0 < psi0 < 1", lambda p1, p0: _unit_open(p0)),
        ),
        gamma_constraints=(
            ("1 + tau*psi0 - psi0 != 0", lambda t, p0: (1.0 + t * p0 - p0) != 0.0),
        ),
        null_value=1.0,
        probability_scale=True,
    )


def _nnt():
    def phi(p1, p0):
        return 1.0 / np.subtract(p1, p0)

    def d1(p1, p0):
        return -1.0 / np.square(np.subtract(p1, p0))

    def d0(p1, p0):
        return 1.0 / np.square(np.subtract(p1, p0))

    return EffectMeasure(
        name="NNT",
        label="Number Needed to Treat",
        phi=phi,
        gamma=lambda t, p0: np.add(p0, 1.0 / np.asarray(t, dtype=float)),
        dphi_d1=d1,
        dphi_d0=d0,
        dgamma_dtau=lambda t, p0: -1.0 / np.square(t) * _ones_like(t, p0),
        dgamma_dpsi0=lambda t, p0: _ones_like(t, p0),
        constraints=(
            (
                f"|psi1 - psi0| >= {NNT_NULL_TOL:g} (NNT diverges at the null)",
                lambda p1, p0: np.abs(p1 - p0) >= NNT_NULL_TOL,
            ),
        ),
        gamma_constraints=(("tau != 0", lambda t, p0: t != 0.0),),
        null_value=None,
    )


def _grrr():
    def phi(p1, p0):
        p1, p0 = _asarr(p1, p0)
        with np.errstate(divide="ignore", invalid="ignore"):
            up = 1.0 - (1.0 - p1) / (1.0 - p0)
            down = -1.0 + p1 / p0
        return np.where(p1 > p0, up, np.where(p1 < p0, down, 0.0))

    def _check(p1, p0):
        if np.any(p1 == p0):
            raise DerivativeError(
                "GRRR is not differentiable on the boundary psi1 == psi0"
            )

    def d1(p1, p0):
        p1, p0 = _asarr(p1, p0)
        _check(p1, p0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(p1 > p0, 1.0 / (1.0 - p0), 1.0 / p0)

    def d0(p1, p0):
        p1, p0 = _asarr(p1, p0)
        _check(p1, p0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(
                p1 > p0, -(1.0 - p1) / np.square(1.0 - p0), -p1 / np.square(p0)
            )

    def gamma(t, p0):
        t, p0 = _asarr(t, p0)
        return np.where(
            t > 0, 1.0 - (1.0 - t) * (1.0 - p0), np.where(t < 0, p0 * (1.0 + t), p0)
        )

    def _check_tau(t):
        if np.any(t == 0):
            raise DerivativeError(
                "the GRRR effect function is not differentiable at tau == 0"
            )

    def dtau(t, p0):
        t, p0 = _asarr(t, p0)
        _check_tau(t)
        return np.where(t > 0, 1.0 - p0, p0) * _ones_like(t, p0)

    def dpsi0(t, p0):
        t, p0 = _asarr(t, p0)
        _check_tau(t)
        return np.where(t > 0, 1.0 - t, 1.0 + t) * _ones_like(t, p0)

    def printed(t, p0):
        t, p0 = _asarr(t, p0)
        return np.where(
            p0 > 0, 1.0 - (1.0 - t) * (1.0 - p0), np.where(p0 < 0, t * (1.0 + p0), t)
        )

    return EffectMeasure(
        name="GRRR",
        label="Switch Relative Risk",
        phi=phi,
        gamma=gamma,
        dphi_d1=d1,
        dphi_d0=d0,
        dgamma_dtau=dtau,
        dgamma_dpsi0=dpsi0,
        constraints=(
            ("0 <= psi1 <= 1", lambda p1, p0: _unit_closed(p1)),
            ("0 < psi0 < 1", lambda p1, p0: _unit_open(p0)),
        ),
        gamma_constraints=(
            ("-1 <= tau <= 1", lambda t, p0: (t >= -1.0) & (t <= 1.0)),
            ("0 < psi0 < 1", lambda t, p0: _unit_open(p0)),
        ),
        null_value=0.0,
        printed_gamma=printed,
        probability_scale=True,
    )


def _err():
    return EffectMeasure(
        name="ERR",
        label="Excess Risk Ratio",
        phi=lambda p1, p0: np.subtract(p1, p0) / np.asarray(p0, dtype=float),
        gamma=lambda t, p0: np.asarray(p0) * (1.0 + np.asarray(t, dtype=float)),
        dphi_d1=lambda p1, p0: 1.0 / np.asarray(p0, dtype=float) * _ones_like(p1, p0),
        dphi_d0=lambda p1, p0: -np.asarray(p1) / np.square(p0),
        dgamma_dtau=lambda t, p0: np.asarray(p0, dtype=float) * _ones_like(t, p0),
        dgamma_dpsi0=lambda t, p0: (1.0 + np.asarray(t, dtype=float)) * _ones_like(t, p0),
        constraints=(("psi0 != 0", lambda p1, p0: p0 != 0.0),),
        null_value=0.0,
        printed_gamma=lambda t, p0: np.asarray(t) * (1.0 + np.asarray(p0)),
    )


def _sr():
    def phi(p1, p0):
        p1, p0 = _asarr(p1, p0)
        return (1.0 - p1) / (1.0 - p0)

    return EffectMeasure(
        name="SR",
        label="Survival Ratio",
        phi=phi,
        gamma=lambda t, p0: 1.0 - np.asarray(t) * (1.0 - np.asarray(p0)),
        dphi_d1=lambda p1, p0: -1.0 / (1.0 - np.asarray(p0)) * _ones_like(p1, p0),
        dphi_d0=lambda p1, p0: (1.0 - np.asarray(p1)) / np.square(1.0 - np.asarray(p0)),
        dgamma_dtau=lambda t, p0: -(1.0 - np.asarray(p0)) * _ones_like(t, p0),
        dgamma_dpsi0=lambda t, p0: np.asarray(t, dtype=float) * _ones_like(t, p0),
        constraints=(("psi0 != 1", lambda p1, p0: p0 != 1.0),),
        null_value=1.0,
    )


def _rs():
    def phi(p1, p0):
        p1, p0 = _asarr(p1, p0)
        return (1.0 - p0) / (1.0 - p1)

    def gamma(t, p0):
        t, p0 = _asarr(t, p0)
        return 1.0 - (1.0 - p0) / t

    def d1(p1, p0):
        p1, p0 = _asarr(p1, p0)
        return (1.0 - p0) / np.square(1.0 - p1)

    def d0(p1, p0):
        p1, p0 = _asarr(p1, p0)
        return -1.0 / (1.0 - p1) * _ones_like(p1, p0)

    return EffectMeasure(
        name="RS",
        label="Relative Susceptibility",
        phi=phi,
        gamma=gamma,
        dphi_d1=d1,
        dphi_d0=d0,
        dgamma_dtau=lambda t, p0: (1.0 - np.asarray(p0)) / np.square(t),
        dgamma_dpsi0=lambda t, p0: 1.0 / np.asarray(t, dtype=float) * _ones_like(t, p0),
        constraints=(("psi1 != 1", lambda p1, p0: p1 != 1.0),),
        gamma_constraints=(("tau != 0", lambda t, p0: t != 0.0),),
        null_value=1.0,
        printed_gamma=lambda t, p0: 1.0 - (1.0 - np.asarray(t)) / np.asarray(p0),
    )


def _log_or():
    def phi(p1, p0):
        p1, p0 = _asarr(p1, p0)
        return logit(p1) - logit(p0)

    def gamma(t, p0):
        t, p0 = _asarr(t, p0)
        return expit(t + logit(p0))

    def dtau(t, p0):
        g = gamma(t, p0)
        return g * (1.0 - g)

    def dpsi0(t, p0):
        g = gamma(t, p0)
        p0 = np.asarray(p0, dtype=float)
        return g * (1.0 - g) / (p0 * (1.0 - p0))

    def printed(t, p0):
        t, p0 = _asarr(t, p0)
        return np.exp(p0) * t / (1.0 - t + np.exp(p0) * t)

    return EffectMeasure(
        name="logOR",
        label="Log Odds Ratio",
        phi=phi,
        gamma=gamma,
        dphi_d1=lambda p1, p0: 1.0 / (np.asarray(p1) * (1.0 - np.asarray(p1))) * _ones_like(p1, p0),
        dphi_d0=lambda p1, p0: -1.0 / (np.asarray(p0) * (1.0 - np.asarray(p0))) * _ones_like(p1, p0),
        dgamma_dtau=dtau,
        dgamma_dpsi0=dpsi0,
        constraints=(
            ("0 < psi1 < 1", lambda p1, p0: _unit_open(p1)),
            ("0 < psi0 < 1", lambda p1, p0: _unit_open(p0)),
        ),
        gamma_constraints=(("0 < psi0 < 1", lambda t, p0: _unit_open(p0)),),
        null_value=0.0,
        printed_gamma=printed,
        probability_scale=True,
    )


def _odds_product():
    def phi(p1, p0):
        p1, p0 = _asarr(p1, p0)
        return p1 / (1.0 - p1) * p0 / (1.0 - p0)

    def d1(p1, p0):
        p1, p0 = _asarr(p1, p0)
        return p0 / (1.0 - p0) / np.square(1.0 - p1)

    def d0(p1, p0):
        p1, p0 = _asarr(p1, p0)
        return p1 / (1.0 - p1) / np.square(1.0 - p0)

    def _q(t, p0):
        t, p0 = _asarr(t, p0)
        return t * (1.0 - p0) / p0

    def gamma(t, p0):
        q = _q(t, p0)
        return q / (1.0 + q)

    def dtau(t, p0):
        q = _q(t, p0)
        p0 = np.asarray(p0, dtype=float)
        return (1.0 - p0) / p0 / np.square(1.0 + q)

    def dpsi0(t, p0):
        q = _q(t, p0)
        t, p0 = _asarr(t, p0)
        return -t / np.square(p0) / np.square(1.0 + q)

    def printed(t, p0):
        t, p0 = _asarr(t, p0)
        root = np.sqrt(t * p0 / (1.0 - p0))
        return root / (1.0 + root)

    return EffectMeasure(
        name="OddsProduct",
        label="Odds Product",
        phi=phi,
        gamma=gamma,
        dphi_d1=d1,
        dphi_d0=d0,
        dgamma_dtau=dtau,
        dgamma_dpsi0=dpsi0,
        constraints=(
            ("0 < psi1 < 1", lambda p1, p0: _unit_open(p1)),
            ("0 < psi0 < 1", lambda p1, p0: _unit_open(p0)),
        ),
        gamma_constraints=(
            ("0 < psi0 < 1", lambda t, p0: _unit_open(p0)),
            ("tau*(1-psi0)/psi0 != -1", lambda t, p0: t * (1.0 - p0) / p0 != -1.0),
        ),
        null_value=None,
        printed_gamma=printed,
        probability_scale=True,
    )


def _arcsine():
    def _h(p):
        return np.arcsin(np.sqrt(p))

    def _dh(p):
        p = np.asarray(p, dtype=float)
        return 0.5 / np.sqrt(p * (1.0 - p))

    def phi(p1, p0):
        p1, p0 = _asarr(p1, p0)
        return _h(p1) - _h(p0)

    def _u(t, p0):
        t, p0 = _asarr(t, p0)
        return t + _h(p0)

    def gamma(t, p0):
        return np.square(np.sin(_u(t, p0)))

    def dtau(t, p0):
        return np.sin(2.0 * _u(t, p0))

    def dpsi0(t, p0):
        return np.sin(2.0 * _u(t, p0)) * _dh(p0)

    def printed(t, p0):
        t, p0 = _asarr(t, p0)
        return np.square(np.sin(p0 + np.arcsin(np.sqrt(t))))

    return EffectMeasure(
        name="ArcsineDiff",
        label="Arcsine Difference",
        phi=phi,
        gamma=gamma,
        dphi_d1=lambda p1, p0: _dh(p1) * _ones_like(p1, p0),
        dphi_d0=lambda p1, p0: -_dh(p0) * _ones_like(p1, p0),
        dgamma_dtau=dtau,
        dgamma_dpsi0=dpsi0,
        constraints=(
            ("0 <= psi1 <= 1", lambda p1, p0: _unit_closed(p1)),
            ("0 <= psi0 <= 1", lambda p1, p0: _unit_closed(p0)),
        ),
        gamma_constraints=(
            ("0 <= psi0 <= 1", lambda t, p0: _unit_closed(p0)),
            (
                "0 <= tau + arcsin(sqrt(psi0)) <= pi/2",
                lambda t, p0: (t + np.arcsin(np.sqrt(p0)) >= 0.0)
                & (t + np.arcsin(np.sqrt(p0)) <= np.pi / 2),
            ),
        ),
        null_value=0.0,
        printed_gamma=printed,
        probability_scale=True,
    )


def _rrr():
    return EffectMeasure(
        name="RRR",
        label="Relative Risk Reduction",
        phi=lambda p1, p0: 1.0 - np.asarray(p1, dtype=float) / np.asarray(p0, dtype=float),
        gamma=lambda t, p0: np.asarray(p0) * (1.0 - np.asarray(t, dtype=float)),
        dphi_d1=lambda p1, p0: -1.0 / np.asarray(p0, dtype=float) * _ones_like(p1, p0),
        dphi_d0=lambda p1, p0: np.asarray(p1) / np.square(p0),
        dgamma_dtau=lambda t, p0: -np.asarray(p0, dtype=float) * _ones_like(t, p0),
        dgamma_dpsi0=lambda t, p0: (1.0 - np.asarray(t, dtype=float)) * _ones_like(t, p0),
        constraints=(("psi0 != 0", lambda p1, p0: p0 != 0.0),),
        null_value=0.0,
        printed_gamma=lambda t, p0: np.asarray(t) * (1.0 - np.asarray(p0)),
    )


MEASURES = {
    m.name: m
    for m in (
        _rd(),
        _rr(),
        _or(),
        _nnt(),
        _grrr(),
        _err(),
        _sr(),
        _rs(),
        _log_or(),
        _odds_product(),
        _arcsine(),
        _rrr(),
    )
}
MEASURE_NAMES = tuple(MEASURES)

_ALIASES = {name.lower(): name for name in MEASURES}
_ALIASES.update(
    {
        "log-or": "logOR",
        "log_or": "logOR",
        "oddsprod": "OddsProduct",
        "odds_product": "OddsProduct",
        "arcsine": "ArcsineDiff",
        "asd": "ArcsineDiff",
        "srr": "GRRR",
    }
)


def get_measure(name):
    """Look up a registered measure by name (case-insensitive).

    Parameters
    ----------
    name : str or EffectMeasure
        Identifier such as ``"RD"`` or ``"oddsproduct"``. An
        :class:`EffectMeasure` is returned unchanged.

    Returns
    -------
    EffectMeasure

    Raises
    ------
    UnknownMeasureError
        If ``name`` is not registered. The message lists valid identifiers.
    """
    if isinstance(name, EffectMeasure):
        return name
    key = str(name).strip().lower()
    if key not in _ALIASES:
        raise UnknownMeasureError(
            f"unknown measure {name!r}; valid identifiers are "
            + ", ".join(MEASURE_NAMES)
        )
    return MEASURES[_ALIASES[key]]


def _scalarize(value, *inputs):
    if all(np.ndim(x) == 0 for x in inputs):
        return float(value)
    return np.asarray(value, dtype=float)


def _check(constraints, a, b, what, measure_name, names):
    a, b = _asarr(a, b)
    finite = np.isfinite(a) & np.isfinite(b)
    if not np.all(finite):
        idx = _first_bad(finite)
        raise DomainError(
            f"{measure_name}: non-finite {what} input at {_loc(idx)}"
            f" ({names[0]}={_at(a, idx)}, {names[1]}={_at(b, idx)})"
        )
    with np.errstate(all="ignore"):
        for desc, pred in constraints:
            ok = np.broadcast_to(pred(a, b), np.broadcast(a, b).shape)
            if not np.all(ok):
                idx = _first_bad(ok)
                raise DomainError(
                    f"{measure_name}: {what} requires {desc}; violated at {_loc(idx)}"
                    f" ({names[0]}={_at(a, idx)}, {names[1]}={_at(b, idx)})"
                )


def _first_bad(ok):
    ok = np.atleast_1d(ok)
    return int(np.flatnonzero(~ok.ravel())[0]) if ok.ndim else 0


def _loc(idx):
    return f"index {idx}"


def _at(x, idx):
    flat = np.atleast_1d(x).ravel()
    return float(flat[idx]) if flat.size > 1 else float(flat[0])


def eval_phi(m, psi1, psi0):
    """Evaluate the effect measure after checking its domain.

    Parameters
    ----------
    m : EffectMeasure or str
    psi1, psi0 : float or array_like
        Treated and control means.

    Returns
    -------
    float or ndarray

    Raises
    ------
    DomainError
        If any point lies outside the measure's domain; the message names the
        violated constraint.
    """
    m = get_measure(m)
    _check(m.constraints, psi1, psi0, "Phi", m.name, ("psi1", "psi0"))
    return _scalarize(m.phi(psi1, psi0), psi1, psi0)


def eval_gamma(m, tau, psi0):
    """Evaluate the effect function after checking admissibility.

    Parameters
    ----------
    m : EffectMeasure or str
    tau : float or array_like
        Effect on the scale of ``m``.
    psi0 : float or array_like
        Baseline (control) mean.

    Returns
    -------
    float or ndarray
    """
    m = get_measure(m)
    _check(m.gamma_constraints, tau, psi0, "Gamma", m.name, ("tau", "psi0"))
    return _scalarize(m.gamma(tau, psi0), tau, psi0)


def _finite_or_raise(values, measure_name, what):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise DerivativeError(f"{measure_name}: {what} is not finite at this point")
    return values


def phi_gradient(m, psi1, psi0):
    """Return ``(dPhi/dpsi1, dPhi/dpsi0)`` after checking the domain.

    Raises
    ------
    DomainError
        Outside the domain.
    DerivativeError
        If a partial derivative does not exist or is not finite.
    """
    m = get_measure(m)
    _check(m.constraints, psi1, psi0, "Phi", m.name, ("psi1", "psi0"))
    with np.errstate(all="ignore"):
        d1 = _finite_or_raise(m.dphi_d1(psi1, psi0), m.name, "dPhi/dpsi1")
        d0 = _finite_or_raise(m.dphi_d0(psi1, psi0), m.name, "dPhi/dpsi0")
    return _scalarize(d1, psi1, psi0), _scalarize(d0, psi1, psi0)


def gamma_gradient(m, tau, psi0):
    """Return ``(dGamma/dtau, dGamma/dpsi0)`` after checking admissibility."""
    m = get_measure(m)
    _check(m.gamma_constraints, tau, psi0, "Gamma", m.name, ("tau", "psi0"))
    with np.errstate(all="ignore"):
        dt = _finite_or_raise(m.dgamma_dtau(tau, psi0), m.name, "dGamma/dtau")
        d0 = _finite_or_raise(m.dgamma_dpsi0(tau, psi0), m.name, "dGamma/dpsi0")
    return _scalarize(dt, tau, psi0), _scalarize(d0, tau, psi0)


def in_domain(m, psi1, psi0):
    """Boolean mask of domain membership, never raising."""
    return get_measure(m).domain(psi1, psi0)


def sample_domain(m, size, rng=None, low=0.02, high=0.98, min_gap=0.01):
    """Draw random interior points of a measure's domain.

    Points are drawn uniformly in ``(low, high)**2``. Pairs with
    ``|psi1 - psi0| < min_gap`` are redrawn so that measures with a
    singularity on the diagonal (NNT, GRRR) are sampled away from it.

    Parameters
    ----------
    m : EffectMeasure or str
    size : int
    rng : numpy.random.Generator, optional
    low, high : float
    min_gap : float

    Returns
    -------
    psi1, psi0 : ndarray of shape (size,)
    """
    m = get_measure(m)
    rng = np.random.default_rng(rng)
    out1 = np.empty(0)
    out0 = np.empty(0)
    while out1.size < size:
        p1 = rng.uniform(low, high, size)
        p0 = rng.uniform(low, high, size)
        keep = (np.abs(p1 - p0) >= min_gap) & m.domain(p1, p0)
        out1 = np.concatenate([out1, p1[keep]])
        out0 = np.concatenate([out0, p0[keep]])
    return out1[:size], out0[:size]


def _rel_err(a, b):
    return np.abs(a - b) / np.maximum(1.0, np.abs(b))


def registry_selfcheck(n_points=1000, seed=0, fd_step=1e-6):
    """Check round-trip, derivative and chain-rule identities for every measure.

    Parameters
    ----------
    n_points : int, default=1000
        Random domain points per measure.
    seed : int, default=0
    fd_step : float, default=1e-6
        Central finite-difference step.

    Returns
    -------
    list of dict
        One record per measure with the maximum round-trip error, the maximum
        relative derivative error, the maximum chain-rule residual, and the
        round-trip error of the tabulated effect function when one is stored.
    """
    rng = np.random.default_rng(seed)
    records = []
    for m in MEASURES.values():
        p1, p0 = sample_domain(m, n_points, rng)
        tau = m.phi(p1, p0)
        roundtrip = float(np.max(np.abs(m.gamma(tau, p0) - p1)))
        h = fd_step
        fd = {
            "dphi_d1": (m.phi(p1 + h, p0) - m.phi(p1 - h, p0)) / (2 * h),
            "dphi_d0": (m.phi(p1, p0 + h) - m.phi(p1, p0 - h)) / (2 * h),
            "dgamma_dtau": (m.gamma(tau + h, p0) - m.gamma(tau - h, p0)) / (2 * h),
            "dgamma_dpsi0": (m.gamma(tau, p0 + h) - m.gamma(tau, p0 - h)) / (2 * h),
        }
        analytic = {
            "dphi_d1": m.dphi_d1(p1, p0),
            "dphi_d0": m.dphi_d0(p1, p0),
            "dgamma_dtau": m.dgamma_dtau(tau, p0),
            "dgamma_dpsi0": m.dgamma_dpsi0(tau, p0),
        }
        deriv = max(float(np.max(_rel_err(analytic[k], fd[k]))) for k in fd)
        chain_a = analytic["dphi_d0"] * analytic["dgamma_dtau"] + analytic["dgamma_dpsi0"]
        chain_b = analytic["dphi_d1"] * analytic["dgamma_dtau"] - 1.0
        chain = float(max(np.max(np.abs(chain_a)), np.max(np.abs(chain_b))))
        printed = None
        if m.printed_gamma is not None:
            with np.errstate(all="ignore"):
                err = np.abs(m.printed_gamma(tau, p0) - p1)
            printed = float(np.nanmax(err)) if np.any(np.isfinite(err)) else float("inf")
        records.append(
            {
                "measure": m.name,
                "roundtrip_max_abs_err": roundtrip,
                "derivative_max_rel_err": deriv,
                "chain_rule_max_residual": chain,
                "printed_gamma_roundtrip_err": printed,
                "ok": roundtrip < 1e-10 and deriv < 1e-4 and chain < 1e-8,
            }
        )
    return records
