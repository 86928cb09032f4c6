"""Estimators under exchangeability of the conditional effect measure.

When only the conditional effect ``tau_Phi(x) = Phi(mu1(x), mu0(x))`` is shared
between trial and target populations, the target treated mean is identified
as ``psi1_T = E_T[Gamma(tau_Phi(X), mu0_T(X))]``. This requires control
outcomes observed in the target sample, from which ``mu0_T`` and
``psi0_T = E_T[Y(0)]`` are estimated.

Estimator identifiers in reports carry the prefix ``"effect/"``.
"""

from dataclasses import dataclass

import numpy as np

from .estimators_mean import EstimateReport, as_predictions
from .exceptions import CapabilityError, DomainError
from .measures import eval_phi, gamma_gradient, get_measure, phi_gradient

__all__ = [
    "EffectNuisance",
    "effect_nuisance",
    "gamma_transported",
    "gamma_weighted",
    "eif_effect",
    "ee_effect_psi1",
    "ee_effect",
    "one_step_effect",
]

_NO_TARGET = (
    "target-control outcomes are required for effect-exchangeability "
    "estimators; use the mean-exchangeability estimators (wht, g_weighted, "
    "g_transported, ee, one_step) instead"
)


@dataclass
class EffectNuisance:
    """Per-row nuisances for effect-exchangeability estimators.

    Attributes
    ----------
    cate : ndarray of shape (N,)
        Plug-in conditional effect ``Phi(mu1_S(x), mu0_S(x))`` at every row.
    mu0_s : ndarray of shape (N,)
        Trial control-arm regression at every row.
    mu0_t : ndarray of shape (N,)
        Target control regression at every row.
    r : ndarray of shape (N,)
        Density ratio at trial rows.
    psi0_t : float
        Mean outcome among target controls.
    alpha_hat, pi : float
    measure : str
    diagnostics : dict
    """

    cate: np.ndarray
    mu0_s: np.ndarray
    mu0_t: np.ndarray
    r: np.ndarray
    psi0_t: float
    alpha_hat: float
    pi: float
    measure: str
    diagnostics: dict


def effect_nuisance(d, m, nf):
    """Assemble :class:`EffectNuisance` from fitted nuisances.

    Parameters
    ----------
    d : StudyData
    m : EffectMeasure or str
    nf : NuisanceFit, NuisancePredictions or EffectNuisance

    Raises
    ------
    CapabilityError
        If the data carry no target-control outcomes.
    DomainError
        If the predicted trial means leave the measure's domain at some row.
    """
    m = get_measure(m)
    if isinstance(nf, EffectNuisance):
        if nf.measure != m.name:
            raise ValueError(
                f"effect nuisances were built for {nf.measure}, not {m.name}"
            )
        return nf
    if not d.has_target_controls:
        raise CapabilityError(_NO_TARGET)
    pred = as_predictions(nf, d)
    if pred.mu0_t is None:
        raise CapabilityError(_NO_TARGET)
    ok = m.domain(pred.mu1, pred.mu0)
    if not np.all(ok):
        i = int(np.flatnonzero(~ok)[0])
        err = DomainError(
            f"{m.name}: trial outcome predictions ({pred.mu1[i]:.6g}, "
            f"{pred.mu0[i]:.6g}) at row {i} lie outside the measure's domain"
        )
        err.row = i
        raise err
    cate = m.phi(pred.mu1, pred.mu0)
    psi0_t = float(np.mean(d.y[d.target_controls]))
    diag = dict(pred.diagnostics)
    diag["ratio_self_normalization"] = float(np.mean(pred.r[d.source]))
    diag["n_target_controls"] = int(np.sum(d.target_controls))
    return EffectNuisance(
        cate, pred.mu0, pred.mu0_t, pred.r, psi0_t, d.alpha_hat, d.pi, m.name, diag
    )


def _gamma_rows(m, tau, psi0, rows):
    ok = m.gamma_domain(tau[rows], psi0[rows])
    if not np.all(ok):
        i = int(np.flatnonzero(rows)[np.flatnonzero(~ok)[0]])
        err = DomainError(
            f"{m.name}: effect function inadmissible at row {i} "
            f"(tau={tau[i]:.6g}, psi0={psi0[i]:.6g})"
        )
        err.row = i
        raise err
    out = np.full(tau.shape[0], np.nan)
    out[rows] = m.gamma(tau[rows], psi0[rows])
    return out


def _report(d, m, name, psi1, psi0, en, extra=None):
    estimate = eval_phi(m, psi1, psi0)
    diag = {"psi1": float(psi1), "psi0": float(psi0)}
    diag.update(en.diagnostics)
    if extra:
        diag.update(extra)
    return EstimateReport(
        m.name, f"effect/{name}", float(estimate), n=d.n, m=d.m, diagnostics=diag
    )


def gamma_transported(d, m, nf):
    """Transported Gamma-formula estimator.

    ``Phi((1/m) sum_{S=0} Gamma(tau(X), mu0_T(X)), (1/m) sum_{S=0} mu0_T(X))``.

    Parameters
    ----------
    d : StudyData
    m : EffectMeasure or str
    nf : NuisanceFit, NuisancePredictions or EffectNuisance

    Returns
    -------
    EstimateReport
    """
    m = get_measure(m)
    en = effect_nuisance(d, m, nf)
    tgt = d.target
    g = _gamma_rows(m, en.cate, en.mu0_t, tgt)
    psi1 = float(np.mean(g[tgt]))
    psi0 = float(np.mean(en.mu0_t[tgt]))
    return _report(d, m, "gamma_transported", psi1, psi0, en)


def gamma_weighted(d, m, nf):
    """Weighted Gamma-formula estimator.

    ``Phi((1/n) sum_{S=1} r(X) Gamma(tau(X), mu0_T(X)), psi0_T)`` with
    ``psi0_T`` the mean outcome among target controls.
    """
    m = get_measure(m)
    en = effect_nuisance(d, m, nf)
    src = d.source
    g = _gamma_rows(m, en.cate, en.mu0_t, src)
    psi1 = float(np.sum(en.r[src] * g[src]) / d.n)
    return _report(d, m, "gamma_weighted", psi1, en.psi0_t, en)


def _derivative_baseline(m, en):
    # The odds-ratio display evaluates dGamma/dpsi0 at the trial baseline; the
    # general influence function evaluates it at the target baseline.
    return en.mu0_s if m.name == "OR" else en.mu0_t


def _source_correction(d, m, en):
    """Per-row bracket ``r [A/pi (Y - Gamma(tau, mu0_S)) - (1-A)/(1-pi) (Y - mu0_S) dGamma]``."""
    src = d.source
    a = np.where(src, d.a, 0.0)
    y = np.where(src, d.y, 0.0)
    g_s = _gamma_rows(m, en.cate, en.mu0_s, src)
    base = _derivative_baseline(m, en)
    _gamma_rows(m, en.cate, base, src)
    dgam = np.zeros(d.N)
    _, dgam[src] = gamma_gradient(m, en.cate[src], base[src])
    pi = en.pi
    out = np.zeros(d.N)
    out[src] = en.r[src] * (
        a[src] / pi * (y[src] - g_s[src])
        - (1.0 - a[src]) / (1.0 - pi) * (y[src] - en.mu0_s[src]) * dgam[src]
    )
    return out


def eif_effect(d, m, nf, psi1):
    """Row-wise influence function of the target treated mean ``psi1_T``.

    ``phi1 = S r / alpha [A/pi (Y - Gamma(tau, mu0_S))
    - (1-A)/(1-pi) (Y - mu0_S) dGamma/dpsi0(tau, mu0_T)]
    + (1-S)/(1-alpha) (Gamma(tau, mu0_T) - psi1)``.

    For the odds ratio the derivative is evaluated at ``mu0_S``.

    Returns
    -------
    ndarray of shape (N,)
    """
    m = get_measure(m)
    en = effect_nuisance(d, m, nf)
    tgt = d.target
    g_t = _gamma_rows(m, en.cate, en.mu0_t, tgt)
    alpha = en.alpha_hat
    out = _source_correction(d, m, en) / alpha
    out[tgt] = (g_t[tgt] - psi1) / (1.0 - alpha)
    return out


def ee_effect_psi1(d, m, nf):
    """Estimating-equation estimate of ``psi1_T`` and its correction term."""
    m = get_measure(m)
    en = effect_nuisance(d, m, nf)
    tgt = d.target
    g_t = _gamma_rows(m, en.cate, en.mu0_t, tgt)
    correction = float(np.sum(_source_correction(d, m, en)) / d.n)
    return float(np.mean(g_t[tgt])) + correction, correction, en


def ee_effect(d, m, nf):
    """Estimating-equation estimator ``Phi(psi1_EE, psi0_T)``."""
    m = get_measure(m)
    psi1, corr, en = ee_effect_psi1(d, m, nf)
    return _report(d, m, "ee", psi1, en.psi0_t, en, {"correction": corr})


_INITIALIZERS = {
    "gamma_transported": gamma_transported,
    "gamma_weighted": gamma_weighted,
    "ee": ee_effect,
}


def one_step_effect(d, m, nf, initial="gamma_transported"):
    """One-step estimator ``Phi(psi1_hat, psi0_T) + dPhi/dpsi1 * mean(phi1)``.

    Parameters
    ----------
    d : StudyData
    m : EffectMeasure or str
    nf : NuisanceFit, NuisancePredictions or EffectNuisance
    initial : {"gamma_transported", "gamma_weighted", "ee"}

    Returns
    -------
    EstimateReport
    """
    m = get_measure(m)
    if initial not in _INITIALIZERS:
        raise ValueError(
            f"unknown initializer {initial!r}; choose from {sorted(_INITIALIZERS)}"
        )
    en = effect_nuisance(d, m, nf)
    init = _INITIALIZERS[initial](d, m, en)
    psi1_hat = init.diagnostics["psi1"]
    psi0 = en.psi0_t
    psi1_ee, _, _ = ee_effect_psi1(d, m, en)
    tau = eval_phi(m, psi1_hat, psi0)
    d1, _ = phi_gradient(m, psi1_hat, psi0)
    value = float(tau + d1 * (psi1_ee - psi1_hat))
    diag = {
        "psi1": psi1_hat,
        "psi0": psi0,
        "initial": initial,
        "psi1_ee": psi1_ee,
        "estimate_initial": init.estimate,
    }
    diag.update(en.diagnostics)
    return EstimateReport(
        m.name, "effect/one_step", value, n=d.n, m=d.m, diagnostics=diag
    )
