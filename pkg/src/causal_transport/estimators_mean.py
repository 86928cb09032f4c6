"""Estimators of target-population causal measures under mean exchangeability.

All estimators compute the two target arm means ``(psi1, psi0)`` and return
``Phi(psi1, psi0)`` for the requested :class:`~causal_transport.measures.EffectMeasure`:

* ``wht``: density-ratio weighted Horvitz-Thompson means;
* ``neyman``: as ``wht`` with the empirical arm proportions in place of ``pi``;
* ``g_weighted``: density-ratio weighted average of outcome predictions over
  trial rows;
* ``g_transported``: average of trial-fitted outcome predictions over target rows;
* ``ee``: estimating-equation (augmented) arm means, doubly robust;
* ``one_step``: a plug-in estimate corrected by the mean of the efficient
  influence function.

Every estimator accepts nuisances either as a fitted
:class:`~causal_transport.nuisance.NuisanceFit` or as precomputed
:class:`~causal_transport.nuisance.NuisancePredictions` (e.g. cross-fitted).
"""

import json
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import expit

from .exceptions import CapabilityError, DomainError
from .measures import eval_phi, get_measure, phi_gradient
from .mestimation import EstimatingSystem, delta_method, sandwich
from .nuisance import NuisanceFit, NuisancePredictions, OutcomeFit

__all__ = [
    "ArmMeans",
    "EstimateReport",
    "as_predictions",
    "wht_arm_means",
    "neyman_arm_means",
    "g_weighted_arm_means",
    "g_transported_arm_means",
    "ee_arm_means",
    "wht",
    "neyman",
    "g_weighted",
    "g_transported",
    "ee",
    "one_step",
    "one_step_value",
    "eif_arms",
    "eif_mean",
    "variance_oracle_wht",
    "stacked_system",
    "variance_sandwich",
    "bootstrap_ci",
]


@dataclass(frozen=True)
class ArmMeans:
    """Estimated target arm means.

    Attributes
    ----------
    psi1, psi0 : float
    method : str
    corrections : dict
        Augmentation terms ``{1: c1, 0: c0}`` for the estimating-equation means.
    """

    psi1: float
    psi0: float
    method: str
    corrections: Dict[int, float] = field(default_factory=dict)

    def __iter__(self):
        return iter((self.psi1, self.psi0))

    def __getitem__(self, arm):
        return self.psi1 if arm == 1 else self.psi0


@dataclass
class EstimateReport:
    """Result of one estimator applied to one measure.

    Attributes
    ----------
    measure, estimator : str
    estimate : float or None
        ``None`` when the estimator failed; see ``diagnostics["error"]``.
    se : float or None
    ci : tuple of float or None
        ``(lo, hi)``; ``lo <= hi`` always, but a percentile interval need not
        contain ``estimate``.
    level : float or None
    n, m : int
    diagnostics : dict
    """

    measure: str
    estimator: str
    estimate: Optional[float]
    se: Optional[float] = None
    ci: Optional[Tuple[float, float]] = None
    level: Optional[float] = None
    n: int = 0
    m: int = 0
    diagnostics: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.ci is not None:
            lo, hi = self.ci
            if lo > hi:
                raise ValueError("confidence interval must satisfy lo <= hi")
            self.ci = (float(lo), float(hi))

    @property
    def ok(self):
        return self.estimate is not None

    def to_dict(self):
        return {
            "measure": self.measure,
            "estimator": self.estimator,
            "estimate": self.estimate,
            "se": self.se,
            "ci": list(self.ci) if self.ci is not None else None,
            "level": self.level,
            "n": self.n,
            "m": self.m,
            "diagnostics": _jsonable(self.diagnostics),
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def as_predictions(nf, d):
    """Return per-row nuisance values for ``d``."""
    if isinstance(nf, NuisancePredictions):
        if nf.r.shape[0] != d.N:
            raise ValueError("nuisance predictions do not match the data size")
        return nf
    if isinstance(nf, NuisanceFit):
        return nf.predict(d)
    raise TypeError(f"expected NuisanceFit or NuisancePredictions, got {type(nf)!r}")


def _arms(d):
    src = d.source
    i1 = (src & (d.a == 1)).astype(float)
    i0 = (src & (d.a == 0)).astype(float)
    y = np.where(src, d.y, 0.0)
    return src, i1, i0, y


def _ratio(pred, src):
    return np.where(src, np.nan_to_num(pred.r, nan=0.0), 0.0)


def _pi_arm(d, use_pi_hat):
    if use_pi_hat:
        p1 = float(np.sum(d.treated)) / d.n
        return p1, 1.0 - p1
    return d.pi, 1.0 - d.pi


# ---------------------------------------------------------------------------
# Arm means
# ---------------------------------------------------------------------------

def wht_arm_means(d, nf, use_pi_hat=False):
    """Density-ratio weighted Horvitz-Thompson arm means.

    ``psi_a = (1/n) sum_{S=1} r(X) 1{A=a} Y / pi_a``.
    """
    pred = as_predictions(nf, d)
    src, i1, i0, y = _arms(d)
    r = _ratio(pred, src)
    p1, p0 = _pi_arm(d, use_pi_hat)
    psi1 = float(np.sum(r * i1 * y) / (d.n * p1))
    psi0 = float(np.sum(r * i0 * y) / (d.n * p0))
    return ArmMeans(psi1, psi0, "neyman" if use_pi_hat else "wht")


def neyman_arm_means(d, nf):
    """Weighted Horvitz-Thompson arm means with ``pi_a`` replaced by ``n_a / n``."""
    return wht_arm_means(d, nf, use_pi_hat=True)


def g_weighted_arm_means(d, nf):
    """Weighted G-formula: ``psi_a = (1/n) sum_{S=1} r(X) mu_a(X)``."""
    pred = as_predictions(nf, d)
    src = d.source
    r = _ratio(pred, src)
    psi1 = float(np.sum(r * np.where(src, pred.mu1, 0.0)) / d.n)
    psi0 = float(np.sum(r * np.where(src, pred.mu0, 0.0)) / d.n)
    return ArmMeans(psi1, psi0, "g_weighted")


def g_transported_arm_means(d, nf):
    """Transported G-formula: ``psi_a = (1/m) sum_{S=0} mu_a(X)``."""
    pred = as_predictions(nf, d)
    tgt = d.target
    return ArmMeans(
        float(np.mean(pred.mu1[tgt])), float(np.mean(pred.mu0[tgt])), "g_transported"
    )


def ee_arm_means(d, nf, use_pi_hat=False):
    """Estimating-equation arm means.

    ``psi_a = (1/m) sum_{S=0} mu_a(X) + (1/n) sum_{S=1} 1{A=a} / pi_a r(X) (Y - mu_a(X))``,

    i.e. the root of the empirical efficient influence function with
    ``alpha`` estimated by ``n / N``. Means are not truncated to ``[0, 1]``.

    Parameters
    ----------
    d : StudyData
    nf : NuisanceFit or NuisancePredictions
    use_pi_hat : bool, default=False
        Use the empirical arm proportions instead of the design ``pi``.

    Returns
    -------
    ArmMeans
        ``corrections`` holds the two augmentation terms.
    """
    pred = as_predictions(nf, d)
    src, i1, i0, y = _arms(d)
    tgt = d.target
    r = _ratio(pred, src)
    p1, p0 = _pi_arm(d, use_pi_hat)
    res1 = np.where(src, y - np.nan_to_num(pred.mu1), 0.0)
    res0 = np.where(src, y - np.nan_to_num(pred.mu0), 0.0)
    c1 = float(np.sum(i1 * r * res1) / (d.n * p1))
    c0 = float(np.sum(i0 * r * res0) / (d.n * p0))
    psi1 = float(np.mean(pred.mu1[tgt])) + c1
    psi0 = float(np.mean(pred.mu0[tgt])) + c0
    return ArmMeans(psi1, psi0, "ee_neyman" if use_pi_hat else "ee", {1: c1, 0: c0})


ARM_MEANS = {
    "wht": wht_arm_means,
    "neyman": neyman_arm_means,
    "g_weighted": g_weighted_arm_means,
    "g_transported": g_transported_arm_means,
    "ee": ee_arm_means,
}


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def _diagnostics(d, pred, arm):
    src = d.source
    diag = {
        "psi1": arm.psi1,
        "psi0": arm.psi0,
        "ratio_self_normalization": float(np.mean(pred.r[src])),
    }
    diag.update(pred.diagnostics)
    if arm.corrections:
        diag["corrections"] = {str(k): v for k, v in arm.corrections.items()}
    return diag


def _report(d, m, name, arm, pred, extra=None):
    m = get_measure(m)
    estimate = eval_phi(m, arm.psi1, arm.psi0)
    diag = _diagnostics(d, pred, arm)
    if extra:
        diag.update(extra)
    return EstimateReport(m.name, name, float(estimate), n=d.n, m=d.m, diagnostics=diag)


def wht(d, m, nf):
    """Weighted Horvitz-Thompson estimator ``Phi(psi1_wHT, psi0_wHT)``.

    Parameters
    ----------
    d : StudyData
    m : EffectMeasure or str
    nf : NuisanceFit or NuisancePredictions

    Returns
    -------
    EstimateReport

    Raises
    ------
    DomainError
        If the arm means fall outside the measure's domain.
    """
    pred = as_predictions(nf, d)
    return _report(d, m, "wht", wht_arm_means(d, pred), pred)


def neyman(d, m, nf):
    """Weighted Horvitz-Thompson estimator with empirical arm proportions."""
    pred = as_predictions(nf, d)
    return _report(d, m, "neyman", neyman_arm_means(d, pred), pred)


def g_weighted(d, m, nf):
    """Weighted G-formula estimator."""
    pred = as_predictions(nf, d)
    return _report(d, m, "g_weighted", g_weighted_arm_means(d, pred), pred)


def g_transported(d, m, nf):
    """Transported G-formula estimator (no density ratio involved)."""
    pred = as_predictions(nf, d)
    return _report(d, m, "g_transported", g_transported_arm_means(d, pred), pred)


def ee(d, m, nf, use_pi_hat=False):
    """Estimating-equation estimator ``Phi(psi1_EE, psi0_EE)``.

    Consistent when either the outcome regressions or the density ratio is
    correctly specified.
    """
    pred = as_predictions(nf, d)
    arm = ee_arm_means(d, pred, use_pi_hat)
    return _report(d, m, "ee_neyman" if use_pi_hat else "ee", arm, pred)


def _one_step_rd(p1, p0, e1, e0):
    return (p1 - p0) + (e1 - p1) - (e0 - p0)


def _one_step_rr(p1, p0, e1, e0):
    return p1 / p0 + (e1 - p1) / p0 - p1 * (e0 - p0) / p0**2


def _one_step_or(p1, p0, e1, e0):
    odds = p1 * (1.0 - p0) / ((1.0 - p1) * p0)
    return (
        odds
        + (1.0 - p0) / (p0 * (1.0 - p1) ** 2) * (e1 - p1)
        - p1 / ((1.0 - p1) * p0**2) * (e0 - p0)
    )


_ONE_STEP_CLOSED = {"RD": _one_step_rd, "RR": _one_step_rr, "OR": _one_step_or}


def one_step_value(m, initial, ee_means, closed_form=True):
    """First-order corrected estimate from initial and estimating-equation means.

    Because the empirical mean of the influence function of ``psi_a`` at
    ``psi_a_hat`` equals ``psi_a_EE - psi_a_hat`` when ``alpha = n / N``, the
    one-step estimate is
    ``Phi(psi_hat) + dPhi/dpsi1 (psi1_EE - psi1_hat) + dPhi/dpsi0 (psi0_EE - psi0_hat)``.

    Parameters
    ----------
    m : EffectMeasure or str
    initial : tuple of float
        ``(psi1_hat, psi0_hat)``.
    ee_means : tuple of float
        ``(psi1_EE, psi0_EE)``.
    closed_form : bool, default=True
        Use the expanded expressions for RD, RR and OR when available.

    Returns
    -------
    float
    """
    m = get_measure(m)
    p1, p0 = (float(v) for v in initial)
    e1, e0 = (float(v) for v in ee_means)
    tau = eval_phi(m, p1, p0)
    d1, d0 = phi_gradient(m, p1, p0)
    if closed_form and m.name in _ONE_STEP_CLOSED:
        return float(_ONE_STEP_CLOSED[m.name](p1, p0, e1, e0))
    return float(tau + d1 * (e1 - p1) + d0 * (e0 - p0))


def one_step(d, m, nf, initial="g_transported", use_pi_hat=False):
    """One-step (first-order bias-corrected) estimator.

    Parameters
    ----------
    d : StudyData
    m : EffectMeasure or str
    nf : NuisanceFit or NuisancePredictions
    initial : {"g_transported", "g_weighted", "wht", "neyman", "ee"}
        Plug-in estimator providing the initial arm means.
    use_pi_hat : bool, default=False
        Use empirical arm proportions in the influence function.

    Returns
    -------
    EstimateReport

    Raises
    ------
    DerivativeError
        If a partial derivative of ``Phi`` does not exist at the initial means.
    """
    m = get_measure(m)
    pred = as_predictions(nf, d)
    if initial not in ARM_MEANS:
        raise ValueError(
            f"unknown initializer {initial!r}; choose from {sorted(ARM_MEANS)}"
        )
    init = ARM_MEANS[initial](d, pred)
    eem = ee_arm_means(d, pred, use_pi_hat)
    value = one_step_value(m, init, eem)
    diag = _diagnostics(d, pred, init)
    diag.update({"initial": initial, "psi1_ee": eem.psi1, "psi0_ee": eem.psi0})
    return EstimateReport(m.name, "one_step", value, n=d.n, m=d.m, diagnostics=diag)


# ---------------------------------------------------------------------------
# Influence functions
# ---------------------------------------------------------------------------

def eif_arms(d, nf, psi1, psi0, use_pi_hat=False):
    """Row-wise efficient influence functions of the two target arm means.

    ``phi_a = (1-S)/(1-alpha) (mu_a(X) - psi_a)
    + S 1{A=a} / (alpha P(A=a)) r(X) (Y - mu_a(X))`` with ``alpha = n / N``.

    Returns
    -------
    phi1, phi0 : ndarray of shape (N,)
    """
    pred = as_predictions(nf, d)
    src, i1, i0, y = _arms(d)
    tgt = d.target.astype(float)
    r = _ratio(pred, src)
    alpha = d.alpha_hat
    p1, p0 = _pi_arm(d, use_pi_hat)
    mu1 = np.nan_to_num(pred.mu1)
    mu0 = np.nan_to_num(pred.mu0)
    phi1 = tgt * (mu1 - psi1) / (1.0 - alpha) + i1 * r * np.where(src, y - mu1, 0.0) / (alpha * p1)
    phi0 = tgt * (mu0 - psi0) / (1.0 - alpha) + i0 * r * np.where(src, y - mu0, 0.0) / (alpha * p0)
    return phi1, phi0


def eif_mean(d, m, nf, psi1, psi0, use_pi_hat=False):
    """Row-wise influence function of ``Phi(psi1, psi0)`` by the chain rule.

    Parameters
    ----------
    d : StudyData
    m : EffectMeasure or str
    nf : NuisanceFit or NuisancePredictions
    psi1, psi0 : float
        Point at which the influence function is evaluated.

    Returns
    -------
    ndarray of shape (N,)
    """
    d1, d0 = phi_gradient(m, psi1, psi0)
    phi1, phi0 = eif_arms(d, nf, psi1, psi0, use_pi_hat)
    return d1 * phi1 + d0 * phi0


# ---------------------------------------------------------------------------
# Variances
# ---------------------------------------------------------------------------

def variance_oracle_wht(d, m, nf):
    """Asymptotic variance of the weighted Horvitz-Thompson estimator with a known ratio.

    Uses ``V_a = (1/alpha) (E_T[r(X) Y(a)^2] / pi_a - psi_a^2)`` and
    ``Cov = -psi1 psi0 / alpha`` composed by the delta method. The target
    moment ``E_T[r Y(a)^2]`` is estimated by ``(1/n) sum_{S=1} 1{A=a} r^2 Y^2 / pi_a``.

    Returns
    -------
    float
        Variance of ``sqrt(N) (tau_hat - tau)``; the standard error is
        ``sqrt(V / N)``.

    Raises
    ------
    DomainError
        If the arm means leave the measure's domain (e.g. ``psi0 == 0`` for RR).
    """
    m = get_measure(m)
    pred = as_predictions(nf, d)
    src, i1, i0, y = _arms(d)
    r = _ratio(pred, src)
    alpha = d.alpha_hat
    p1, p0 = d.pi, 1.0 - d.pi
    psi1 = float(np.sum(r * i1 * y) / (d.n * p1))
    psi0 = float(np.sum(r * i0 * y) / (d.n * p0))
    m1 = float(np.sum(i1 * r**2 * y**2) / (d.n * p1))
    m0 = float(np.sum(i0 * r**2 * y**2) / (d.n * p0))
    if m.name == "RD":
        return (m1 / p1 + m0 / p0 - (psi1 - psi0) ** 2) / alpha
    if m.name == "RR":
        if psi0 == 0.0:
            raise DomainError("RR: oracle variance is infinite when psi0 == 0")
        tau = psi1 / psi0
        return tau**2 / alpha * (m1 / (p1 * psi1**2) + m0 / (p0 * psi0**2))
    cov = np.array(
        [[m1 / p1 - psi1**2, -psi1 * psi0], [-psi1 * psi0, m0 / p0 - psi0**2]]
    ) / alpha
    return delta_method(cov, phi_gradient(m, psi1, psi0))


def _link_fns(link):
    if link == "logit":
        return expit
    return lambda eta: eta


def stacked_system(d, estimator, nf, use_pi_hat=False):
    """Stacked estimating equations for a parametric-nuisance estimator.

    The parameter vector contains the two arm means followed by the nuisance
    parameters needed by ``estimator``: ``alpha = P(S=1)``, the selection
    logistic coefficients, the per-arm outcome coefficients and, for
    ``neyman``, the treated proportion.

    Parameters
    ----------
    d : StudyData
    estimator : {"wht", "neyman", "g_weighted", "g_transported", "ee"}
    nf : NuisanceFit
        Full-sample parametric fit (logistic selection, GLM outcomes).

    Returns
    -------
    EstimatingSystem
    """
    if not isinstance(nf, NuisanceFit):
        raise CapabilityError(
            "the sandwich variance needs full-sample parametric nuisance fits"
        )
    if estimator == "ee" and use_pi_hat:
        raise CapabilityError("sandwich variance is implemented for ee with known pi")
    V = d.design
    k = V.shape[1]
    S = d.s.astype(float)
    src = d.source
    Ssrc = S
    i1 = (src & (d.a == 1)).astype(float)
    i0 = (src & (d.a == 0)).astype(float)
    y = np.where(src, d.y, 0.0)
    T = 1.0 - S
    pi = d.pi

    need_sel = estimator in ("wht", "neyman", "g_weighted", "ee")
    need_out = estimator in ("g_weighted", "g_transported", "ee")
    if need_sel and (nf.selection is None or getattr(nf.ratio, "clip", None)):
        raise CapabilityError(
            "sandwich variance needs an unclipped logistic density ratio"
        )
    if need_out and not isinstance(nf.mu_s, OutcomeFit):
        raise CapabilityError("sandwich variance needs parametric outcome models")

    arm = ARM_MEANS[estimator](d, nf)
    theta = [arm.psi1, arm.psi0]
    labels = ["psi1", "psi0"]
    sl = {}
    if need_sel:
        sl["alpha"] = len(theta)
        theta.append(d.alpha_hat)
        labels.append("alpha")
        sl["beta_sel"] = slice(len(theta), len(theta) + k)
        theta.extend(nf.selection.beta)
        labels.extend(f"beta_sel[{j}]" for j in range(k))
    if need_out:
        h = _link_fns(nf.mu_s.link)
        for a in (1, 0):
            sl[f"b{a}"] = slice(len(theta), len(theta) + k)
            theta.extend(nf.mu_s.beta(a))
            labels.extend(f"beta{a}[{j}]" for j in range(k))
    if estimator == "neyman":
        sl["pi1"] = len(theta)
        theta.append(float(np.sum(i1) / np.sum(S)))
        labels.append("pi1")

    def estfun(th):
        cols = [None, None]
        psi1, psi0 = th[0], th[1]
        extra = []
        if need_sel:
            alpha = th[sl["alpha"]]
            bsel = th[sl["beta_sel"]]
            sig = expit(V @ bsel)
            odds = np.exp(-(V @ bsel))  # (1 - sigma) / sigma
            extra.append((S - alpha)[:, None])
            extra.append(V * (S - sig)[:, None])
        if need_out:
            mu = {a: h(V @ th[sl[f"b{a}"]]) for a in (1, 0)}
            extra.append(V * (i1 * (y - mu[1]))[:, None])
            extra.append(V * (i0 * (y - mu[0]))[:, None])
        if estimator == "wht":
            cols[0] = odds * i1 * y / ((1 - alpha) * pi) - psi1
            cols[1] = odds * i0 * y / ((1 - alpha) * (1 - pi)) - psi0
        elif estimator == "neyman":
            p1 = th[sl["pi1"]]
            cols[0] = odds * i1 * y / ((1 - alpha) * p1) - psi1
            cols[1] = odds * i0 * y / ((1 - alpha) * (1 - p1)) - psi0
            extra.append((Ssrc * (i1 - p1))[:, None])
        elif estimator == "g_weighted":
            cols[0] = odds * Ssrc * mu[1] / (1 - alpha) - psi1
            cols[1] = odds * Ssrc * mu[0] / (1 - alpha) - psi0
        elif estimator == "g_transported":
            cols[0] = T * (mu[1] - psi1)
            cols[1] = T * (mu[0] - psi0)
        elif estimator == "ee":
            cols[0] = (T * (mu[1] - psi1) + i1 * odds * (y - mu[1]) / pi) / (1 - alpha)
            cols[1] = (T * (mu[0] - psi0) + i0 * odds * (y - mu[0]) / (1 - pi)) / (1 - alpha)
        return np.column_stack([cols[0], cols[1], *extra])

    if estimator not in ARM_MEANS:
        raise ValueError(f"no stacked system for estimator {estimator!r}")
    return EstimatingSystem(estfun, np.array(theta), tuple(labels))


def variance_sandwich(d, estimator, m, nf, return_cov=False):
    """Sandwich variance of ``Phi(psi1_hat, psi0_hat)`` for a parametric estimator.

    Parameters
    ----------
    d : StudyData
    estimator : {"wht", "neyman", "g_weighted", "g_transported", "ee"}
    m : EffectMeasure or str
    nf : NuisanceFit
    return_cov : bool, default=False
        Also return the full asymptotic covariance and the system.

    Returns
    -------
    float
        Variance of ``sqrt(N) (tau_hat - tau)``; the standard error is
        ``sqrt(V / N)``.
    """
    estimator = {"wG": "g_weighted", "tG": "g_transported"}.get(estimator, estimator)
    system = stacked_system(d, estimator, nf)
    cov = sandwich(system)
    psi1, psi0 = system.theta_hat[:2]
    grad = np.zeros(system.theta_dim)
    grad[:2] = phi_gradient(m, psi1, psi0)
    v = delta_method(cov, grad)
    if return_cov:
        return v, cov, system
    return v


def bootstrap_ci(d, estimator, m, B=200, level=0.95, seed=0, **options):
    """Stratified percentile bootstrap interval.

    Resampling is stratified on the trial arms and the target sample, and all
    nuisances are refitted on every replicate. See
    :func:`causal_transport.pipeline.bootstrap` for the options.

    Returns
    -------
    tuple of float
        ``(lo, hi)``.
    """
    from .pipeline import bootstrap

    return bootstrap(d, estimator, m, B=B, level=level, seed=seed, **options).ci
