"""Estimator registry, nuisance configuration and stratified bootstrap.

This module ties the nuisance models to the estimators so that a single call
fits every nuisance once and evaluates several (estimator, measure) cells on
the same data. It is used by the command-line interface and by the
simulation lab.

Estimator identifiers
---------------------
``wht``, ``neyman``, ``g_weighted`` (``wG``), ``g_transported`` (``tG``),
``ee``, ``ee_neyman``, ``one_step`` (``os``, initialised at ``g_transported``)
and ``os:<init>`` for the other initialisers; ``effect/gamma_transported``,
``effect/gamma_weighted``, ``effect/ee``, ``effect/os`` (initialised at
``gamma_transported``) and ``effect/os:<init>``.
"""

from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from . import estimators_effect as eff
from . import estimators_mean as em
from .exceptions import BootstrapError, CapabilityError, TransportError
from .measures import get_measure
from .nuisance import (
    NuisanceFit,
    NuisancePredictions,
    crossfit_nuisances,
    fit_nuisances,
)

__all__ = [
    "NuisanceConfig",
    "ESTIMATOR_IDS",
    "resolve_estimator",
    "prepare_nuisances",
    "estimate_cell",
    "run_estimators",
    "BootstrapResult",
    "bootstrap",
    "bootstrap_many",
]


@dataclass(frozen=True)
class NuisanceConfig:
    """How nuisances are obtained.

    Parameters
    ----------
    link : {"auto", "identity", "logit"}
    crossfit : int
        Number of cross-fitting folds; ``0`` or ``1`` fits on the full sample.
    crossfit_seed : int
    ratio_clip : float, optional
    outcome_model : {"fit", "zero", "oracle"}
        ``"zero"`` replaces the outcome regressions by the zero function;
        ``"oracle"`` uses :attr:`oracle_outcomes`.
    ratio_model : {"logistic", "one", "oracle"}
        ``"one"`` sets the density ratio to 1; ``"oracle"`` uses
        :attr:`oracle_ratio`.
    oracle_outcomes : dict, optional
        ``{arm: callable x -> mean}`` for trial arms (and ``"t0"`` for target
        controls).
    oracle_ratio : callable, optional
    use_pi_hat : bool
        Use empirical arm proportions inside the estimating equations.
    """

    link: str = "auto"
    crossfit: int = 0
    crossfit_seed: int = 0
    ratio_clip: Optional[float] = None
    outcome_model: str = "fit"
    ratio_model: str = "logistic"
    oracle_outcomes: Optional[Dict] = field(default=None, compare=False)
    oracle_ratio: Optional[Callable] = field(default=None, compare=False)
    use_pi_hat: bool = False

    def to_dict(self):
        out = asdict(self)
        out.pop("oracle_outcomes")
        out.pop("oracle_ratio")
        return out


_MEAN_INIT = ("g_transported", "g_weighted", "wht", "neyman", "ee")
_EFFECT_INIT = ("gamma_transported", "gamma_weighted", "ee")

_ALIASES = {
    "wht": "wht",
    "neyman": "neyman",
    "g_weighted": "g_weighted",
    "wg": "g_weighted",
    "g_transported": "g_transported",
    "tg": "g_transported",
    "ee": "ee",
    "ee_neyman": "ee_neyman",
    "one_step": "os",
    "os": "os",
    "effect/gamma_transported": "effect/gamma_transported",
    "effect/tgamma": "effect/gamma_transported",
    "effect/gamma_weighted": "effect/gamma_weighted",
    "effect/wgamma": "effect/gamma_weighted",
    "effect/ee": "effect/ee",
    "effect/os": "effect/os",
    "effect/one_step": "effect/os",
}
_SHORT_INIT = {"tg": "g_transported", "wg": "g_weighted"}

ESTIMATOR_IDS = (
    "wht",
    "neyman",
    "g_weighted",
    "g_transported",
    "ee",
    "ee_neyman",
    "os",
    *(f"os:{i}" for i in _MEAN_INIT),
    "effect/gamma_transported",
    "effect/gamma_weighted",
    "effect/ee",
    "effect/os",
    *(f"effect/os:{i}" for i in _EFFECT_INIT),
)

SANDWICH_SUPPORTED = ("wht", "neyman", "g_weighted", "g_transported", "ee")


def resolve_estimator(name):
    """Canonical estimator identifier.

    Raises
    ------
    ValueError
        For unknown identifiers; the message lists the valid ones.
    """
    key = str(name).strip()
    low = key.lower()
    if low in _ALIASES:
        return _ALIASES[low]
    for prefix, inits, short in (
        ("effect/os:", _EFFECT_INIT, {}),
        ("effect/one_step:", _EFFECT_INIT, {}),
        ("os:", _MEAN_INIT, _SHORT_INIT),
        ("one_step:", _MEAN_INIT, _SHORT_INIT),
    ):
        if low.startswith(prefix):
            init = low[len(prefix):]
            init = short.get(init, init)
            if init in inits:
                return ("effect/os:" if prefix.startswith("effect") else "os:") + init
    raise ValueError(
        f"unknown estimator {name!r}; valid identifiers are " + ", ".join(ESTIMATOR_IDS)
    )


def _is_effect(est_id):
    return est_id.startswith("effect/")


def prepare_nuisances(d, config=None, need_target=True):
    """Fit (or cross-fit) the nuisances described by ``config``.

    Returns
    -------
    NuisanceFit or NuisancePredictions
        A :class:`NuisanceFit` when fitted on the full sample with no
        overrides, so that sandwich variances remain available.
    """
    config = config or NuisanceConfig()
    target = need_target and d.has_target_controls
    if config.crossfit and config.crossfit > 1:
        pred = crossfit_nuisances(
            d, config.crossfit, config.crossfit_seed, config.link, config.ratio_clip, target
        )
        return _apply_overrides(d, pred, config)
    if config.outcome_model == "fit" and config.ratio_model == "logistic":
        return fit_nuisances(d, config.link, config.ratio_clip, target)
    return _apply_overrides(d, None, config)


def _apply_overrides(d, pred, config):
    need_fit = pred is None and (
        config.outcome_model == "fit" or config.ratio_model == "logistic"
    )
    if need_fit:
        target = d.has_target_controls
        pred = fit_nuisances(d, config.link, config.ratio_clip, target).predict(d)
    if pred is None:
        pred = NuisancePredictions(
            np.full(d.N, np.nan), np.zeros(d.N), np.zeros(d.N), None,
            d.alpha_hat, d.pi, {"folds": 1, "n_clipped": 0},
        )
    src = d.source
    if config.ratio_model == "one":
        r = np.where(src, 1.0, np.nan)
        pred = pred.with_ratio(r)
    elif config.ratio_model == "oracle":
        if config.oracle_ratio is None:
            raise CapabilityError("ratio_model='oracle' needs oracle_ratio")
        r = np.full(d.N, np.nan)
        r[src] = config.oracle_ratio(d.x[src])
        pred = pred.with_ratio(r)
    elif config.ratio_model != "logistic":
        raise ValueError(f"unknown ratio_model {config.ratio_model!r}")
    if config.outcome_model == "zero":
        pred = pred.with_outcomes(np.zeros(d.N), np.zeros(d.N))
    elif config.outcome_model == "oracle":
        oo = config.oracle_outcomes
        if oo is None:
            raise CapabilityError("outcome_model='oracle' needs oracle_outcomes")
        pred = pred.with_outcomes(oo[1](d.x), oo[0](d.x))
        if "t0" in oo and d.has_target_controls:
            pred.mu0_t = np.asarray(oo["t0"](d.x), dtype=float)
    elif config.outcome_model != "fit":
        raise ValueError(f"unknown outcome_model {config.outcome_model!r}")
    pred.diagnostics = dict(pred.diagnostics)
    pred.diagnostics["outcome_model"] = config.outcome_model
    pred.diagnostics["ratio_model"] = config.ratio_model
    return pred


def _eif_se(d, m, nf, psi1, psi0, use_pi_hat):
    phi = em.eif_mean(d, m, nf, psi1, psi0, use_pi_hat)
    return float(np.sqrt(np.var(phi) / d.N))


def estimate_cell(d, est_id, m, nf, config=None, se="auto"):
    """Evaluate one estimator on one measure.

    Parameters
    ----------
    d : StudyData
    est_id : str
    m : EffectMeasure or str
    nf : NuisanceFit or NuisancePredictions
    config : NuisanceConfig, optional
    se : {"auto", "sandwich", "eif", "oracle", "none"}
        ``"auto"`` uses the known-ratio formula for ``wht`` with an oracle
        ratio, the sandwich for parametric full-sample fits and the
        empirical influence-function variance for ``ee`` and ``one_step``
        otherwise.

    Returns
    -------
    EstimateReport
    """
    config = config or NuisanceConfig()
    est_id = resolve_estimator(est_id)
    m = get_measure(m)
    ph = config.use_pi_hat
    if est_id == "wht":
        rep = em.wht(d, m, nf)
    elif est_id == "neyman":
        rep = em.neyman(d, m, nf)
    elif est_id == "g_weighted":
        rep = em.g_weighted(d, m, nf)
    elif est_id == "g_transported":
        rep = em.g_transported(d, m, nf)
    elif est_id == "ee":
        rep = em.ee(d, m, nf, use_pi_hat=ph)
    elif est_id == "ee_neyman":
        rep = em.ee(d, m, nf, use_pi_hat=True)
    elif est_id == "os" or est_id.startswith("os:"):
        init = "g_transported" if est_id == "os" else est_id[3:]
        rep = em.one_step(d, m, nf, initial=init, use_pi_hat=ph)
    elif est_id == "effect/gamma_transported":
        rep = eff.gamma_transported(d, m, nf)
    elif est_id == "effect/gamma_weighted":
        rep = eff.gamma_weighted(d, m, nf)
    elif est_id == "effect/ee":
        rep = eff.ee_effect(d, m, nf)
    else:
        init = "gamma_transported" if est_id == "effect/os" else est_id[len("effect/os:"):]
        rep = eff.one_step_effect(d, m, nf, initial=init)
    rep.estimator = est_id
    if se != "none" and not _is_effect(est_id):
        rep.se, rep.diagnostics["se_method"] = _standard_error(
            d, est_id, m, nf, rep, se, ph, config
        )
    return rep


def _standard_error(d, est_id, m, nf, rep, se, use_pi_hat, config):
    oracle_ok = est_id == "wht" and config.ratio_model == "oracle"
    sandwich_ok = (
        isinstance(nf, NuisanceFit)
        and est_id in SANDWICH_SUPPORTED
        and not (est_id == "ee" and use_pi_hat)
    )
    try:
        if se in ("auto", "oracle") and oracle_ok:
            v = em.variance_oracle_wht(d, m, nf)
            return float(np.sqrt(v / d.N)), "oracle"
        if se == "oracle":
            return None, "unavailable"
        if se in ("auto", "sandwich") and sandwich_ok:
            v = em.variance_sandwich(d, est_id, m, nf)
            return float(np.sqrt(v / d.N)), "sandwich"
        if se == "sandwich":
            return None, "unavailable"
        if est_id in ("ee", "ee_neyman"):
            return _eif_se(d, m, nf, rep.diagnostics["psi1"], rep.diagnostics["psi0"],
                           est_id == "ee_neyman" or use_pi_hat), "eif"
        if est_id == "os" or est_id.startswith("os:"):
            return _eif_se(d, m, nf, rep.diagnostics["psi1"], rep.diagnostics["psi0"],
                           use_pi_hat), "eif"
    except TransportError as exc:
        rep.diagnostics["se_error"] = str(exc)
        return None, "failed"
    return None, "unavailable"


def _failed_report(d, est_id, m_name, exc):
    return em.EstimateReport(
        m_name,
        est_id,
        None,
        n=d.n,
        m=d.m,
        diagnostics={"error": f"{type(exc).__name__}: {exc}", "error_type": type(exc).__name__},
    )


def run_estimators(d, estimators, measures, config=None, se="auto", nf=None):
    """Evaluate every (estimator, measure) pair on ``d``.

    Nuisances are fitted once and shared. Errors in one cell (domain,
    capability, derivative) are captured in that cell's report and do not
    affect the other cells.

    Returns
    -------
    list of EstimateReport
        In the order ``for e in estimators for m in measures``.
    """
    config = config or NuisanceConfig()
    ids = [resolve_estimator(e) for e in estimators]
    ms = [get_measure(m) for m in measures]
    if nf is None:
        nf = prepare_nuisances(d, config, any(_is_effect(e) for e in ids))
    out = []
    for est in ids:
        for m in ms:
            try:
                out.append(estimate_cell(d, est, m, nf, config, se))
            except TransportError as exc:
                out.append(_failed_report(d, est, m.name, exc))
    return out


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------

@dataclass
class BootstrapResult:
    """Percentile bootstrap summary for one (estimator, measure) cell.

    Attributes
    ----------
    ci : tuple of float
    level : float
    replicates : ndarray
        Successful replicate estimates in replicate order.
    failures : dict
        Count of failed replicates by exception type.
    B : int
    """

    ci: tuple
    level: float
    replicates: np.ndarray
    failures: Dict[str, int]
    B: int

    @property
    def se(self):
        return float(np.std(self.replicates, ddof=1))


def _bootstrap_strata(d):
    lab = d.strata()
    lab[d.target_controls] = 3
    return [np.flatnonzero(lab == k) for k in range(4) if np.any(lab == k)]


def bootstrap_many(d, estimators, measures, B=200, level=0.95, seed=0, config=None,
                   max_failure_rate=0.05, raise_on_failure=True):
    """Stratified percentile bootstrap for several cells at once.

    Rows are resampled with replacement within the strata
    (trial treated, trial control, target, target controls); nuisances are
    refitted on every replicate.

    Returns
    -------
    dict
        ``{(estimator_id, measure_name): BootstrapResult}``.

    Raises
    ------
    BootstrapError
        If more than ``max_failure_rate`` of the replicates fail for a cell
        and ``raise_on_failure`` is true.
    """
    if B < 100:
        raise ValueError("the bootstrap needs B >= 100 replicates")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    config = config or NuisanceConfig()
    ids = [resolve_estimator(e) for e in estimators]
    ms = [get_measure(m).name for m in measures]
    strata = _bootstrap_strata(d)
    rng = np.random.default_rng(seed)
    values = {(e, m): [] for e in ids for m in ms}
    fails = {(e, m): {} for e in ids for m in ms}
    for _ in range(B):
        idx = np.concatenate([rng.choice(s, size=s.size, replace=True) for s in strata])
        db = d.take(idx)
        try:
            reps = run_estimators(db, ids, ms, config, se="none")
        except TransportError as exc:
            for key in values:
                name = type(exc).__name__
                fails[key][name] = fails[key].get(name, 0) + 1
            continue
        for rep in reps:
            key = (rep.estimator, rep.measure)
            if rep.ok:
                values[key].append(rep.estimate)
            else:
                name = rep.diagnostics.get("error_type", "Error")
                fails[key][name] = fails[key].get(name, 0) + 1
    out = {}
    q = [(1 - level) / 2, (1 + level) / 2]
    for key, vals in values.items():
        n_fail = sum(fails[key].values())
        if n_fail > max_failure_rate * B:
            if raise_on_failure:
                raise BootstrapError(
                    f"{key[0]}/{key[1]}: {n_fail} of {B} bootstrap replicates failed "
                    f"({fails[key]})",
                    fails[key],
                )
            out[key] = None
            continue
        arr = np.asarray(vals, dtype=float)
        lo, hi = np.quantile(arr, q)
        out[key] = BootstrapResult((float(lo), float(hi)), level, arr, fails[key], B)
    return out


def bootstrap(d, estimator, m, B=200, level=0.95, seed=0, config=None,
              max_failure_rate=0.05):
    """Stratified percentile bootstrap for one estimator and measure.

    Returns
    -------
    BootstrapResult
    """
    res = bootstrap_many(d, [estimator], [m], B, level, seed, config, max_failure_rate)
    return next(iter(res.values()))
