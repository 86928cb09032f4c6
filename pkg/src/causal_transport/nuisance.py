"""Nuisance models: selection logistic regression, density ratio and outcome regressions.

The density ratio between target and trial covariate laws is recovered from a
logistic model of trial membership,

    r(x) = n / (N - n) * (1 - sigma(x)) / sigma(x),

where ``sigma(x) = P(S = 1 | X = x)``. Outcome regressions are fitted per trial
arm, by ordinary least squares or by logistic maximum likelihood.

The estimators consume nuisances as per-row arrays gathered in a
:class:`NuisancePredictions`. These arrays come either from full-sample fits
(:meth:`NuisanceFit.predict`) or from K-fold cross-fitting
(:func:`crossfit_nuisances`).
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional

import numpy as np
import scipy.linalg
from scipy.special import expit, xlogy
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.model_selection import StratifiedKFold
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import (
    CapabilityError,
    ConvergenceError,
    DataValidationError,
    DomainError,
    FoldError,
    OverlapError,
    SeparationError,
    SingularMatrixError,
)
from .measures import get_measure

__all__ = [
    "NewtonLogisticRegression",
    "OutcomeRegression",
    "LogisticDensityRatio",
    "LogisticFit",
    "OutcomeFit",
    "FunctionOutcome",
    "DensityRatio",
    "ConstantRatio",
    "NuisanceFit",
    "NuisancePredictions",
    "newton_logistic",
    "fit_selection_logistic",
    "density_ratio",
    "fit_outcomes",
    "fit_mu0_target",
    "plug_in_cate",
    "fit_nuisances",
    "crossfit_split",
    "crossfit_nuisances",
]

SEPARATION_BOUND = 50.0
OVERLAP_FLOOR = 1e-12
CONDITION_LIMIT = 1e10


def _add_intercept(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    return np.column_stack([np.ones(X.shape[0]), X])


def _check_full_rank(V, what):
    """Raise if the design ``V`` is rank deficient (QR with column pivoting)."""
    n_rows, n_cols = V.shape
    if n_rows < n_cols:
        raise SingularMatrixError(
            f"{what}: under-determined design with {n_rows} rows and {n_cols} "
            "coefficients"
        )
    scale = np.sqrt(np.sum(V * V, axis=0))
    if np.any(scale == 0):
        raise SingularMatrixError(f"{what}: design has an all-zero column")
    _, R, _ = scipy.linalg.qr(V / scale, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    cond = diag[0] / diag[-1] if diag[-1] > 0 else np.inf
    if cond > CONDITION_LIMIT:
        raise SingularMatrixError(
            f"{what}: design is rank deficient (condition number {cond:.3g}); "
            "check for collinear or constant covariates",
            condition_number=float(cond),
        )


# ---------------------------------------------------------------------------
# Newton-Raphson logistic regression
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LogisticFit:
    """Result of a Newton-Raphson logistic fit.

    Attributes
    ----------
    beta : ndarray of shape (p + 1,)
        Coefficients, intercept first.
    converged : bool
    iterations : int
    grad_norm : float
        Max-norm of the mean score at ``beta``.
    trace : tuple of float
        Score max-norm at every iteration.
    """

    beta: np.ndarray
    converged: bool
    iterations: int
    grad_norm: float
    trace: tuple = ()

    def predict_proba(self, x):
        """Fitted probability ``sigma(x, beta)`` at covariates ``x``."""
        return expit(_add_intercept(x) @ self.beta)


def _loglik(V, y, w, beta):
    eta = V @ beta
    p = expit(eta)
    return float(np.sum(w * (xlogy(y, p) + xlogy(1.0 - y, 1.0 - p))))


def newton_logistic(V, y, sample_weight=None, tol=1e-8, max_iter=100):
    """Maximum likelihood logistic regression by damped Newton-Raphson.

    Parameters
    ----------
    V : ndarray of shape (N, k)
        Design matrix, already containing an intercept column if wanted.
    y : ndarray of shape (N,)
        Binary response.
    sample_weight : ndarray of shape (N,), optional
    tol : float, default=1e-8
        Convergence threshold on the max-norm of the mean score
        ``(1/W) sum w_i V_i (y_i - p_i)``.
    max_iter : int, default=100

    Returns
    -------
    LogisticFit

    Raises
    ------
    SingularMatrixError
        If the design is rank deficient.
    SeparationError
        If coefficients diverge (max-norm above 50) or the fitted
        probabilities reproduce the labels exactly.
    ConvergenceError
        If ``max_iter`` iterations do not reach ``tol``.
    """
    V = np.asarray(V, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if sample_weight is None else np.asarray(sample_weight, float)
    if not np.all((y == 0) | (y == 1)):
        raise DataValidationError("logistic regression needs a binary response")
    W = float(np.sum(w))
    _check_full_rank(V * np.sqrt(w)[:, None], "logistic regression")
    ybar = float(np.sum(w * y) / W)
    if ybar in (0.0, 1.0):
        raise SeparationError("response is constant; the logistic MLE does not exist")
    beta = np.zeros(V.shape[1])
    beta[0] = np.log(ybar / (1.0 - ybar))
    trace = []
    ll = _loglik(V, y, w, beta)
    for it in range(max_iter + 1):
        p = expit(V @ beta)
        score = V.T @ (w * (y - p)) / W
        gnorm = float(np.max(np.abs(score)))
        trace.append(gnorm)
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            raise SeparationError(
                f"coefficients exceed {SEPARATION_BOUND:g} in absolute value with "
                f"score norm {gnorm:.3g}: the classes are (quasi-)separated", trace
            )
        if gnorm < tol:
            if np.max(np.abs(y - p)) < 1e-6:
                raise SeparationError(
                    "fitted probabilities reproduce the labels: the classes are "
                    "separated", trace
                )
            return LogisticFit(beta.copy(), True, it, gnorm, tuple(trace))
        if it == max_iter:
            break
        H = V.T @ (V * (w * p * (1.0 - p))[:, None]) / W
        try:
            step = scipy.linalg.solve(H, score, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            raise SingularMatrixError(
                "singular Hessian in logistic regression; check for collinear "
                "covariates or separation"
            ) from None
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            ll_new = _loglik(V, y, w, cand)
            if ll_new >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        beta, ll = cand, ll_new
    raise ConvergenceError(
        f"logistic regression did not converge in {max_iter} iterations "
        f"(score norm {trace[-1]:.3g})", trace
    )


class NewtonLogisticRegression(ClassifierMixin, BaseEstimator):
    """Unpenalised logistic regression fitted by Newton-Raphson.

    Parameters
    ----------
    tol : float, default=1e-8
        Threshold on the max-norm of the mean score.
    max_iter : int, default=100
    fit_intercept : bool, default=True

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
    intercept_ : float
    n_iter_ : int
    converged_ : bool
    fit_ : LogisticFit

    Examples
    --------
    >>> import numpy as np
    >>> X = np.array([[0.0], [1.0], [2.0], [3.0], [1.5], [0.5]])
    >>> y = np.array([0, 0, 1, 1, 0, 1])
    >>> clf = NewtonLogisticRegression().fit(X, y)
    >>> clf.predict_proba(X).shape
    (6, 2)
    """

    def __init__(self, tol=1e-8, max_iter=100, fit_intercept=True):
        self.tol = tol
        self.max_iter = max_iter
        self.fit_intercept = fit_intercept

    def fit(self, X, y, sample_weight=None):
        X, y = check_X_y(X, y, dtype=float)
        self.classes_ = np.array([0, 1])
        V = _add_intercept(X) if self.fit_intercept else X
        self.fit_ = newton_logistic(V, y, sample_weight, self.tol, self.max_iter)
        beta = self.fit_.beta
        self.intercept_ = float(beta[0]) if self.fit_intercept else 0.0
        self.coef_ = beta[1:].copy() if self.fit_intercept else beta.copy()
        self.n_iter_ = self.fit_.iterations
        self.converged_ = self.fit_.converged
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        return X @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        p1 = expit(self.decision_function(X))
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(int)


class OutcomeRegression(RegressorMixin, BaseEstimator):
    """Generalised linear outcome model with identity or logit link.

    Parameters
    ----------
    link : {"identity", "logit"}, default="identity"
        ``"identity"`` fits ordinary least squares; ``"logit"`` fits a
        logistic regression by Newton-Raphson and predicts probabilities.
    tol, max_iter : float, int
        Passed to the logistic solver.

    Attributes
    ----------
    beta_ : ndarray of shape (n_features + 1,)
        Coefficients with the intercept first.
    """

    def __init__(self, link="identity", tol=1e-8, max_iter=100):
        self.link = link
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y, sample_weight=None):
        X, y = check_X_y(X, y, dtype=float)
        V = _add_intercept(X)
        if self.link == "identity":
            w = np.ones_like(y) if sample_weight is None else np.asarray(sample_weight)
            sw = np.sqrt(w)
            _check_full_rank(V * sw[:, None], "outcome regression")
            self.beta_, *_ = np.linalg.lstsq(V * sw[:, None], y * sw, rcond=None)
        elif self.link == "logit":
            self.beta_ = newton_logistic(
                V, y, sample_weight, self.tol, self.max_iter
            ).beta
        else:
            raise ValueError(f"unknown link {self.link!r}; use 'identity' or 'logit'")
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "beta_")
        eta = _add_intercept(check_array(X, dtype=float)) @ self.beta_
        return expit(eta) if self.link == "logit" else eta


# ---------------------------------------------------------------------------
# Density ratio
# ---------------------------------------------------------------------------

class DensityRatio:
    """Density ratio ``x -> n/(N-n) * (1 - sigma(x)) / sigma(x)``.

    Parameters
    ----------
    fit : LogisticFit
        Selection model ``P(S=1 | x)``.
    n, m : int
        Trial and target sample sizes used in the scaling constant.
    clip : float, optional
        If given, ratios are clipped to ``[1/clip, clip]``.
    """

    def __init__(self, fit, n, m, clip=None):
        self.fit = fit
        self.n = int(n)
        self.m = int(m)
        self.clip = clip

    @property
    def scale(self):
        return self.n / self.m

    def evaluate(self, x):
        """Return ``(ratio, n_clipped)`` at covariates ``x``."""
        x = np.asarray(x, dtype=float)
        eta = _add_intercept(x) @ self.fit.beta
        sig = expit(eta)
        low = sig < OVERLAP_FLOOR
        if np.any(low):
            i = int(np.flatnonzero(low)[0])
            raise OverlapError(
                f"selection probability {sig[i]:.3g} below {OVERLAP_FLOOR:g} at "
                f"row {i}: the point lies outside the trial support",
                point=np.atleast_2d(x)[i] if x.ndim > 1 else x[i],
            )
        r = self.scale * np.exp(-eta)
        n_clipped = 0
        if self.clip is not None:
            lo, hi = 1.0 / self.clip, self.clip
            n_clipped = int(np.sum((r < lo) | (r > hi)))
            r = np.clip(r, lo, hi)
        return r, n_clipped

    def __call__(self, x):
        return self.evaluate(x)[0]


class ConstantRatio:
    """Ratio model returning a constant (``1`` means no covariate shift)."""

    def __init__(self, value=1.0):
        self.value = float(value)

    def evaluate(self, x):
        return np.full(np.asarray(x).shape[0], self.value), 0

    def __call__(self, x):
        return self.evaluate(x)[0]


class LogisticDensityRatio(BaseEstimator):
    """Estimator of the target/trial covariate density ratio.

    Fits ``P(S=1 | X)`` by logistic regression and returns the odds transform
    scaled by ``n / (N - n)``.

    Parameters
    ----------
    tol : float, default=1e-8
    max_iter : int, default=100
    clip : float, optional
        Symmetric clipping bound on the ratio.

    Attributes
    ----------
    fit_ : LogisticFit
    ratio_ : DensityRatio
    """

    def __init__(self, tol=1e-8, max_iter=100, clip=None):
        self.tol = tol
        self.max_iter = max_iter
        self.clip = clip

    def fit(self, X, s):
        X, s = check_X_y(X, s, dtype=float)
        self.fit_ = newton_logistic(_add_intercept(X), s, None, self.tol, self.max_iter)
        n = int(np.sum(s == 1))
        self.ratio_ = DensityRatio(self.fit_, n, s.shape[0] - n, self.clip)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "ratio_")
        return self.ratio_(check_array(X, dtype=float))


def fit_selection_logistic(d, tol=1e-8, max_iter=100):
    """Fit ``P(S=1 | X)`` on the pooled sample by Newton-Raphson.

    Parameters
    ----------
    d : StudyData
    tol : float, default=1e-8
    max_iter : int, default=100

    Returns
    -------
    LogisticFit
    """
    return newton_logistic(d.design, d.s.astype(float), None, tol, max_iter)


def density_ratio(fit, d, clip=None):
    """Build the density-ratio function from a selection fit.

    Parameters
    ----------
    fit : LogisticFit
    d : StudyData
        Supplies the scaling constant ``n / (N - n)``.
    clip : float, optional

    Returns
    -------
    DensityRatio
        Callable ``x -> r(x)``; raises :class:`OverlapError` where the
        selection probability falls below ``1e-12``.
    """
    if not fit.converged:
        raise ConvergenceError("selection model did not converge", fit.trace)
    return DensityRatio(fit, d.n, d.m, clip)


# ---------------------------------------------------------------------------
# Outcome models
# ---------------------------------------------------------------------------

class OutcomeFit:
    """Per-arm outcome regressions fitted on trial rows.

    Parameters
    ----------
    models : dict
        ``{arm: OutcomeRegression}`` for the fitted arms.
    link : {"identity", "logit"}
    """

    def __init__(self, models, link):
        self.models = dict(models)
        self.link = link

    @property
    def arms(self):
        return tuple(sorted(self.models))

    def beta(self, arm):
        """Coefficient vector of ``arm`` (intercept first)."""
        return self.models[arm].beta_

    def predict(self, x, arm):
        """Predicted mean outcome for ``arm`` at covariates ``x``."""
        return self.models[arm].predict(np.asarray(x, dtype=float).reshape(len(x), -1))

    def __repr__(self):
        return f"OutcomeFit(arms={self.arms}, link={self.link!r})"


class FunctionOutcome:
    """Outcome surfaces given directly as callables.

    Parameters
    ----------
    functions : dict
        ``{arm: callable x -> mean}``.
    link : str, default="identity"
        Informational only.
    """

    def __init__(self, functions, link="identity"):
        self.functions = dict(functions)
        self.link = link

    @property
    def arms(self):
        return tuple(sorted(self.functions))

    def beta(self, arm):
        raise CapabilityError("function outcome surfaces have no coefficient vector")

    def predict(self, x, arm):
        return np.asarray(self.functions[arm](np.asarray(x, dtype=float)), dtype=float)


def _resolve_link(d, link, rows):
    if link in (None, "auto"):
        obs = d.y[rows]
        return "logit" if np.all((obs == 0) | (obs == 1)) else "identity"
    if link not in ("identity", "logit"):
        raise ValueError(f"unknown link {link!r}; use 'identity', 'logit' or 'auto'")
    return link


def _fit_arm(d, rows, link, what):
    k = int(np.sum(rows))
    if k == 0:
        raise DataValidationError(f"{what}: no observations")
    if k <= d.p + 1:
        raise SingularMatrixError(
            f"{what}: under-determined with {k} rows for {d.p + 1} coefficients"
        )
    return OutcomeRegression(link=link).fit(d.x[rows], d.y[rows])


def fit_outcomes(d, link=None):
    """Regress ``Y`` on ``V = [1, X]`` separately in each trial arm.

    Parameters
    ----------
    d : StudyData
    link : {"identity", "logit", "auto", None}
        ``None``/``"auto"`` selects ``"logit"`` for 0/1 outcomes and
        ``"identity"`` otherwise.

    Returns
    -------
    OutcomeFit
    """
    link = _resolve_link(d, link, d.source)
    models = {
        1: _fit_arm(d, d.treated, link, "treated arm"),
        0: _fit_arm(d, d.controls, link, "control arm"),
    }
    return OutcomeFit(models, link)


def fit_mu0_target(d, link=None):
    """Regress control outcomes on covariates among target rows.

    Raises
    ------
    CapabilityError
        If no target row carries a control outcome.
    """
    rows = d.target_controls
    if not np.any(rows):
        raise CapabilityError(
            "no target-control outcomes: effect-exchangeability estimators are "
            "unavailable, use the mean-exchangeability estimators instead"
        )
    link = _resolve_link(d, link, rows)
    y = d.y[rows]
    if np.all(y == y[0]):
        return FunctionOutcome({0: lambda x, c=float(y[0]): np.full(len(x), c)}, link)
    return OutcomeFit({0: _fit_arm(d, rows, link, "target controls")}, link)


def plug_in_cate(m, mu):
    """Conditional effect surface ``x -> Phi(mu1(x), mu0(x))``.

    Parameters
    ----------
    m : EffectMeasure or str
    mu : OutcomeFit or FunctionOutcome

    Returns
    -------
    callable
        Raises :class:`DomainError` carrying the offending covariate row when
        predictions leave the measure's domain.
    """
    m = get_measure(m)

    def cate(x):
        x = np.asarray(x, dtype=float)
        p1 = mu.predict(x, 1)
        p0 = mu.predict(x, 0)
        ok = m.domain(p1, p0)
        if not np.all(ok):
            i = int(np.flatnonzero(~ok)[0])
            err = DomainError(
                f"{m.name}: predicted means ({p1[i]:.6g}, {p0[i]:.6g}) at row {i} "
                "lie outside the measure's domain"
            )
            err.x = x[i]
            raise err
        return m.phi(p1, p0)

    return cate


# ---------------------------------------------------------------------------
# Bundles
# ---------------------------------------------------------------------------

@dataclass
class NuisancePredictions:
    """Per-row nuisance values consumed by the estimators.

    Attributes
    ----------
    r : ndarray of shape (N,)
        Density ratio at trial rows (NaN on target rows).
    mu1, mu0 : ndarray of shape (N,)
        Trial-fitted outcome means at every row.
    mu0_t : ndarray of shape (N,) or None
        Target-control outcome mean at every row.
    alpha_hat, pi : float
    diagnostics : dict
    """

    r: np.ndarray
    mu1: np.ndarray
    mu0: np.ndarray
    mu0_t: Optional[np.ndarray]
    alpha_hat: float
    pi: float
    diagnostics: Dict = field(default_factory=dict)

    def with_ratio(self, r):
        return replace(self, r=np.asarray(r, dtype=float))

    def with_outcomes(self, mu1, mu0):
        return replace(
            self, mu1=np.asarray(mu1, dtype=float), mu0=np.asarray(mu0, dtype=float)
        )


@dataclass
class NuisanceFit:
    """Fitted nuisance models on a full sample.

    Attributes
    ----------
    selection : LogisticFit or None
    ratio : callable
        ``x -> r(x)``; a :class:`DensityRatio` for logistic fits.
    mu_s : OutcomeFit or FunctionOutcome
    mu0_t : OutcomeFit, FunctionOutcome or None
    alpha_hat, pi : float
    cate : callable, optional
    """

    selection: Optional[LogisticFit]
    ratio: Callable
    mu_s: object
    mu0_t: Optional[object]
    alpha_hat: float
    pi: float
    cate: Optional[Callable] = None

    def predict(self, d, rows=None):
        """Evaluate every nuisance on the rows of ``d``.

        Parameters
        ----------
        d : StudyData
        rows : array of int, optional
            Restrict evaluation to these rows; other entries are NaN.

        Returns
        -------
        NuisancePredictions
        """
        N = d.N
        rows = np.arange(N) if rows is None else np.asarray(rows)
        x = d.x[rows]
        src = d.source[rows]
        r = np.full(N, np.nan)
        n_clipped = 0
        if np.any(src):
            if hasattr(self.ratio, "evaluate"):
                vals, n_clipped = self.ratio.evaluate(x[src])
            else:
                vals = np.asarray(self.ratio(x[src]), dtype=float)
            r[rows[src]] = vals
        mu1 = np.full(N, np.nan)
        mu0 = np.full(N, np.nan)
        mu1[rows] = self.mu_s.predict(x, 1)
        mu0[rows] = self.mu_s.predict(x, 0)
        mu0_t = None
        if self.mu0_t is not None:
            mu0_t = np.full(N, np.nan)
            mu0_t[rows] = self.mu0_t.predict(x, 0)
        diag = {"n_clipped": n_clipped, "folds": 1}
        if self.selection is not None:
            diag["selection_converged"] = bool(self.selection.converged)
            diag["selection_iterations"] = int(self.selection.iterations)
        return NuisancePredictions(r, mu1, mu0, mu0_t, d.alpha_hat, d.pi, diag)


def fit_nuisances(d, link=None, ratio_clip=None, target_outcomes=True, tol=1e-8,
                  max_iter=100):
    """Fit the selection model, density ratio and outcome regressions.

    Parameters
    ----------
    d : StudyData
    link : {"identity", "logit", "auto", None}
    ratio_clip : float, optional
    target_outcomes : bool, default=True
        Fit the target-control regression when target-control outcomes exist.
    tol, max_iter : float, int
        Logistic solver settings.

    Returns
    -------
    NuisanceFit
    """
    sel = fit_selection_logistic(d, tol, max_iter)
    ratio = density_ratio(sel, d, ratio_clip)
    mu = fit_outcomes(d, link)
    mu0_t = None
    if target_outcomes and d.has_target_controls:
        mu0_t = fit_mu0_target(d, mu.link if link in (None, "auto") else link)
    return NuisanceFit(sel, ratio, mu, mu0_t, d.alpha_hat, d.pi)


def _fold_strata(d):
    lab = d.strata()
    lab[d.target_controls] = 3
    return lab


def crossfit_split(d, k=2, seed=0):
    """Stratified K-fold partition of the rows of ``d``.

    Strata are the trial arms, the target rows without outcomes and the target
    controls.

    Parameters
    ----------
    d : StudyData
    k : int, default=2
    seed : int, default=0

    Returns
    -------
    list of (ndarray, ndarray)
        ``(train_idx, eval_idx)`` pairs. The evaluation sets partition
        ``range(N)``.

    Raises
    ------
    FoldError
        If ``k < 2`` or a stratum has fewer than ``k`` rows.
    """
    if k < 2:
        raise FoldError(f"cross-fitting needs k >= 2, got {k}")
    lab = _fold_strata(d)
    counts = np.bincount(lab, minlength=4)
    names = ["trial controls", "trial treated", "target", "target controls"]
    for c, name in zip(counts, names):
        if 0 < c < k:
            raise FoldError(f"stratum '{name}' has {c} rows, fewer than k={k} folds")
    skf = StratifiedKFold(n_splits=k, shuffle=True, random_state=int(seed) % 2**32)
    return [(tr, ev) for tr, ev in skf.split(np.zeros(d.N), lab)]


def crossfit_nuisances(d, k=2, seed=0, link=None, ratio_clip=None,
                       target_outcomes=True):
    """Cross-fitted nuisance predictions.

    Every nuisance (selection model, density ratio, outcome regressions) is
    refitted on each training fold and evaluated on the held-out fold.

    Returns
    -------
    NuisancePredictions
    """
    if link in (None, "auto"):
        link = _resolve_link(d, None, d.source)
    folds = crossfit_split(d, k, seed)
    N = d.N
    r = np.full(N, np.nan)
    mu1 = np.full(N, np.nan)
    mu0 = np.full(N, np.nan)
    mu0_t = np.full(N, np.nan) if (target_outcomes and d.has_target_controls) else None
    n_clipped = 0
    for tr, ev in folds:
        train = d.take(tr, validate=True)
        nf = fit_nuisances(train, link, ratio_clip, target_outcomes)
        pred = nf.predict(d, ev)
        r[ev] = pred.r[ev]
        mu1[ev] = pred.mu1[ev]
        mu0[ev] = pred.mu0[ev]
        if mu0_t is not None:
            mu0_t[ev] = pred.mu0_t[ev]
        n_clipped += pred.diagnostics["n_clipped"]
    diag = {"n_clipped": n_clipped, "folds": k}
    return NuisancePredictions(r, mu1, mu0, mu0_t, d.alpha_hat, d.pi, diag)
