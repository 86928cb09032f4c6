"""Ground-truth population effects of the simulation designs.

For the linear designs the population means are available in closed form,
``E_P[Y(a)] = beta_P^(a)' (1, nu_P)``. For the binary designs they are
integrated by Monte Carlo over ``M`` covariate draws, with a scrambled Sobol
sequence as an independent cross-check.
"""

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, qmc

from ..measures import eval_phi, get_measure, phi_gradient
from .dgp import get_spec

__all__ = ["PopulationMeans", "TrueEffect", "population_means", "true_effects", "qmc_means"]

DEFAULT_M = 2 ** 22
_CHUNK = 2 ** 19


@dataclass(frozen=True)
class PopulationMeans:
    """Treated and control means of one population.

    ``cov`` is the Monte Carlo covariance of ``(psi1, psi0)``; it is zero for
    closed-form truths.
    """

    psi1: float
    psi0: float
    cov: tuple = ((0.0, 0.0), (0.0, 0.0))
    method: str = "exact"


@dataclass(frozen=True)
class TrueEffect:
    """True effect in the target and trial populations with MC standard errors."""

    measure: str
    tau_t: float
    tau_s: float
    se_t: float
    se_s: float
    target: PopulationMeans
    source: PopulationMeans

    def to_dict(self):
        return {
            "measure": self.measure,
            "tau_T": self.tau_t,
            "tau_S": self.tau_s,
            "se_T": self.se_t,
            "se_S": self.se_s,
            "psi_T": [self.target.psi1, self.target.psi0],
            "psi_S": [self.source.psi1, self.source.psi0],
            "method": self.target.method,
        }


def _exact_linear(spec, s):
    v = np.concatenate([[1.0], spec.nu(s)])
    b1 = np.asarray(spec.params["beta1"])
    b0 = np.asarray(spec.params["beta0"])
    if s == 0 and "theta" in spec.params:
        b1 = b1 + np.asarray(spec.params["theta"])
        b0 = b0 + np.asarray(spec.params["theta"])
    return PopulationMeans(float(v @ b1), float(v @ b0))


def _mc_means(spec, s, M, seed):
    # Both populations share one stream (common random numbers), so identical
    # covariate laws give identical truths and tau_T - tau_S is less noisy.
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n_done = 0
    sums = np.zeros(2)
    cross = np.zeros((2, 2))
    nu = spec.nu(s)
    while n_done < M:
        k = min(_CHUNK, M - n_done)
        x = rng.standard_normal((k, spec.p)) + nu
        p = np.column_stack([spec.mean(x, 1, s), spec.mean(x, 0, s)])
        sums += p.sum(axis=0)
        cross += p.T @ p
        n_done += k
    mean = sums / M
    cov = (cross / M - np.outer(mean, mean)) * M / (M - 1) / M
    return PopulationMeans(
        float(mean[0]), float(mean[1]), tuple(map(tuple, cov.tolist())), "monte_carlo"
    )


_CACHE = {}


def _cached_means(spec, s, M, seed):
    key = (json.dumps(spec.to_dict(), sort_keys=True), s, M, seed)
    if key not in _CACHE:
        if spec.kind == "linear":
            _CACHE[key] = _exact_linear(spec, s)
        else:
            _CACHE[key] = _mc_means(spec, s, M, seed)
    return _CACHE[key]


def population_means(spec, population="target", M=DEFAULT_M, seed=0):
    """Return ``(E_P[Y(1)], E_P[Y(0)])`` of a design.

    Parameters
    ----------
    spec : DgpSpec or str
    population : {"target", "source"}
    M : int, default=2**22
        Number of Monte Carlo covariate draws for binary designs.
    seed : int, default=0
    """
    spec = get_spec(spec)
    if population not in ("target", "source"):
        raise ValueError("population must be 'target' or 'source'")
    if M < 10 ** 6 and spec.kind != "linear":
        raise ValueError("ground truth needs at least 10**6 Monte Carlo draws")
    return _cached_means(spec, 0 if population == "target" else 1, int(M), int(seed))


def qmc_means(spec, population="target", m_log2=20, seed=0):
    """Population means by scrambled Sobol integration.

    Returns
    -------
    (psi1, psi0) : tuple of float
    """
    spec = get_spec(spec)
    s = 0 if population == "target" else 1
    u = qmc.Sobol(d=spec.p, scramble=True, seed=seed).random_base2(m_log2)
    x = norm.ppf(u) + spec.nu(s)
    return float(np.mean(spec.mean(x, 1, s))), float(np.mean(spec.mean(x, 0, s)))


def _tau(m, pm):
    tau = eval_phi(m, pm.psi1, pm.psi0)
    g = np.asarray(phi_gradient(m, pm.psi1, pm.psi0), dtype=float)
    var = float(g @ np.asarray(pm.cov) @ g)
    return float(tau), math.sqrt(max(var, 0.0))


def true_effects(spec, m, M=DEFAULT_M, seed=0):
    """True effect ``tau = Phi(E_P[Y(1)], E_P[Y(0)])`` in both populations.

    Parameters
    ----------
    spec : DgpSpec or str
    m : EffectMeasure or str
    M : int, default=2**22
        Monte Carlo draws per population (at least ``10**6``).
    seed : int, default=0

    Returns
    -------
    TrueEffect

    Examples
    --------
    >>> te = true_effects("appE_linear", "RD")
    >>> te.se_t
    0.0
    """
    spec = get_spec(spec)
    m = get_measure(m)
    pt = population_means(spec, "target", M, seed)
    ps = population_means(spec, "source", M, seed)
    tau_t, se_t = _tau(m, pt)
    tau_s, se_s = _tau(m, ps)
    return TrueEffect(m.name, tau_t, tau_s, se_t, se_s, pt, ps)
