"""Data-generating processes for the simulation studies.

Every design draws ``S ~ Bernoulli(alpha)``, ``X | S=s ~ N(nu_s, I_p)`` and,
in the trial, ``A ~ Bernoulli(pi)``. Potential outcomes follow a
design-specific conditional mean ``mu_s^(a)(x)`` with ``V = [1, x]``:

``linear`` (``appE_linear``, ``exp2_rd``)
    ``Y(a) = V' beta_s^(a) + eps`` with ``eps ~ N(0, noise_sd^2)`` and
    ``beta_T^(a) = beta_S^(a) + theta``.
``exp1``
    ``P(Y(a)=1 | V) = sigmoid(beta0'V * (V'beta1)^a)`` in both populations.
``exp2_rr``
    ``P(Y(a)=1 | V, S=s) = sigmoid(V'beta_s) * sigmoid(V'gamma)^a``.
``exp2_or``
    ``P(Y(a)=1 | V, S=s) = sigmoid(V'(beta_s + a gamma))``.

Target rows carry the control potential outcome ``Y(0)`` with ``A = 0`` when
target-control outcomes are enabled, and missing ``A``/``Y`` otherwise.
"""

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Dict

import numpy as np
from scipy.special import expit

from ..data import StudyData

__all__ = [
    "DgpSpec",
    "SPEC_NAMES",
    "load_specs",
    "get_spec",
    "generate",
    "Latent",
]

SPEC_NAMES = ("exp1_nonlinear", "exp2_rd", "exp2_rr", "exp2_or", "appE_linear")
_SPEC_ALIASES = {"exp1": "exp1_nonlinear", "appe": "appE_linear", "appe_linear": "appE_linear"}


@dataclass(frozen=True)
class DgpSpec:
    """Parameters of a simulation design.

    Parameters
    ----------
    name : str
    kind : {"linear", "exp1", "exp2_rr", "exp2_or"}
    p : int
        Number of covariates.
    nu_s, nu_t : tuple of float
        Covariate means in the trial and target populations.
    params : dict
        Design coefficients (length ``p + 1`` vectors, intercept first).
    alpha : float, default=0.3
    pi : float, default=0.5
    noise_sd : float, default=1.0
        Residual standard deviation of continuous designs.
    target_controls : bool, default=False
        Expose target-control outcomes to the estimators.
    link : {"auto", "identity", "logit"}, default="auto"
        Outcome-regression link used by studies on this design.
    version : str
    """

    name: str
    kind: str
    p: int
    nu_s: tuple
    nu_t: tuple
    params: Dict = field(default_factory=dict, compare=False)
    alpha: float = 0.3
    pi: float = 0.5
    noise_sd: float = 1.0
    target_controls: bool = False
    link: str = "auto"
    version: str = "1"

    def __post_init__(self):
        if not (0 < self.alpha < 1 and 0 < self.pi < 1):
            raise ValueError("alpha and pi must lie in (0, 1)")
        if len(self.nu_s) != self.p or len(self.nu_t) != self.p:
            raise ValueError("population means must have length p")
        for key, vec in self.params.items():
            if len(vec) != self.p + 1:
                raise ValueError(f"coefficient {key!r} must have length p + 1")
        object.__setattr__(self, "nu_s", tuple(float(v) for v in self.nu_s))
        object.__setattr__(self, "nu_t", tuple(float(v) for v in self.nu_t))
        object.__setattr__(
            self, "params", {k: tuple(float(v) for v in vec) for k, vec in self.params.items()}
        )

    @property
    def binary(self):
        return self.kind != "linear"

    def nu(self, s):
        return np.asarray(self.nu_s if s == 1 else self.nu_t)

    def _coef(self, key):
        return np.asarray(self.params[key])

    def mean(self, x, a, s):
        """Conditional mean ``E[Y(a) | X=x, S=s]``.

        Parameters
        ----------
        x : ndarray of shape (N, p)
        a : {0, 1}
        s : {0, 1}
            Population (1 trial, 0 target).
        """
        x = np.asarray(x, dtype=float).reshape(-1, self.p)
        V = np.column_stack([np.ones(x.shape[0]), x])
        if self.kind == "linear":
            beta = self._coef(f"beta{a}")
            if s == 0 and "theta" in self.params:
                beta = beta + self._coef("theta")
            return V @ beta
        if self.kind == "exp1":
            eta = V @ self._coef("beta0")
            if a == 1:
                eta = eta * (V @ self._coef("beta1"))
            return expit(eta)
        beta = self._coef("beta_s" if s == 1 else "beta_t")
        gamma = self._coef("gamma")
        if self.kind == "exp2_rr":
            base = expit(V @ beta)
            return base * expit(V @ gamma) if a == 1 else base
        if self.kind == "exp2_or":
            return expit(V @ (beta + a * gamma))
        raise ValueError(f"unknown design kind {self.kind!r}")

    def density_ratio(self, x):
        """True ratio ``p_T(x) / p_S(x)`` of the covariate densities."""
        x = np.asarray(x, dtype=float).reshape(-1, self.p)
        nt, ns = np.asarray(self.nu_t), np.asarray(self.nu_s)
        return np.exp(x @ (nt - ns) - 0.5 * (nt @ nt - ns @ ns))

    def oracle_outcomes(self):
        """Callables for the true trial means and target control mean."""
        return {
            1: lambda x: self.mean(x, 1, 1),
            0: lambda x: self.mean(x, 0, 1),
            "t0": lambda x: self.mean(x, 0, 0),
        }

    def with_target_controls(self, flag=True):
        return replace(self, target_controls=bool(flag))

    def to_dict(self):
        return {
            "name": self.name,
            "kind": self.kind,
            "p": self.p,
            "nu_s": list(self.nu_s),
            "nu_t": list(self.nu_t),
            "params": {k: list(v) for k, v in self.params.items()},
            "alpha": self.alpha,
            "pi": self.pi,
            "noise_sd": self.noise_sd,
            "target_controls": self.target_controls,
            "link": self.link,
            "version": self.version,
        }


def load_specs():
    """Read the frozen design parameters shipped with the package."""
    text = resources.files(__package__).joinpath("specs.json").read_text(encoding="utf-8")
    raw = json.loads(text)
    out = {}
    for name, cfg in raw["specs"].items():
        out[name] = DgpSpec(name=name, version=raw["version"], **cfg)
    return out


_SPECS = None


def get_spec(name):
    """Look up a design by name (``"exp1"`` is accepted for ``exp1_nonlinear``).

    Raises
    ------
    KeyError
        For unknown names.
    """
    global _SPECS
    if isinstance(name, DgpSpec):
        return name
    if _SPECS is None:
        _SPECS = load_specs()
    key = _SPEC_ALIASES.get(str(name).lower(), str(name))
    if key not in _SPECS:
        raise KeyError(
            f"unknown spec {name!r}; valid names are {', '.join(SPEC_NAMES)} (alias exp1)"
        )
    return _SPECS[key]


@dataclass(frozen=True)
class Latent:
    """Potential outcomes and true conditional means of a generated sample."""

    y1: np.ndarray
    y0: np.ndarray
    mu1: np.ndarray
    mu0: np.ndarray


def _draw(spec, rng, mean):
    if spec.binary:
        return (rng.random(mean.shape[0]) < mean).astype(float)
    return mean + spec.noise_sd * rng.standard_normal(mean.shape[0])


def generate(spec, N, seed=None, target_controls=None, return_latent=False):
    """Draw a pooled sample of size ``N`` from a design.

    Parameters
    ----------
    spec : DgpSpec or str
    N : int
    seed : int, SeedSequence or Generator, optional
    target_controls : bool, optional
        Overrides ``spec.target_controls``.
    return_latent : bool, default=False
        Also return the potential outcomes and true conditional means.

    Returns
    -------
    StudyData or (StudyData, Latent)
    """
    spec = get_spec(spec)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tc = spec.target_controls if target_controls is None else bool(target_controls)
    s = (rng.random(N) < spec.alpha).astype(np.int8)
    z = rng.standard_normal((N, spec.p))
    x = z + np.where(s[:, None] == 1, np.asarray(spec.nu_s), np.asarray(spec.nu_t))
    treat = (rng.random(N) < spec.pi).astype(float)
    mu1 = np.empty(N)
    mu0 = np.empty(N)
    for pop in (0, 1):
        rows = s == pop
        mu1[rows] = spec.mean(x[rows], 1, pop)
        mu0[rows] = spec.mean(x[rows], 0, pop)
    y1 = _draw(spec, rng, mu1)
    y0 = _draw(spec, rng, mu0)
    src = s == 1
    a = np.where(src, treat, 0.0 if tc else np.nan)
    y = np.where(src, np.where(treat == 1, y1, y0), y0 if tc else np.nan)
    d = StudyData(s, x, a, y, pi=spec.pi)
    if return_latent:
        return d, Latent(y1, y0, mu1, mu0)
    return d
