"""Monte Carlo replication runner and summary metrics.

Each replication ``k`` draws its own data from the generator
``default_rng(SeedSequence(seed, spawn_key=(k,)))``, so results do not depend
on the order in which replications are executed or on the number of worker
processes. Means are aggregated with compensated summation over replications
in index order.
"""

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .. import estimators_mean as em
from ..exceptions import StudyError, TransportError
from ..measures import get_measure
from ..pipeline import NuisanceConfig, prepare_nuisances, resolve_estimator, run_estimators
from .dgp import generate, get_spec
from .truth import DEFAULT_M, true_effects

__all__ = [
    "CellSummary",
    "SimulationReport",
    "default_estimators",
    "run_replication",
    "run_study",
]

MEAN_ESTIMATORS = ("wht", "g_weighted", "g_transported", "ee", "os")
EFFECT_ESTIMATORS = (
    "effect/gamma_transported",
    "effect/gamma_weighted",
    "effect/ee",
    "effect/os:ee",
)
Z95 = 1.959963984540054


def default_estimators(spec):
    """Estimators run by default on a design."""
    spec = get_spec(spec)
    return MEAN_ESTIMATORS + (EFFECT_ESTIMATORS if spec.target_controls else ())


def _bind_oracles(spec, config):
    if config.outcome_model == "oracle" and config.oracle_outcomes is None:
        config = replace(config, oracle_outcomes=spec.oracle_outcomes())
    if config.ratio_model == "oracle" and config.oracle_ratio is None:
        config = replace(config, oracle_ratio=spec.density_ratio)
    return config


def _ee_residual(d, nf, use_pi_hat):
    means = em.ee_arm_means(d, nf, use_pi_hat)
    phi1, phi0 = em.eif_arms(d, nf, means.psi1, means.psi0, use_pi_hat)
    return max(abs(math.fsum(phi1) / d.N), abs(math.fsum(phi0) / d.N))


def run_replication(spec, N, rep, seed, estimators, measures, config, se="auto"):
    """Run every cell on replication ``rep``.

    Returns
    -------
    dict
        ``{"cells": [(estimator, measure, estimate, se, error_type), ...],
        "ee_residual": float or None, "os_ee_rd_diff": float or None,
        "error": str or None}``.
    """
    spec = get_spec(spec)
    config = _bind_oracles(spec, config)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))
    d = generate(spec, N, rng)
    out = {"cells": [], "ee_residual": None, "os_ee_rd_diff": None, "error": None}
    try:
        nf = prepare_nuisances(d, config, any(e.startswith("effect/") for e in estimators))
    except TransportError as exc:
        out["error"] = type(exc).__name__
        for e in estimators:
            for m in measures:
                out["cells"].append((e, m, None, None, type(exc).__name__))
        return out
    reps = run_estimators(d, estimators, measures, config, se=se, nf=nf)
    est = {}
    for r in reps:
        err = None if r.ok else r.diagnostics.get("error_type", "Error")
        out["cells"].append((r.estimator, r.measure, r.estimate, r.se, err))
        est[(r.estimator, r.measure)] = r.estimate
    if "ee" in estimators:
        out["ee_residual"] = _ee_residual(d, nf, config.use_pi_hat)
    os_rd, ee_rd = est.get(("os", "RD")), est.get(("ee", "RD"))
    if os_rd is not None and ee_rd is not None:
        out["os_ee_rd_diff"] = abs(os_rd - ee_rd)
    return out


def _replication_task(args):
    return run_replication(*args)


@dataclass
class CellSummary:
    """Monte Carlo summary of one (estimator, measure) cell.

    ``sd`` uses the population (``ddof=0``) convention so that
    ``rmse**2 == bias**2 + sd**2`` up to rounding. ``mc_se`` is the Monte
    Carlo standard error of the mean estimate, ``sd / sqrt(n_ok)``.
    """

    estimator: str
    measure: str
    truth: float
    n_ok: int
    failures: int
    mean: float = float("nan")
    bias: float = float("nan")
    sd: float = float("nan")
    rmse: float = float("nan")
    mc_se: float = float("nan")
    coverage: float = float("nan")
    n_se: int = 0
    failure_types: dict = field(default_factory=dict)

    @property
    def bias_z(self):
        """Bias in units of the Monte Carlo standard error."""
        if not self.mc_se > 0:
            return float("inf") if self.bias != 0 else 0.0
        return self.bias / self.mc_se

    def to_dict(self):
        out = {k: getattr(self, k) for k in (
            "estimator", "measure", "truth", "n_ok", "failures", "mean", "bias",
            "sd", "rmse", "mc_se", "coverage", "n_se",
        )}
        out["bias_z"] = self.bias_z
        out["failure_types"] = dict(sorted(self.failure_types.items()))
        return out


def _summarize(estimator, measure, truth, values, ses, errors):
    ok = [v for v in values if v is not None]
    fails = {}
    for e in errors:
        if e is not None:
            fails[e] = fails.get(e, 0) + 1
    cell = CellSummary(estimator, measure, truth, len(ok), sum(fails.values()),
                       failure_types=fails)
    if not ok:
        return cell
    k = len(ok)
    mean = math.fsum(ok) / k
    sd = math.sqrt(math.fsum((v - mean) ** 2 for v in ok) / k)
    cell.mean = mean
    cell.bias = mean - truth
    cell.sd = sd
    cell.rmse = math.sqrt(math.fsum((v - truth) ** 2 for v in ok) / k)
    cell.mc_se = sd / math.sqrt(k)
    pairs = [(v, s) for v, s in zip(values, ses) if v is not None and s is not None]
    cell.n_se = len(pairs)
    if pairs:
        cell.coverage = sum(abs(v - truth) <= Z95 * s for v, s in pairs) / len(pairs)
    return cell


@dataclass
class SimulationReport:
    """Result of :func:`run_study`.

    Attributes
    ----------
    spec : dict
    N, R, seed : int
    config : dict
        Resolved nuisance configuration and study options.
    version : str
    truth : dict
        ``{measure: TrueEffect.to_dict()}``.
    cells : list of CellSummary
    replicates : dict
        ``{(estimator, measure): list of estimate or None}`` in replication order.
    std_errors : dict
        Same layout as ``replicates`` for the standard errors.
    ee_residuals : list of float
        Per-replication ``max_a |mean phi_a(psi_a^EE)|``.
    os_ee_rd_diffs : list of float
        Per-replication ``|one_step(RD) - ee(RD)|``.
    """

    spec: dict
    N: int
    R: int
    seed: int
    config: dict
    version: str
    truth: dict
    cells: list
    replicates: dict
    std_errors: dict
    ee_residuals: list
    os_ee_rd_diffs: list

    def cell(self, estimator, measure):
        est = resolve_estimator(estimator)
        name = get_measure(measure).name
        for c in self.cells:
            if c.estimator == est and c.measure == name:
                return c
        raise KeyError(f"no cell ({estimator}, {measure}) in this report")

    def to_dict(self, include_replicates=False):
        out = {
            "version": self.version,
            "spec": self.spec,
            "N": self.N,
            "R": self.R,
            "seed": self.seed,
            "config": self.config,
            "truth": self.truth,
            "cells": [c.to_dict() for c in self.cells],
            "ee_residual_max": max(self.ee_residuals) if self.ee_residuals else None,
            "os_ee_rd_diff_max": max(self.os_ee_rd_diffs) if self.os_ee_rd_diffs else None,
        }
        if include_replicates:
            out["replicates"] = [
                {"estimator": e, "measure": m, "estimates": v,
                 "std_errors": self.std_errors[(e, m)]}
                for (e, m), v in self.replicates.items()
            ]
        return out

    def to_json(self, include_replicates=False):
        return json.dumps(_clean(self.to_dict(include_replicates)), indent=2, sort_keys=True,
                          allow_nan=False)

    def tidy_rows(self):
        """One row per estimator, measure and metric."""
        rows = []
        for c in self.cells:
            d = c.to_dict()
            for metric in ("truth", "mean", "bias", "sd", "rmse", "mc_se", "bias_z",
                           "coverage", "n_ok", "failures"):
                rows.append((c.estimator, c.measure, metric, d[metric]))
        return rows

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["estimator", "measure", "metric", "value"])
        for e, m, metric, v in self.tidy_rows():
            w.writerow([e, m, metric, repr(float(v))])
        return buf.getvalue()

    def replicates_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replication", "estimator", "measure", "estimate", "std_error"])
        for (e, m), vals in self.replicates.items():
            for k, (v, s) in enumerate(zip(vals, self.std_errors[(e, m)])):
                w.writerow([k, e, m, "" if v is None else repr(v), "" if s is None else repr(s)])
        return buf.getvalue()

    def write(self, out_dir, replicates=False):
        """Write ``report.json`` and ``summary.csv`` (and ``replicates.csv``).

        Returns
        -------
        list of str
            Paths written.
        """
        os.makedirs(out_dir, exist_ok=True)
        paths = [os.path.join(out_dir, "report.json"), os.path.join(out_dir, "summary.csv")]
        with open(paths[0], "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")
        with open(paths[1], "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())
        if replicates:
            paths.append(os.path.join(out_dir, "replicates.csv"))
            with open(paths[-1], "w", encoding="utf-8") as fh:
                fh.write(self.replicates_csv())
        return paths

    def summary_table(self):
        """Fixed-width text table for terminals."""
        head = f"{'estimator':<28}{'measure':<8}{'truth':>10}{'bias':>11}{'z':>8}" \
               f"{'sd':>10}{'rmse':>10}{'cover':>7}{'fail':>6}"
        lines = [head, "-" * len(head)]
        for c in self.cells:
            lines.append(
                f"{c.estimator:<28}{c.measure:<8}{c.truth:>10.4g}{c.bias:>11.3g}"
                f"{c.bias_z:>8.2f}{c.sd:>10.3g}{c.rmse:>10.3g}{c.coverage:>7.3f}{c.failures:>6d}"
            )
        return "\n".join(lines)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _version():
    from .. import __version__

    return __version__


def run_study(spec, N=5000, R=300, estimators=None, measures=("RD", "RR", "OR"), seed=0,
              config=None, threads=1, se="auto", truth_M=DEFAULT_M,
              max_failure_rate=0.2, target_controls=None):
    """Run a Monte Carlo study.

    Parameters
    ----------
    spec : DgpSpec or str
    N : int, default=5000
        Pooled sample size per replication.
    R : int, default=300
        Number of replications.
    estimators : sequence of str, optional
        Defaults to :func:`default_estimators`.
    measures : sequence of str, default=("RD", "RR", "OR")
    seed : int, default=0
    config : NuisanceConfig, optional
        Defaults to the design's outcome link. ``"oracle"`` outcome or ratio
        models are bound to the design's true functions.
    threads : int, default=1
        Worker processes.
    se : {"auto", "sandwich", "eif", "oracle", "none"}
    truth_M : int
        Monte Carlo draws for the ground truth of binary designs.
    max_failure_rate : float, default=0.2
    target_controls : bool, optional
        Overrides the design's target-control setting.

    Returns
    -------
    SimulationReport

    Raises
    ------
    StudyError
        If more than ``max_failure_rate`` of the replications fail for any
        cell; the partial report is attached as ``diagnostics["report"]``.
    ValueError
        If an effect estimator is requested on a design without
        target-control outcomes.
    """
    spec = get_spec(spec)
    if target_controls is not None:
        spec = spec.with_target_controls(target_controls)
    if R < 1 or N < 1:
        raise ValueError("N and R must be positive")
    estimators = tuple(resolve_estimator(e) for e in (estimators or default_estimators(spec)))
    measures = tuple(get_measure(m).name for m in measures)
    if not spec.target_controls and any(e.startswith("effect/") for e in estimators):
        raise ValueError(
            f"spec {spec.name} does not expose target-control outcomes; effect/ "
            "estimators are not applicable (enable target controls)"
        )
    config = config or NuisanceConfig(link=spec.link)
    base_config = replace(config, oracle_outcomes=None, oracle_ratio=None)
    tasks = [(spec, N, k, seed, estimators, measures, base_config, se) for k in range(R)]
    if threads and threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_replication_task, tasks, chunksize=max(1, R // (4 * threads))))
    else:
        results = [_replication_task(t) for t in tasks]

    truth = {m: true_effects(spec, m, truth_M) for m in measures}
    keys = [(e, m) for e in estimators for m in measures]
    values = {k: [] for k in keys}
    ses = {k: [] for k in keys}
    errors = {k: [] for k in keys}
    for res in results:
        seen = {(e, m): (v, s, err) for e, m, v, s, err in res["cells"]}
        for k in keys:
            v, s, err = seen[k]
            values[k].append(v)
            ses[k].append(s)
            errors[k].append(err)
    cells = [
        _summarize(e, m, truth[m].tau_t, values[(e, m)], ses[(e, m)], errors[(e, m)])
        for e, m in keys
    ]
    cfg = base_config.to_dict()
    cfg.update({"estimators": list(estimators), "measures": list(measures), "se": se,
                "truth_M": truth_M})
    report = SimulationReport(
        spec=spec.to_dict(),
        N=N,
        R=R,
        seed=seed,
        config=cfg,
        version=_version(),
        truth={m: t.to_dict() for m, t in truth.items()},
        cells=cells,
        replicates=values,
        std_errors=ses,
        ee_residuals=[r["ee_residual"] for r in results if r["ee_residual"] is not None],
        os_ee_rd_diffs=[r["os_ee_rd_diff"] for r in results if r["os_ee_rd_diff"] is not None],
    )
    bad = [c for c in cells if c.failures > max_failure_rate * R]
    if bad:
        raise StudyError(
            "replication failures exceed {:.0%} for: {}".format(
                max_failure_rate,
                ", ".join(f"{c.estimator}/{c.measure} ({c.failures}/{R}: {c.failure_types})"
                          for c in bad),
            ),
            {"report": report, "cells": [c.to_dict() for c in bad]},
        )
    return report
