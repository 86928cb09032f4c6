"""Command-line interface.

Subcommands
-----------
``estimate``
    Run estimators on a pooled CSV file.
``simulate``
    Run a Monte Carlo study on a named design.
``truth``
    Print the true target and trial effects of a design.
``selfcheck``
    Run the measure-registry checks and the discrete-population oracle.

Exit codes follow ``sysexits``: 0 success, 1 fatal error, 2 partial failure
(some cells failed), 64 usage error, 66 unreadable input file.

Options may also be given in a file passed with ``--config``, either a JSON
object or ``key=value`` lines using the long option names (``n = 5000``,
``measures = RD,RR``). Command-line flags take precedence over the file.
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .data import CsvSchema, load_csv, profile
from .exceptions import (
    BootstrapError,
    DataValidationError,
    StudyError,
    TransportError,
)
from .measures import get_measure, registry_selfcheck
from .pipeline import NuisanceConfig, bootstrap_many, resolve_estimator, run_estimators

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_FATAL", "EXIT_PARTIAL", "EXIT_USAGE",
           "EXIT_NOINPUT"]

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2
EXIT_USAGE = 64
EXIT_NOINPUT = 66

DEFAULTS = {
    "estimate": {
        "col_s": "S", "col_a": "A", "col_y": "Y", "cols_x": None, "pi": 0.5,
        "measures": "RD", "estimators": "ee", "boot": 0, "level": 0.95, "seed": 0,
        "ratio_clip": None, "link": "auto", "se": "auto", "crossfit": 0, "out": None,
    },
    "simulate": {
        "n": 5000, "reps": 300, "seed": 0, "threads": 1, "measures": "RD,RR,OR",
        "estimators": None, "se": "auto", "link": None, "ratio_clip": None,
        "outcome_model": "fit", "ratio_model": "logistic", "truth_draws": None,
        "replicates": False, "out": None,
    },
    "truth": {"measures": "RD,RR,OR", "seed": 0, "truth_draws": None, "out": None},
    "selfcheck": {"seed": 0, "out": None},
}


class UsageError(Exception):
    """Invalid combination of options."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _common(p, *names):
    if "seed" in names:
        p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    if "measures" in names:
        p.add_argument("--measure", "--measures", dest="measures", default=None,
                       help="comma-separated measure names, e.g. RD,RR,OR")
    if "out" in names:
        p.add_argument("--out", default=None,
                       help="write files to this directory instead of JSON on stdout")
    p.add_argument("--config", default=None,
                   help="JSON or key=value file of defaults, overridden by flags")


def build_parser():
    """Build the argument parser."""
    parser = _Parser(
        prog="causal-transport",
        description="Transport causal measures from a trial to a target population.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("estimate", help="run estimators on a CSV file")
    p.add_argument("--data", default=None, help="pooled CSV file with a header row")
    p.add_argument("--col-s", dest="col_s", default=None, help="population column (1 trial)")
    p.add_argument("--col-a", dest="col_a", default=None, help="treatment column")
    p.add_argument("--col-y", dest="col_y", default=None, help="outcome column")
    p.add_argument("--cols-x", dest="cols_x", default=None,
                   help="comma-separated covariate columns (default: all other columns)")
    p.add_argument("--pi", type=float, default=None, help="trial assignment probability")
    p.add_argument("--estimator", "--estimators", dest="estimators", default=None,
                   help="comma-separated estimator identifiers")
    p.add_argument("--boot", type=_positive_int, default=None,
                   help="stratified bootstrap replicates (0 disables, else >= 100)")
    p.add_argument("--level", type=float, default=None, help="confidence level")
    p.add_argument("--ratio-clip", dest="ratio_clip", type=float, default=None)
    p.add_argument("--link", choices=("auto", "identity", "logit"), default=None)
    p.add_argument("--se", choices=("auto", "sandwich", "eif", "none"), default=None)
    p.add_argument("--crossfit", type=_positive_int, default=None,
                   help="number of cross-fitting folds (0 fits on the full sample)")
    _common(p, "seed", "measures", "out")

    p = sub.add_parser("simulate", help="run a Monte Carlo study on a design")
    p.add_argument("--spec", default=None, help="design name, e.g. appE_linear or exp1")
    p.add_argument("--n", type=_positive_int, default=None, help="pooled sample size")
    p.add_argument("--reps", type=_positive_int, default=None, help="replications")
    p.add_argument("--threads", type=_positive_int, default=None, help="worker processes")
    p.add_argument("--estimator", "--estimators", dest="estimators", default=None)
    p.add_argument("--se", choices=("auto", "sandwich", "eif", "oracle", "none"),
                   default=None)
    p.add_argument("--link", choices=("auto", "identity", "logit"), default=None,
                   help="outcome link (default: the design's)")
    p.add_argument("--ratio-clip", dest="ratio_clip", type=float, default=None)
    p.add_argument("--outcome-model", dest="outcome_model",
                   choices=("fit", "zero", "oracle"), default=None)
    p.add_argument("--ratio-model", dest="ratio_model",
                   choices=("logistic", "one", "oracle"), default=None)
    p.add_argument("--truth-draws", dest="truth_draws", type=_positive_int, default=None,
                   help="Monte Carlo draws for the ground truth of binary designs")
    p.add_argument("--replicates", action="store_const", const=True, default=None,
                   help="also write per-replication estimates")
    _common(p, "seed", "measures", "out")

    p = sub.add_parser("truth", help="true effects of a design")
    p.add_argument("--spec", default=None)
    p.add_argument("--truth-draws", dest="truth_draws", type=_positive_int, default=None)
    _common(p, "seed", "measures", "out")

    p = sub.add_parser("selfcheck", help="measure registry and oracle checks")
    _common(p, "seed", "out")
    return parser


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _read_config(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise UsageError(f"config file {path}: expected a JSON object")
        return raw
    out = {}
    for k, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config file {path}, line {k}: expected key=value")
        key, value = (t.strip() for t in line.split("=", 1))
        out[key] = value
    return out


def _coerce(parser, command, key, value):
    sub = parser._subparsers._group_actions[0].choices[command]
    for action in sub._actions:
        if action.dest != key:
            continue
        if isinstance(action, argparse._StoreConstAction):
            return _bool(value)
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        if action.type is not None and isinstance(value, str):
            try:
                value = action.type(value)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config key {key!r}: {value!r} is not one of {action.choices}")
        return value
    raise UsageError(f"unknown config key {key!r} for '{command}'")


def resolve_options(parser, args):
    """Merge built-in defaults, the ``--config`` file and explicit flags."""
    cmd = args.command
    opts = dict(DEFAULTS[cmd])
    if cmd in ("simulate", "truth"):
        opts.setdefault("spec", None)
    if cmd == "estimate":
        opts.setdefault("data", None)
    if args.config:
        for key, value in _read_config(args.config).items():
            key = key.replace("-", "_")
            opts[key] = _coerce(parser, cmd, key, value)
    for key, value in vars(args).items():
        if key in ("command", "config"):
            continue
        if value is not None:
            opts[key] = value
    return opts


def _split(text):
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return [str(t).strip() for t in text if str(t).strip()]
    return [t.strip() for t in str(text).split(",") if t.strip()]


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dumps(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False)


def _emit(payload, out, filename, stdout):
    text = _dumps(payload) + "\n"
    if out:
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, filename)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        return path
    stdout.write(text)
    return None


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _infer_covariates(path, schema_cols):
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    return [h.strip() for h in header if h.strip() and h.strip() not in schema_cols]


def cmd_estimate(opts, stdout, stderr):
    if not opts.get("data"):
        raise UsageError("estimate needs --data")
    path = opts["data"]
    cols_x = _split(opts["cols_x"])
    if not cols_x:
        cols_x = _infer_covariates(path, (opts["col_s"], opts["col_a"], opts["col_y"]))
        if not cols_x:
            raise UsageError("no covariate columns; pass --cols-x")
    schema = CsvSchema(opts["col_s"], opts["col_a"], opts["col_y"], tuple(cols_x))
    try:
        d = load_csv(path, schema, pi=opts["pi"])
    except DataValidationError as exc:
        raise _InputError(f"{path}: {exc}") from None
    try:
        estimators = [resolve_estimator(e) for e in _split(opts["estimators"])]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    measures = [get_measure(m).name for m in _split(opts["measures"])]
    if not estimators or not measures:
        raise UsageError("name at least one estimator and one measure")
    boot = int(opts["boot"])
    if boot and boot < 100:
        raise UsageError("--boot needs at least 100 replicates (or 0 to disable)")
    if not 0 < opts["level"] < 1:
        raise UsageError("--level must lie in (0, 1)")
    config = NuisanceConfig(link=opts["link"], ratio_clip=opts["ratio_clip"],
                            crossfit=int(opts["crossfit"]), crossfit_seed=int(opts["seed"]))
    reports = run_estimators(d, estimators, measures, config, se=opts["se"])
    partial = False
    for rep in reports:
        if not rep.ok:
            partial = True
            stderr.write(f"{rep.estimator}/{rep.measure}: {rep.diagnostics['error']}\n")
    if boot:
        ok = [r for r in reports if r.ok]
        cells = sorted({r.estimator for r in ok}), sorted({r.measure for r in ok})
        if ok:
            res = bootstrap_many(d, cells[0], cells[1], boot, opts["level"], opts["seed"],
                                 config, raise_on_failure=False)
            for rep in ok:
                b = res.get((rep.estimator, rep.measure))
                if b is None:
                    partial = True
                    rep.diagnostics["bootstrap_error"] = "too many failed bootstrap replicates"
                    stderr.write(f"{rep.estimator}/{rep.measure}: bootstrap failed\n")
                    continue
                rep.ci, rep.level = b.ci, b.level
                rep.diagnostics["bootstrap_se"] = b.se
                rep.diagnostics["bootstrap_failures"] = b.failures
    payload = {
        "version": __version__,
        "seed": opts["seed"],
        "config": dict(
            {k: v for k, v in opts.items() if k != "out"},
            cols_x=list(cols_x), estimators=estimators, measures=measures,
        ),
        "data": profile(d).to_dict(),
        "results": [r.to_dict() for r in reports],
    }
    _emit(payload, opts["out"], "estimates.json", stdout)
    return EXIT_PARTIAL if partial else EXIT_OK


def _nuisance_config(opts, spec):
    link = opts["link"] or spec.link
    return NuisanceConfig(link=link, ratio_clip=opts["ratio_clip"],
                          outcome_model=opts["outcome_model"],
                          ratio_model=opts["ratio_model"])


def _get_spec(name):
    from .simlab import get_spec

    if not name:
        raise UsageError("--spec is required")
    try:
        return get_spec(name)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None


def cmd_simulate(opts, stdout, stderr):
    from .simlab import run_study
    from .simlab.truth import DEFAULT_M

    spec = _get_spec(opts["spec"])
    estimators = _split(opts["estimators"])
    measures = _split(opts["measures"])
    kwargs = dict(
        N=int(opts["n"]), R=int(opts["reps"]), estimators=estimators, measures=measures,
        seed=int(opts["seed"]), config=_nuisance_config(opts, spec),
        threads=int(opts["threads"]), se=opts["se"],
        truth_M=int(opts["truth_draws"] or DEFAULT_M),
    )
    if kwargs["N"] < 1 or kwargs["R"] < 1:
        raise UsageError("--n and --reps must be positive")
    code = EXIT_OK
    try:
        report = run_study(spec, **kwargs)
    except StudyError as exc:
        report = exc.diagnostics.get("report")
        stderr.write(f"simulate: {exc}\n")
        if report is None:
            return EXIT_FATAL
        code = EXIT_PARTIAL
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if opts["out"]:
        for path in report.write(opts["out"], replicates=bool(opts["replicates"])):
            stderr.write(f"wrote {path}\n")
        stdout.write(report.summary_table() + "\n")
    else:
        stdout.write(report.to_json(include_replicates=bool(opts["replicates"])) + "\n")
        stderr.write(report.summary_table() + "\n")
    return code


def cmd_truth(opts, stdout, stderr):
    from .simlab.truth import DEFAULT_M, true_effects

    spec = _get_spec(opts["spec"])
    M = int(opts["truth_draws"] or DEFAULT_M)
    try:
        effects = {m: true_effects(spec, m, M, int(opts["seed"])).to_dict()
                   for m in (get_measure(x).name for x in _split(opts["measures"]))}
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    payload = {
        "version": __version__,
        "seed": opts["seed"],
        "config": {k: v for k, v in opts.items() if k != "out"},
        "spec": spec.to_dict(),
        "truth": effects,
    }
    _emit(payload, opts["out"], "truth.json", stdout)
    return EXIT_OK


def cmd_selfcheck(opts, stdout, stderr):
    from .oracle import discrete_oracle_check

    registry = registry_selfcheck(seed=int(opts["seed"]))
    oracle = discrete_oracle_check()
    ok = all(r["ok"] for r in registry) and oracle.passed(1e-10)
    payload = {
        "version": __version__,
        "seed": opts["seed"],
        "config": {k: v for k, v in opts.items() if k != "out"},
        "registry": registry,
        "oracle": oracle.to_dict(),
        "ok": ok,
    }
    _emit(payload, opts["out"], "selfcheck.json", stdout)
    stderr.write("selfcheck " + ("passed" if ok else "FAILED") + "\n")
    return EXIT_OK if ok else EXIT_FATAL


class _InputError(Exception):
    """An input file could not be read or parsed."""


_COMMANDS = {
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "truth": cmd_truth,
    "selfcheck": cmd_selfcheck,
}


def main(argv=None, stdout=None, stderr=None):
    """Entry point; returns the process exit code."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(stderr)
        return EXIT_USAGE
    try:
        opts = resolve_options(parser, args)
        return _COMMANDS[args.command](opts, stdout, stderr)
    except UsageError as exc:
        stderr.write(f"{parser.prog} {args.command}: error: {exc}\n")
        return EXIT_USAGE
    except KeyError as exc:
        # Unknown measure or estimator names.
        stderr.write(f"{parser.prog} {args.command}: error: {exc.args[0] if exc.args else exc}\n")
        return EXIT_USAGE
    except (_InputError, OSError) as exc:
        stderr.write(f"{parser.prog} {args.command}: {exc}\n")
        return EXIT_NOINPUT
    except (TransportError, BootstrapError) as exc:
        stderr.write(f"{parser.prog} {args.command}: fatal: {type(exc).__name__}: {exc}\n")
        return EXIT_FATAL


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
