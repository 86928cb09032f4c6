"""Containers, validation and CSV input/output for pooled trial and target samples.

The pooled sample stacks ``n`` randomized-trial (source) rows with ``m``
target rows. Every row carries the population indicator ``s`` and covariates
``x``. Treatment ``a`` and outcome ``y`` are observed on source rows and,
optionally, on target rows that are controls (``a == 0``).
"""

import csv
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .exceptions import CsvSchemaError, DataValidationError

__all__ = [
    "StudyData",
    "CsvSchema",
    "DataProfile",
    "load_csv",
    "write_csv",
    "profile",
    "concat",
]


def _frozen(arr):
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StudyData:
    """Pooled observations from a trial (``s == 1``) and a target sample (``s == 0``).

    Parameters
    ----------
    s : array_like of shape (N,)
        Population indicator, 1 for trial rows and 0 for target rows.
    x : array_like of shape (N, p)
        Covariates.
    a : array_like of shape (N,)
        Treatment indicator. Must be 0 or 1 on trial rows. On target rows it
        is either NaN (unobserved) or 0 (observed control).
    y : array_like of shape (N,)
        Outcome, observed exactly where ``a`` is.
    pi : float, default=0.5
        Known trial assignment probability ``P(A=1 | S=1)``.
    feature_names : sequence of str, optional

    Attributes
    ----------
    n, m, N : int
        Trial size, target size and pooled size.
    alpha_hat : float
        ``n / N``.
    has_target_controls : bool
        Whether any target row carries an observed control outcome.

    Raises
    ------
    DataValidationError
        When a structural invariant is violated; the error names the row.
    """

    s: np.ndarray
    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    pi: float = 0.5
    feature_names: Optional[Sequence[str]] = None
    _validated: bool = field(default=True, repr=False)

    def __post_init__(self):
        s = np.asarray(self.s)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        a = np.asarray(self.a, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if s.ndim != 1:
            raise DataValidationError("s must be one-dimensional")
        N = s.shape[0]
        for name, arr in (("x", x), ("a", a), ("y", y)):
            if arr.shape[0] != N:
                raise DataValidationError(
                    f"{name} has {arr.shape[0]} rows but s has {N}"
                )
        if self._validated:
            _validate(s, x, a, y, float(self.pi))
        names = self.feature_names
        if names is None:
            names = tuple(f"x{j + 1}" for j in range(x.shape[1]))
        elif len(names) != x.shape[1]:
            raise DataValidationError("feature_names length does not match x")
        object.__setattr__(self, "s", _frozen(s.astype(np.int8)))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "pi", float(self.pi))
        object.__setattr__(self, "feature_names", tuple(names))

    # ------------------------------------------------------------------
    @property
    def N(self):
        return int(self.s.shape[0])

    @property
    def n(self):
        return int(np.sum(self.s == 1))

    @property
    def m(self):
        return self.N - self.n

    @property
    def p(self):
        return int(self.x.shape[1])

    @property
    def alpha_hat(self):
        return self.n / self.N

    @property
    def source(self):
        """Boolean mask of trial rows."""
        return self.s == 1

    @property
    def target(self):
        """Boolean mask of target rows."""
        return self.s == 0

    @property
    def target_controls(self):
        """Boolean mask of target rows with an observed control outcome."""
        return (self.s == 0) & np.isfinite(self.y)

    @property
    def has_target_controls(self):
        return bool(np.any(self.target_controls))

    @property
    def treated(self):
        """Boolean mask of trial rows with ``a == 1``."""
        return (self.s == 1) & (self.a == 1)

    @property
    def controls(self):
        """Boolean mask of trial rows with ``a == 0``."""
        return (self.s == 1) & (self.a == 0)

    @property
    def design(self):
        """Design matrix ``V = [1, X]`` of shape (N, p + 1)."""
        return np.column_stack([np.ones(self.N), self.x])

    def is_binary_outcome(self):
        """True if every observed outcome is 0 or 1."""
        obs = self.y[np.isfinite(self.y)]
        return bool(np.all((obs == 0) | (obs == 1)))

    def strata(self):
        """Integer stratum label: 0 for (S=1, A=0), 1 for (S=1, A=1), 2 for S=0."""
        lab = np.full(self.N, 2, dtype=np.int64)
        lab[self.controls] = 0
        lab[self.treated] = 1
        return lab

    # ------------------------------------------------------------------
    def take(self, idx, validate=False):
        """Return the rows ``idx`` as a new :class:`StudyData`."""
        idx = np.asarray(idx)
        return StudyData(
            self.s[idx],
            self.x[idx],
            self.a[idx],
            self.y[idx],
            pi=self.pi,
            feature_names=self.feature_names,
            _validated=validate,
        )

    def without_target_controls(self):
        """Hide any target-control outcomes."""
        a = self.a.copy()
        y = self.y.copy()
        a[self.target] = np.nan
        y[self.target] = np.nan
        return StudyData(self.s, self.x, a, y, self.pi, self.feature_names)

    def split_by_s(self):
        """Return ``(source, target)`` sub-samples."""
        return (
            self.take(np.flatnonzero(self.source)),
            self.take(np.flatnonzero(self.target)),
        )

    def __len__(self):
        return self.N

    def __repr__(self):
        return (
            f"StudyData(n={self.n}, m={self.m}, p={self.p}, pi={self.pi}, "
            f"target_controls={int(np.sum(self.target_controls))})"
        )


def _validate(s, x, a, y, pi):
    if not (0.0 < pi < 1.0):
        raise DataValidationError(f"pi must lie in (0, 1), got {pi}")
    bad = ~np.isin(s, (0, 1))
    if np.any(bad):
        r = int(np.flatnonzero(bad)[0])
        raise DataValidationError(f"S must be 0 or 1, found {s[r]!r}", row=r)
    bad = ~np.all(np.isfinite(x), axis=1)
    if np.any(bad):
        raise DataValidationError(
            "covariates must be finite and non-missing", row=int(np.flatnonzero(bad)[0])
        )
    src = s == 1
    bad = src & ~((a == 0) | (a == 1))
    if np.any(bad):
        raise DataValidationError(
            "trial rows need A in {0, 1}", row=int(np.flatnonzero(bad)[0])
        )
    bad = src & ~np.isfinite(y)
    if np.any(bad):
        raise DataValidationError(
            "trial rows need a finite outcome", row=int(np.flatnonzero(bad)[0])
        )
    tgt = ~src
    bad = tgt & (a == 1)
    if np.any(bad):
        raise DataValidationError(
            "target rows never carry treatment (A=1)", row=int(np.flatnonzero(bad)[0])
        )
    bad = tgt & ~np.isnan(a) & (a != 0)
    if np.any(bad):
        raise DataValidationError(
            "target rows may only carry A=0 or a missing A", row=int(np.flatnonzero(bad)[0])
        )
    bad = tgt & (np.isnan(a) != np.isnan(y))
    if np.any(bad):
        raise DataValidationError(
            "target-control rows need both A=0 and an outcome",
            row=int(np.flatnonzero(bad)[0]),
        )
    bad = tgt & ~np.isnan(y) & ~np.isfinite(y)
    if np.any(bad):
        raise DataValidationError("outcome must be finite", row=int(np.flatnonzero(bad)[0]))
    n = int(np.sum(src))
    if n == 0:
        raise DataValidationError("data contain no trial (S=1) rows")
    if n == s.shape[0]:
        raise DataValidationError("data contain no target (S=0) rows")
    if not np.any(src & (a == 1)) or not np.any(src & (a == 0)):
        raise DataValidationError("both trial arms must be non-empty")


def concat(parts):
    """Stack several :class:`StudyData` objects row-wise."""
    parts = list(parts)
    first = parts[0]
    return StudyData(
        np.concatenate([d.s for d in parts]),
        np.vstack([d.x for d in parts]),
        np.concatenate([d.a for d in parts]),
        np.concatenate([d.y for d in parts]),
        pi=first.pi,
        feature_names=first.feature_names,
    )


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for :func:`load_csv`.

    Parameters
    ----------
    col_s, col_a, col_y : str
        Names of the population, treatment and outcome columns.
    cols_x : sequence of str
        Covariate columns, at least one.
    """

    col_s: str = "S"
    col_a: str = "A"
    col_y: str = "Y"
    cols_x: Sequence[str] = ()

    def __post_init__(self):
        if isinstance(self.cols_x, str):
            object.__setattr__(
                self, "cols_x", tuple(c.strip() for c in self.cols_x.split(",") if c.strip())
            )
        else:
            object.__setattr__(self, "cols_x", tuple(self.cols_x))
        if len(self.cols_x) == 0:
            raise CsvSchemaError("schema needs at least one covariate column")


def _parse_float(cell, row, col, allow_empty):
    cell = cell.strip()
    if cell == "":
        if allow_empty:
            return np.nan
        raise DataValidationError(f"missing value in column {col!r}", row=row)
    try:
        value = float(cell)
    except ValueError:
        raise DataValidationError(
            f"non-numeric value {cell!r} in column {col!r}", row=row
        ) from None
    if not np.isfinite(value):
        raise DataValidationError(f"non-finite value in column {col!r}", row=row)
    return value


def load_csv(path, schema, pi=0.5):
    """Read a pooled sample from a comma-separated file with a header row.

    Parameters
    ----------
    path : str or path-like
    schema : CsvSchema or dict
        Column mapping; a dict is passed to :class:`CsvSchema`.
    pi : float, default=0.5
        Known trial assignment probability.

    Returns
    -------
    StudyData

    Raises
    ------
    CsvSchemaError
        A schema column is missing from the header.
    DataValidationError
        Non-binary ``S`` or ``A``, non-numeric covariates, missing values, or a
        data set without trial or target rows. Row indices are zero-based and
        exclude the header.
    """
    if isinstance(schema, dict):
        schema = CsvSchema(**schema)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvSchemaError("empty file") from None
        cols = [schema.col_s, schema.col_a, schema.col_y, *schema.cols_x]
        missing = [c for c in cols if c not in header]
        if missing:
            raise CsvSchemaError(
                "missing column(s) " + ", ".join(repr(c) for c in missing)
            )
        pos = {c: header.index(c) for c in cols}
        s_list, a_list, y_list, x_rows = [], [], [], []
        for r, line in enumerate(reader):
            if not line or all(c.strip() == "" for c in line):
                continue
            if len(line) < len(header):
                raise DataValidationError(
                    f"expected {len(header)} fields, found {len(line)}", row=r
                )
            s_val = _parse_float(line[pos[schema.col_s]], r, schema.col_s, False)
            if s_val not in (0.0, 1.0):
                raise DataValidationError(
                    f"S must be 0 or 1, found {line[pos[schema.col_s]].strip()!r}", row=r
                )
            a_val = _parse_float(line[pos[schema.col_a]], r, schema.col_a, s_val == 0)
            if not np.isnan(a_val) and a_val not in (0.0, 1.0):
                raise DataValidationError(
                    f"A must be 0 or 1, found {line[pos[schema.col_a]].strip()!r}", row=r
                )
            if s_val == 0 and a_val == 1:
                raise DataValidationError("target rows never carry treatment (A=1)", row=r)
            y_val = _parse_float(line[pos[schema.col_y]], r, schema.col_y, s_val == 0)
            x_rows.append(
                [_parse_float(line[pos[c]], r, c, False) for c in schema.cols_x]
            )
            s_list.append(int(s_val))
            a_list.append(a_val)
            y_list.append(y_val)
    if not s_list:
        raise DataValidationError("file contains no data rows")
    return StudyData(
        np.array(s_list),
        np.array(x_rows, dtype=float).reshape(len(s_list), len(schema.cols_x)),
        np.array(a_list),
        np.array(y_list),
        pi=pi,
        feature_names=schema.cols_x,
    )


def _fmt(v):
    if np.isnan(v):
        return ""
    return repr(float(v))


def write_csv(d, path, schema=None):
    """Write a :class:`StudyData` to CSV so that :func:`load_csv` reads it back exactly.

    Floats are written with ``repr`` (shortest round-tripping representation),
    so every finite double survives a round trip bit for bit.
    """
    if schema is None:
        schema = CsvSchema(cols_x=d.feature_names)
    elif isinstance(schema, dict):
        schema = CsvSchema(**schema)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([schema.col_s, schema.col_a, schema.col_y, *schema.cols_x])
        for i in range(d.N):
            a = "" if np.isnan(d.a[i]) else str(int(d.a[i]))
            w.writerow(
                [str(int(d.s[i])), a, _fmt(d.y[i]), *(_fmt(v) for v in d.x[i])]
            )


@dataclass(frozen=True)
class DataProfile:
    """Summary statistics of a :class:`StudyData`.

    Attributes
    ----------
    n, m, N : int
    alpha_hat : float
    n1, n0 : int
        Trial arm sizes.
    n_target_controls : int
    covariates : dict
        ``{name: {"mean_source", "sd_source", "mean_target", "sd_target"}}``.
    outcome_mean : dict
        Mean outcome for ``"treated"``, ``"control"`` and ``"target_control"``
        (``None`` when absent).
    """

    n: int
    m: int
    N: int
    alpha_hat: float
    n1: int
    n0: int
    n_target_controls: int
    covariates: Dict[str, Dict[str, float]]
    outcome_mean: Dict[str, Optional[float]]

    def to_dict(self):
        return {
            "n": self.n,
            "m": self.m,
            "N": self.N,
            "alpha_hat": self.alpha_hat,
            "n1": self.n1,
            "n0": self.n0,
            "n_target_controls": self.n_target_controls,
            "covariates": self.covariates,
            "outcome_mean": self.outcome_mean,
        }


def _sd(v):
    return float(np.std(v, ddof=1)) if v.size > 1 else 0.0


def profile(d):
    """Summarise a :class:`StudyData`.

    Parameters
    ----------
    d : StudyData

    Returns
    -------
    DataProfile
    """
    src, tgt = d.source, d.target
    covs = {}
    for j, name in enumerate(d.feature_names):
        covs[name] = {
            "mean_source": float(np.mean(d.x[src, j])),
            "sd_source": _sd(d.x[src, j]),
            "mean_target": float(np.mean(d.x[tgt, j])),
            "sd_target": _sd(d.x[tgt, j]),
        }
    tc = d.target_controls
    return DataProfile(
        n=d.n,
        m=d.m,
        N=d.N,
        alpha_hat=d.alpha_hat,
        n1=int(np.sum(d.treated)),
        n0=int(np.sum(d.controls)),
        n_target_controls=int(np.sum(tc)),
        covariates=covs,
        outcome_mean={
            "treated": float(np.mean(d.y[d.treated])),
            "control": float(np.mean(d.y[d.controls])),
            "target_control": float(np.mean(d.y[tc])) if np.any(tc) else None,
        },
    )
