"""Counting-process longitudinal data: row and dataset types, CSV io, design helpers.

The canonical external format is a long CSV with one row per
covariate-constant interval per subject:

    id, tstart, tstop, event (0/1), atrisk (0/1), A (0/1), Y, <covariate columns...>

``Y`` must be empty exactly on non-event rows ("unobserved" is distinct from
"observed zero"). Covariates are addressed by name throughout so that model
specifications can select subsets and transforms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DataValidationError, SchemaError

CORE_COLUMNS = ("id", "tstart", "tstop", "event", "atrisk", "A", "Y")

_TRANSFORMS = {
    "identity": lambda x: x,
    "square": np.square,
}


@dataclass(frozen=True)
class Term:
    """One design-matrix column: a named covariate plus a transform.

    The ``square`` transform exists to express misspecified model variants
    (fitting K^2 where the truth is linear in K).
    """

    name: str
    transform: str = "identity"

    def __post_init__(self):
        if self.transform not in _TRANSFORMS:
            raise SchemaError(
                f"unknown transform {self.transform!r} for term {self.name!r}; "
                f"expected one of {sorted(_TRANSFORMS)}"
            )

    @property
    def column_name(self) -> str:
        return self.name if self.transform == "identity" else f"{self.name}^2"

    def apply(self, values):
        return _TRANSFORMS[self.transform](np.asarray(values, dtype=float))


def as_terms(items) -> tuple[Term, ...]:
    """Coerce strings / (name, transform) pairs / Terms into a Term tuple."""
    out = []
    for item in items:
        if isinstance(item, Term):
            out.append(item)
        elif isinstance(item, str):
            out.append(Term(item))
        else:
            name, transform = item
            out.append(Term(name, transform))
    return tuple(out)


@dataclass(frozen=True)
class PersonTimeRow:
    """One covariate-constant interval (t_start, t_stop] of a subject's follow-up.

    ``event`` marks intervals whose endpoint is an observation time of the
    outcome; ``outcome`` is present exactly on those rows. ``at_risk`` is the
    censoring indicator xi(t); ``treatment`` is the binary exposure over the
    interval.
    """

    subject_id: object
    t_start: float
    t_stop: float
    event: bool
    at_risk: bool
    treatment: int
    outcome: float | None
    covariates: Mapping[str, float]

    def __post_init__(self):
        if not self.t_start < self.t_stop:
            raise DataValidationError(
                f"interval must have t_start < t_stop, got [{self.t_start}, {self.t_stop}]"
            )
        if self.treatment not in (0, 1):
            raise DataValidationError(f"treatment must be 0 or 1, got {self.treatment!r}")
        if self.event != (self.outcome is not None):
            raise DataValidationError(
                "outcome must be present if and only if the row is an event"
            )


class LongitudinalDataset:
    """Immutable column store of person-time rows.

    Rows are ordered by (subject, t_start) with each subject's rows
    contiguous; per-subject intervals must not overlap and no interval may
    extend past the subject's censoring time (the end of their last
    interval). Construction validates these invariants. The column arrays
    are read-only, so instances are safe to share across workers.
    """

    def __init__(
        self,
        *,
        subject_ids: Sequence,
        t_start,
        t_stop,
        event,
        at_risk,
        treatment,
        outcome,
        covariates: Mapping[str, Sequence[float]],
        tau: float | None = None,
    ):
        ids = np.asarray(subject_ids, dtype=object)
        n = ids.shape[0]
        self._t_start = np.asarray(t_start, dtype=float)
        self._t_stop = np.asarray(t_stop, dtype=float)
        self._event = np.asarray(event, dtype=bool)
        self._at_risk = np.asarray(at_risk, dtype=bool)
        self._treatment = np.asarray(treatment, dtype=np.int64)
        self._outcome = np.asarray(outcome, dtype=float)
        self._covariates = {
            str(name): np.asarray(values, dtype=float) for name, values in covariates.items()
        }
        for arr in (self._t_start, self._t_stop, self._event, self._at_risk,
                    self._treatment, self._outcome, *self._covariates.values()):
            if arr.shape != (n,):
                raise DataValidationError("all columns must have one value per row")

        order = _row_order(ids, self._t_start)
        if order is not None:
            ids = ids[order]
            self._t_start = self._t_start[order]
            self._t_stop = self._t_stop[order]
            self._event = self._event[order]
            self._at_risk = self._at_risk[order]
            self._treatment = self._treatment[order]
            self._outcome = self._outcome[order]
            self._covariates = {k: v[order] for k, v in self._covariates.items()}
        self._subject_ids = ids

        self.subject_index: dict = {}
        start = 0
        for i in range(1, n + 1):
            if i == n or ids[i] != ids[start]:
                self.subject_index[ids[start]] = slice(start, i)
                start = i

        self.tau = float(tau) if tau is not None else float(self._t_stop.max()) if n else 0.0
        self.censoring = {
            sid: float(self._t_stop[sl].max()) for sid, sl in self.subject_index.items()
        }
        self._validate()
        for arr in (self._t_start, self._t_stop, self._event, self._at_risk,
                    self._treatment, self._outcome, *self._covariates.values()):
            arr.flags.writeable = False
        self._rows_cache: tuple | None = None

    # -- construction and validation --------------------------------------

    @classmethod
    def from_rows(cls, rows: Sequence[PersonTimeRow], tau: float | None = None):
        names: list[str] = []
        for r in rows:
            for k in r.covariates:
                if k not in names:
                    names.append(k)
        return cls(
            subject_ids=[r.subject_id for r in rows],
            t_start=[r.t_start for r in rows],
            t_stop=[r.t_stop for r in rows],
            event=[r.event for r in rows],
            at_risk=[r.at_risk for r in rows],
            treatment=[r.treatment for r in rows],
            outcome=[np.nan if r.outcome is None else r.outcome for r in rows],
            covariates={
                name: [float(r.covariates[name]) for r in rows] for name in names
            },
            tau=tau,
        )

    def _validate(self):
        n = self.n_rows
        if n == 0:
            return
        bad = np.nonzero(~(self._t_start < self._t_stop))[0]
        if bad.size:
            raise DataValidationError("t_start must be strictly below t_stop", row=int(bad[0]) + 1)
        bad = np.nonzero((self._treatment != 0) & (self._treatment != 1))[0]
        if bad.size:
            raise DataValidationError("treatment must be 0 or 1", row=int(bad[0]) + 1)
        has_outcome = ~np.isnan(self._outcome)
        bad = np.nonzero(self._event != has_outcome)[0]
        if bad.size:
            i = int(bad[0])
            msg = (
                "event row has missing outcome"
                if self._event[i]
                else "non-event row carries an outcome value"
            )
            raise DataValidationError(msg, row=i + 1)
        bad = np.nonzero(self._event & (self._t_stop > self.tau + 1e-9))[0]
        if bad.size:
            raise DataValidationError(
                f"event time exceeds the maximum follow-up time {self.tau}", row=int(bad[0]) + 1
            )
        for name, arr in self._covariates.items():
            bad = np.nonzero(~np.isfinite(arr))[0]
            if bad.size:
                raise DataValidationError(
                    f"covariate {name!r} is missing or non-finite", row=int(bad[0]) + 1
                )
        for sid, sl in self.subject_index.items():
            starts = self._t_start[sl]
            stops = self._t_stop[sl]
            overlap = np.nonzero(starts[1:] < stops[:-1] - 1e-12)[0]
            if overlap.size:
                raise DataValidationError(
                    f"subject {sid!r} has overlapping intervals",
                    row=sl.start + int(overlap[0]) + 2,
                )

    # -- basic accessors ---------------------------------------------------

    @property
    def n_rows(self) -> int:
        return self._t_start.shape[0]

    @property
    def n_subjects(self) -> int:
        return len(self.subject_index)

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(self._covariates)

    @property
    def subject_ids(self) -> np.ndarray:
        return self._subject_ids

    @property
    def t_start(self) -> np.ndarray:
        return self._t_start

    @property
    def t_stop(self) -> np.ndarray:
        return self._t_stop

    @property
    def event(self) -> np.ndarray:
        return self._event

    @property
    def at_risk(self) -> np.ndarray:
        return self._at_risk

    @property
    def treatment(self) -> np.ndarray:
        return self._treatment

    @property
    def outcome(self) -> np.ndarray:
        return self._outcome

    def column(self, name: str) -> np.ndarray:
        try:
            return self._covariates[name]
        except KeyError:
            raise SchemaError(
                f"unknown covariate {name!r}; dataset has {list(self._covariates)}"
            ) from None

    def row(self, i: int) -> PersonTimeRow:
        y = self._outcome[i]
        return PersonTimeRow(
            subject_id=self._subject_ids[i],
            t_start=float(self._t_start[i]),
            t_stop=float(self._t_stop[i]),
            event=bool(self._event[i]),
            at_risk=bool(self._at_risk[i]),
            treatment=int(self._treatment[i]),
            outcome=None if np.isnan(y) else float(y),
            covariates={k: float(v[i]) for k, v in self._covariates.items()},
        )

    @property
    def rows(self) -> tuple[PersonTimeRow, ...]:
        if self._rows_cache is None:
            self._rows_cache = tuple(self.row(i) for i in range(self.n_rows))
        return self._rows_cache

    def __len__(self) -> int:
        return self.n_rows

    def __eq__(self, other) -> bool:
        if not isinstance(other, LongitudinalDataset):
            return NotImplemented
        if self.covariate_names != other.covariate_names or self.tau != other.tau:
            return False
        if self.n_rows != other.n_rows:
            return False
        return (
            all(self._subject_ids == other._subject_ids)
            and np.array_equal(self._t_start, other._t_start)
            and np.array_equal(self._t_stop, other._t_stop)
            and np.array_equal(self._event, other._event)
            and np.array_equal(self._at_risk, other._at_risk)
            and np.array_equal(self._treatment, other._treatment)
            and np.array_equal(self._outcome, other._outcome, equal_nan=True)
            and all(
                np.array_equal(self._covariates[k], other._covariates[k])
                for k in self.covariate_names
            )
        )


def _row_order(ids: np.ndarray, t_start: np.ndarray):
    """Stable (subject_id, t_start) order, or None when already sorted."""
    n = ids.shape[0]
    if n == 0:
        return None
    keys = list(zip(ids, t_start))
    if all(keys[i] <= keys[i + 1] for i in range(n - 1)):
        return None
    return np.array(sorted(range(n), key=keys.__getitem__), dtype=np.intp)


# -- analysis-row extraction and design building ---------------------------


def analysis_rows(dataset: LongitudinalDataset) -> list[PersonTimeRow]:
    """The rows where the outcome was observed, in dataset order.

    These are the only rows entering the outcome estimating equation.
    """
    return [dataset.row(int(i)) for i in np.nonzero(dataset.event)[0]]


def rows_design(rows: Sequence[PersonTimeRow], terms, intercept: bool = True):
    """Design matrix over person-time rows: [1?, term columns...].

    Returns (matrix, column_names). The reserved name "A" resolves to the
    row's treatment unless a covariate of that name exists; any other
    unresolvable name raises SchemaError.
    """
    terms = as_terms(terms)
    cols = []
    names = []
    if intercept:
        cols.append(np.ones(len(rows)))
        names.append("intercept")
    for term in terms:
        try:
            raw = np.array([r.covariates[term.name] for r in rows], dtype=float)
        except KeyError:
            if term.name == "A":
                raw = np.array([r.treatment for r in rows], dtype=float)
            else:
                raise SchemaError(f"term {term.name!r} does not match any covariate") from None
        cols.append(term.apply(raw))
        names.append(term.column_name)
    matrix = np.column_stack(cols) if cols else np.empty((len(rows), 0))
    return matrix, names


def dataset_design(dataset: LongitudinalDataset, terms, mask=None, intercept: bool = False):
    """Design matrix straight from dataset columns, optionally row-masked.

    Same name-resolution rules as rows_design; used where building
    PersonTimeRow objects for every interval would be wasteful.
    """
    terms = as_terms(terms)
    take = slice(None) if mask is None else mask
    n = dataset.n_rows if mask is None else int(np.count_nonzero(mask)) if np.asarray(mask).dtype == bool else len(mask)
    cols = []
    names = []
    if intercept:
        cols.append(np.ones(n))
        names.append("intercept")
    for term in terms:
        if term.name == "A" and term.name not in dataset.covariate_names:
            raw = dataset.treatment.astype(float)
        else:
            raw = dataset.column(term.name)
        cols.append(term.apply(raw[take]))
        names.append(term.column_name)
    matrix = np.column_stack(cols) if cols else np.empty((n, 0))
    return matrix, names


def rows_treatment(rows: Sequence[PersonTimeRow]) -> np.ndarray:
    return np.array([r.treatment for r in rows], dtype=float)


def rows_outcome(rows: Sequence[PersonTimeRow]) -> np.ndarray:
    return np.array([np.nan if r.outcome is None else r.outcome for r in rows], dtype=float)


# -- positivity diagnostics -------------------------------------------------


@dataclass(frozen=True)
class PositivityReport:
    """Distribution summary of fitted treatment probabilities on analysis rows."""

    n_rows: int
    n_treated: int
    n_control: int
    min_propensity: float
    max_propensity: float
    lower: float
    upper: float
    n_below: int
    n_above: int

    @property
    def n_flagged(self) -> int:
        return self.n_below + self.n_above

    def summary(self) -> str:
        return (
            f"propensity range [{self.min_propensity:.4g}, {self.max_propensity:.4g}] "
            f"over {self.n_rows} rows ({self.n_treated} treated / {self.n_control} control); "
            f"{self.n_below} below {self.lower:g}, {self.n_above} above {self.upper:g}"
        )


def check_positivity(
    dataset: LongitudinalDataset,
    propensities,
    lower: float = 0.01,
    upper: float = 0.99,
) -> PositivityReport:
    """Screen fitted propensities for practical positivity violations.

    ``propensities`` must hold one value per analysis row of ``dataset``.
    """
    p = np.asarray(propensities, dtype=float)
    ev = dataset.event
    n_events = int(ev.sum())
    if p.shape != (n_events,):
        raise ValueError(f"expected {n_events} propensities (one per analysis row), got {p.shape}")
    a = dataset.treatment[ev]
    return PositivityReport(
        n_rows=n_events,
        n_treated=int((a == 1).sum()),
        n_control=int((a == 0).sum()),
        min_propensity=float(p.min()) if n_events else float("nan"),
        max_propensity=float(p.max()) if n_events else float("nan"),
        lower=lower,
        upper=upper,
        n_below=int((p < lower).sum()),
        n_above=int((p > upper).sum()),
    )


# -- CSV io ------------------------------------------------------------------


def load_csv(path, schema: Mapping[str, str] | None = None) -> LongitudinalDataset:
    """Read a counting-process CSV into a validated dataset.

    ``schema`` optionally maps the canonical column names
    (id, tstart, tstop, event, atrisk, A, Y) to the file's actual header
    names. Every non-core column is treated as a covariate. Parse and
    invariant failures are reported with their 1-based data row number.
    """
    mapping = dict(schema) if schema else {}
    colname = {canon: mapping.get(canon, canon) for canon in CORE_COLUMNS}

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file (header required)") from None
        missing = [colname[c] for c in CORE_COLUMNS if colname[c] not in header]
        if missing:
            raise SchemaError(f"{path}: missing required columns {missing}")
        core_idx = {c: header.index(colname[c]) for c in CORE_COLUMNS}
        cov_names = [
            h for j, h in enumerate(header) if j not in set(core_idx.values())
        ]
        cov_idx = [header.index(h) for h in cov_names]

        ids, tstart, tstop, event, atrisk, a, y = [], [], [], [], [], [], []
        covs: dict[str, list[float]] = {name: [] for name in cov_names}
        for rownum, record in enumerate(reader, start=1):
            if not record or all(cell.strip() == "" for cell in record):
                continue
            if len(record) != len(header):
                raise DataValidationError(
                    f"expected {len(header)} fields, got {len(record)}", row=rownum
                )
            ids.append(record[core_idx["id"]])
            tstart.append(_parse_float(record[core_idx["tstart"]], "tstart", rownum))
            tstop.append(_parse_float(record[core_idx["tstop"]], "tstop", rownum))
            event.append(_parse_flag(record[core_idx["event"]], "event", rownum))
            atrisk.append(_parse_flag(record[core_idx["atrisk"]], "atrisk", rownum))
            a.append(_parse_flag(record[core_idx["A"]], "A", rownum))
            y_cell = record[core_idx["Y"]].strip()
            if y_cell == "":
                if event[-1]:
                    raise DataValidationError("event row has empty outcome column", row=rownum)
                y.append(np.nan)
            else:
                if not event[-1]:
                    raise DataValidationError(
                        "non-event row must leave the outcome column empty", row=rownum
                    )
                y.append(_parse_float(y_cell, "Y", rownum))
            for name, j in zip(cov_names, cov_idx):
                covs[name].append(_parse_float(record[j], name, rownum))

    return LongitudinalDataset(
        subject_ids=ids,
        t_start=tstart,
        t_stop=tstop,
        event=event,
        at_risk=atrisk,
        treatment=a,
        outcome=y,
        covariates=covs,
    )


def write_csv(dataset: LongitudinalDataset, path) -> None:
    """Write a dataset in the canonical CSV layout; inverse of load_csv."""
    header = list(CORE_COLUMNS) + list(dataset.covariate_names)
    cov_arrays = [dataset.column(name) for name in dataset.covariate_names]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n_rows):
            yv = dataset.outcome[i]
            writer.writerow(
                [
                    dataset.subject_ids[i],
                    repr(float(dataset.t_start[i])),
                    repr(float(dataset.t_stop[i])),
                    int(dataset.event[i]),
                    int(dataset.at_risk[i]),
                    int(dataset.treatment[i]),
                    "" if np.isnan(yv) else repr(float(yv)),
                ]
                + [repr(float(col[i])) for col in cov_arrays]
            )


def _parse_float(cell: str, name: str, rownum: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise DataValidationError(f"cannot parse {name}={cell!r} as a number", row=rownum) from None


def _parse_flag(cell: str, name: str, rownum: int) -> int:
    value = cell.strip()
    if value not in ("0", "1"):
        raise DataValidationError(f"{name} must be 0 or 1, got {cell!r}", row=rownum)
    return int(value)
