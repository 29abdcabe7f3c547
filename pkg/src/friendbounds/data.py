"""Individual-level panel, nomination network, and derived network variables.

The in-memory table is a thin immutable wrapper around a :class:`pandas.DataFrame`
with canonical column names ``id``, ``school``, ``grade``, ``age`` and the
optional ``outcome`` / ``education`` columns.  Every other column is a covariate.
All derivation functions return new tables and never mutate their input.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .exceptions import DataError

MANDATORY = ("id", "school", "grade", "age")
OPTIONAL = ("outcome", "education")
COHORT = ["school", "grade"]
GRADE_RANGE = (7, 12)

DEGREE_COLUMNS = (
    "grade_indegree",
    "grade_outdegree",
    "school_indegree",
    "outdegree",
    "reciprocated_degree",
    "network_size",
)
AGE_DISTANCE_COLUMNS = (
    "age_distance",
    "age_distance_older",
    "age_distance_younger",
    "cohort_age_distance",
)


@dataclass(frozen=True)
class Individual:
    id: int
    school_id: int
    grade: int
    age: float
    covariates: Mapping[str, float] = field(default_factory=dict)
    outcome: float | None = None
    education: float | None = None

    def __post_init__(self):
        if not self.age > 0:
            raise DataError(f"individual {self.id}: age must be positive, got {self.age}")
        lo, hi = GRADE_RANGE
        if not lo <= self.grade <= hi:
            raise DataError(f"individual {self.id}: grade {self.grade} outside {lo}..{hi}")

    @property
    def cohort(self) -> tuple[int, int]:
        return (self.school_id, self.grade)


@dataclass(frozen=True)
class ObservationTable:
    """Individual rows plus derived columns.

    Parameters
    ----------
    frame : pandas.DataFrame
        One row per individual, canonical column names.
    rejected : tuple of (row_number, reason)
        Rows dropped at load time, 1-based data-row numbers.
    cohort_mean_columns : tuple of str
        Columns whose cohort means are attached as ``mean_<col>``.
    flags : tuple of str
        Non-fatal warnings raised by derivation steps (e.g. singleton cohorts).
    cohort_mean_leave_out : bool
        Whether those means exclude the individual.
    """

    frame: pd.DataFrame
    rejected: tuple = ()
    cohort_mean_columns: tuple = ()
    flags: tuple = ()
    cohort_mean_leave_out: bool = False

    def __post_init__(self):
        missing = [c for c in MANDATORY if c not in self.frame.columns]
        if missing:
            raise DataError(f"table is missing mandatory columns {missing}")
        if len(self.frame) == 0:
            raise DataError("empty table")
        dup = self.frame["id"][self.frame["id"].duplicated()]
        if len(dup):
            raise DataError(f"duplicate id {int(dup.iloc[0])}")

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, **kwargs) -> "ObservationTable":
        frame = frame.reset_index(drop=True).copy()
        for col in ("id", "school", "grade"):
            frame[col] = frame[col].astype(np.int64)
        frame["age"] = frame["age"].astype(float)
        return cls(frame, **kwargs)

    @classmethod
    def from_individuals(cls, individuals: Iterable[Individual]) -> "ObservationTable":
        rows = []
        for ind in individuals:
            row = {"id": ind.id, "school": ind.school_id, "grade": ind.grade, "age": ind.age}
            if ind.outcome is not None:
                row["outcome"] = ind.outcome
            if ind.education is not None:
                row["education"] = ind.education
            row.update(ind.covariates)
            rows.append(row)
        if not rows:
            raise DataError("empty table")
        return cls.from_frame(pd.DataFrame(rows))

    def __len__(self):
        return len(self.frame)

    def __getitem__(self, column):
        return self.frame[column]

    @property
    def columns(self) -> list[str]:
        return list(self.frame.columns)

    @property
    def covariate_names(self) -> list[str]:
        skip = set(MANDATORY) | set(OPTIONAL) | set(DEGREE_COLUMNS) | set(AGE_DISTANCE_COLUMNS)
        return [c for c in self.frame.columns if c not in skip and not c.startswith("mean_")]

    @property
    def individuals(self) -> list[Individual]:
        covs = self.covariate_names
        out = []
        for rec in self.frame.to_dict("records"):
            out.append(
                Individual(
                    id=int(rec["id"]),
                    school_id=int(rec["school"]),
                    grade=int(rec["grade"]),
                    age=float(rec["age"]),
                    covariates={c: rec[c] for c in covs},
                    outcome=_opt(rec.get("outcome")),
                    education=_opt(rec.get("education")),
                )
            )
        return out

    @property
    def cohort_means(self) -> pd.DataFrame:
        """Per-(school, grade) means of the registered cohort-mean columns."""
        cols = list(self.cohort_mean_columns)
        if not cols:
            return pd.DataFrame(index=pd.MultiIndex.from_tuples([], names=COHORT))
        return self.frame.groupby(COHORT)[cols].mean()

    @property
    def n_cohorts(self) -> int:
        return int(self.frame.groupby(COHORT).ngroups)

    def with_columns(self, **columns) -> "ObservationTable":
        frame = self.frame.copy()
        for name, values in columns.items():
            values = np.asarray(values)
            if values.shape[0] != len(frame):
                raise DataError(f"column {name!r} has {values.shape[0]} rows, table has {len(frame)}")
            frame[name] = values
        return replace(self, frame=frame)

    def subset(self, mask, recompute_means: bool = True) -> "ObservationTable":
        """Rows where ``mask`` is true; registered cohort means are recomputed."""
        frame = self.frame.loc[np.asarray(mask, dtype=bool)].reset_index(drop=True)
        out = replace(self, frame=frame)
        if recompute_means and self.cohort_mean_columns:
            out = compute_cohort_means(out, self.cohort_mean_columns, self.cohort_mean_leave_out)
        return out

    def estimation_sample(self, columns: Sequence[str]) -> "ObservationTable":
        """Rows with no missing value in ``columns``; cohort means are kept as computed
        on the full census."""
        missing = [c for c in columns if c not in self.frame.columns]
        if missing:
            raise DataError(f"unknown columns {missing}")
        mask = self.frame[list(columns)].notna().all(axis=1).to_numpy()
        return self.subset(mask, recompute_means=False)


def _opt(value):
    if value is None:
        return None
    value = float(value)
    return None if np.isnan(value) else value


@dataclass(frozen=True)
class EdgeList:
    """Validated directed nominations ``sender -> receiver``."""

    edges: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "edges", arr)

    def __len__(self):
        return self.edges.shape[0]

    @property
    def senders(self) -> np.ndarray:
        return self.edges[:, 0]

    @property
    def receivers(self) -> np.ndarray:
        return self.edges[:, 1]

    @classmethod
    def validated(cls, pairs, ids) -> "EdgeList":
        arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        known = set(np.asarray(ids, dtype=np.int64).tolist())
        seen = set()
        for k, (s, r) in enumerate(arr.tolist()):
            if s == r:
                raise DataError(f"edge {k + 1}: self-loop on id {s}")
            for node in (s, r):
                if node not in known:
                    raise DataError(f"edge {k + 1}: unknown id {node}")
            if (s, r) in seen:
                raise DataError(f"edge {k + 1}: duplicate edge {s}->{r}")
            seen.add((s, r))
        return cls(arr)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"sender": self.senders, "receiver": self.receivers})


def load_individuals(
    path,
    schema: Mapping[str, str] | None = None,
    delimiter: str = ",",
) -> ObservationTable:
    """Read individuals from a delimited text file with a header row.

    ``schema`` maps canonical names (``id``, ``school``, ``grade``, ``age``,
    ``outcome``, ``education``) to file column names; unmapped canonical names
    are looked up verbatim.  Rows whose mandatory fields fail to parse are
    dropped and listed in :attr:`ObservationTable.rejected`.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"individuals file not found: {path}")
    raw = pd.read_csv(path, sep=delimiter, dtype=str, keep_default_na=False)
    schema = dict(schema or {})
    rename = {}
    for canon in MANDATORY + OPTIONAL:
        src = schema.get(canon, canon)
        if src in raw.columns:
            rename[src] = canon
        elif canon in MANDATORY:
            raise DataError(f"mandatory column {canon!r} (file column {src!r}) not found in {path}")
    raw = raw.rename(columns=rename)
    if raw.columns.duplicated().any():
        raise DataError(f"duplicate column names after mapping: {list(raw.columns[raw.columns.duplicated()])}")

    parsed = pd.DataFrame(index=raw.index)
    for col in raw.columns:
        parsed[col] = pd.to_numeric(raw[col].str.strip(), errors="coerce")

    rejected = []
    keep = np.ones(len(raw), dtype=bool)
    lo, hi = GRADE_RANGE
    for k in range(len(raw)):
        reasons = [c for c in MANDATORY if np.isnan(parsed.at[k, c])]
        if not reasons:
            if parsed.at[k, "age"] <= 0:
                reasons.append("age<=0")
            if not lo <= parsed.at[k, "grade"] <= hi:
                reasons.append("grade out of range")
        if reasons:
            keep[k] = False
            rejected.append((k + 1, "unparseable or invalid: " + ", ".join(reasons)))

    frame = parsed.loc[keep].reset_index(drop=True)
    if len(frame) == 0:
        raise DataError(f"no valid rows in {path}")
    dup = frame["id"][frame["id"].duplicated()]
    if len(dup):
        raise DataError(f"duplicate id {int(dup.iloc[0])} in {path}")
    return ObservationTable.from_frame(frame, rejected=tuple(rejected))


def load_edges(
    path,
    table: ObservationTable,
    schema: Mapping[str, str] | None = None,
    delimiter: str = ",",
) -> EdgeList:
    if not os.path.exists(path):
        raise FileNotFoundError(f"edges file not found: {path}")
    schema = dict(schema or {})
    raw = pd.read_csv(path, sep=delimiter)
    cols = [schema.get("sender", "sender"), schema.get("receiver", "receiver")]
    for c in cols:
        if c not in raw.columns:
            raise DataError(f"edge column {c!r} not found in {path}")
    pairs = raw[cols].to_numpy()
    if len(pairs) and not np.issubdtype(pairs.dtype, np.integer):
        raise DataError(f"non-integer ids in {path}")
    return EdgeList.validated(pairs, table["id"].to_numpy())


def _positions(table: ObservationTable, ids: np.ndarray) -> np.ndarray:
    index = pd.Index(table["id"].to_numpy())
    pos = index.get_indexer(ids)
    if (pos < 0).any():
        raise DataError(f"edge references unknown id {int(ids[pos < 0][0])}")
    return pos


def compute_degree_measures(table: ObservationTable, edges: EdgeList) -> ObservationTable:
    """Attach in/out-degree, reciprocated degree and network size columns.

    Grade in-degree counts nominations received from the same school and grade;
    school in-degree relaxes the grade restriction.
    """
    n = len(table)
    cols = {c: np.zeros(n, dtype=np.int64) for c in DEGREE_COLUMNS}
    if len(edges) == 0:
        return table.with_columns(**cols)

    s = _positions(table, edges.senders)
    r = _positions(table, edges.receivers)
    school = table["school"].to_numpy()
    grade = table["grade"].to_numpy()
    same_school = school[s] == school[r]
    same_cohort = same_school & (grade[s] == grade[r])

    cols["grade_indegree"] = np.bincount(r[same_cohort], minlength=n)
    cols["grade_outdegree"] = np.bincount(s[same_cohort], minlength=n)
    cols["school_indegree"] = np.bincount(r[same_school], minlength=n)
    cols["outdegree"] = np.bincount(s, minlength=n)

    # mutual pairs: i->j and j->i both present
    key = s.astype(np.int64) * n + r
    rev = r.astype(np.int64) * n + s
    mutual = np.isin(rev, key)
    cols["reciprocated_degree"] = np.bincount(s[mutual], minlength=n)

    # network size: distinct partners across sent and received ties
    lo = np.minimum(s, r)
    hi = np.maximum(s, r)
    pairs = np.unique(lo.astype(np.int64) * n + hi)
    a, b = np.divmod(pairs, n)
    cols["network_size"] = np.bincount(a, minlength=n) + np.bincount(b, minlength=n)
    return table.with_columns(**cols)


def compute_age_distance(table: ObservationTable) -> ObservationTable:
    """Mean absolute age difference to cohort peers (self excluded).

    Also attaches the mean distance to strictly older and strictly younger
    peers (0 when that peer set is empty) and the cohort average of the
    individual distances.  Members of singleton cohorts get NaN and the table
    carries a flag naming the cohort.
    """
    n = len(table)
    dist = np.full(n, np.nan)
    older = np.full(n, np.nan)
    younger = np.full(n, np.nan)
    cohort_mean = np.full(n, np.nan)
    flags = list(table.flags)
    ages = table["age"].to_numpy(dtype=float)

    for (sch, gr), idx in table.frame.groupby(COHORT).indices.items():
        m = len(idx)
        if m < 2:
            flags.append(f"singleton cohort school={sch} grade={gr}: age distance missing")
            continue
        a = ages[idx]
        diff = a[None, :] - a[:, None]  # diff[i, j] = age_j - age_i
        dist[idx] = np.abs(diff).sum(axis=1) / (m - 1)
        up = diff > 0
        down = diff < 0
        n_up = up.sum(axis=1)
        n_down = down.sum(axis=1)
        s_up = np.where(up, diff, 0.0).sum(axis=1)
        s_down = np.where(down, -diff, 0.0).sum(axis=1)
        older[idx] = np.divide(s_up, n_up, out=np.zeros(m), where=n_up > 0)
        younger[idx] = np.divide(s_down, n_down, out=np.zeros(m), where=n_down > 0)
        cohort_mean[idx] = dist[idx].mean()

    out = table.with_columns(
        age_distance=dist,
        age_distance_older=older,
        age_distance_younger=younger,
        cohort_age_distance=cohort_mean,
    )
    return replace(out, flags=tuple(flags))


def compute_cohort_means(table: ObservationTable, columns: Sequence[str], leave_out: bool = False) -> ObservationTable:
    """Attach ``mean_<col>``, the school-grade mean of each column.

    By default the individual is included.  With ``leave_out=True`` it is the
    mean over the other members, undefined (NaN) for singleton cohorts.
    """
    columns = list(columns)
    unknown = [c for c in columns if c not in table.frame.columns]
    if unknown:
        raise DataError(f"unknown column(s) {unknown}")
    for c in columns:
        if not pd.api.types.is_numeric_dtype(table.frame[c]):
            raise DataError(f"column {c!r} is not numeric")
    grouped = table.frame.groupby(COHORT)[columns]
    if leave_out:
        total = grouped.transform("sum")
        count = grouped.transform("count")
        means = (total - table.frame[columns]) / (count - 1).where(count > 1)
    else:
        means = grouped.transform("mean")
    out = table.with_columns(**{f"mean_{c}": means[c].to_numpy() for c in columns})
    registered = tuple(dict.fromkeys(tuple(table.cohort_mean_columns) + tuple(columns)))
    return replace(out, cohort_mean_columns=registered, cohort_mean_leave_out=leave_out)


def write_individuals(table: ObservationTable, path, delimiter: str = ",") -> None:
    table.frame.to_csv(path, sep=delimiter, index=False, float_format="%.10g")


def write_edges(edges: EdgeList, path, delimiter: str = ",") -> None:
    edges.to_frame().to_csv(path, sep=delimiter, index=False)
