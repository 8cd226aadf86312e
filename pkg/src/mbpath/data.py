"""Dataset model, compositional preprocessing and strict CSV ingestion.

The abundance tables handled here are samples x taxa relative abundances.
They are prevalence-filtered, then CLR-transformed into a ``DesignMatrix``.
Metabolites are log-transformed and standardized to unit sample variance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import DataError

__all__ = [
    "AbundanceTable",
    "DesignMatrix",
    "TargetDataset",
    "ExternalDataset",
    "AlignmentReport",
    "NumericTable",
    "filter_prevalence",
    "clr_transform",
    "align_cohorts",
    "standardize_metabolite",
    "read_numeric_csv",
    "read_abundance_csv",
    "join_values",
    "write_design_csv",
]


def _check_ids(ids, what):
    ids = tuple(str(s) for s in ids)
    if len(set(ids)) != len(ids):
        seen, dups = set(), []
        for s in ids:
            if s in seen:
                dups.append(s)
            seen.add(s)
        raise DataError(f"duplicate {what}: {sorted(set(dups))}")
    return ids


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class AbundanceTable:
    """Relative abundances, one row per sample and one column per taxon."""

    values: np.ndarray
    taxa_ids: tuple
    sample_ids: tuple

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2:
            raise DataError("abundance values must be a 2-d matrix")
        if not np.all(np.isfinite(values)):
            raise DataError("abundance table contains NaN or infinite entries")
        if np.any(values < 0):
            raise DataError("abundance table contains negative entries")
        taxa = _check_ids(self.taxa_ids, "taxa_ids")
        samples = _check_ids(self.sample_ids, "sample_ids")
        if len(taxa) != values.shape[1]:
            raise DataError(f"{len(taxa)} taxa_ids for {values.shape[1]} columns")
        if len(samples) != values.shape[0]:
            raise DataError(f"{len(samples)} sample_ids for {values.shape[0]} rows")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "taxa_ids", taxa)
        object.__setattr__(self, "sample_ids", samples)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class DesignMatrix:
    """Real-valued n x p microbe design (CLR coordinates or synthetic)."""

    values: np.ndarray
    taxa_ids: tuple
    centered: bool = False
    sample_ids: Optional[tuple] = None

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2:
            raise DataError("design values must be a 2-d matrix")
        if not np.all(np.isfinite(values)):
            raise DataError("design matrix contains NaN or infinite entries")
        taxa = _check_ids(self.taxa_ids, "taxa_ids")
        if len(taxa) != values.shape[1]:
            raise DataError(f"{len(taxa)} taxa_ids for {values.shape[1]} columns")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "taxa_ids", taxa)
        if self.sample_ids is not None:
            samples = _check_ids(self.sample_ids, "sample_ids")
            if len(samples) != values.shape[0]:
                raise DataError(f"{len(samples)} sample_ids for {values.shape[0]} rows")
            object.__setattr__(self, "sample_ids", samples)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def p(self):
        return self.values.shape[1]

    def take_columns(self, taxa):
        index = {t: j for j, t in enumerate(self.taxa_ids)}
        cols = [index[t] for t in taxa]
        return replace(self, values=self.values[:, cols], taxa_ids=tuple(taxa))

    def take_rows(self, rows):
        rows = np.asarray(rows, dtype=int)
        samples = None
        if self.sample_ids is not None:
            samples = tuple(self.sample_ids[i] for i in rows)
        return replace(self, values=self.values[rows], sample_ids=samples)


def _vector(v, n, what):
    v = _frozen(v)
    if v.ndim != 1:
        raise DataError(f"{what} must be a vector")
    if v.shape[0] != n:
        raise DataError(f"{what} has length {v.shape[0]}, design has {n} rows")
    if not np.all(np.isfinite(v)):
        raise DataError(f"{what} contains NaN or infinite entries")
    return v


@dataclass(frozen=True)
class TargetDataset:
    """Target cohort: design X, outcome y and (optionally) the metabolite m."""

    design: DesignMatrix
    outcome: np.ndarray
    metabolite: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.design.n
        object.__setattr__(self, "outcome", _vector(self.outcome, n, "outcome"))
        if self.metabolite is not None:
            object.__setattr__(self, "metabolite", _vector(self.metabolite, n, "metabolite"))

    @property
    def n(self):
        return self.design.n

    def take_rows(self, rows):
        rows = np.asarray(rows, dtype=int)
        m = None if self.metabolite is None else self.metabolite[rows]
        return TargetDataset(self.design.take_rows(rows), self.outcome[rows], m)


@dataclass(frozen=True)
class ExternalDataset:
    """External cohort: design X-tilde and metabolite m-tilde (no outcome)."""

    design: DesignMatrix
    metabolite: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "metabolite", _vector(self.metabolite, self.design.n, "metabolite")
        )

    @property
    def n(self):
        return self.design.n

    def take_rows(self, rows):
        rows = np.asarray(rows, dtype=int)
        return ExternalDataset(self.design.take_rows(rows), self.metabolite[rows])


@dataclass(frozen=True)
class AlignmentReport:
    shared_taxa: tuple
    dropped_from_target: tuple = ()
    dropped_from_external: tuple = ()


# --- preprocessing -----------------------------------------------------------


def filter_prevalence(table: AbundanceTable, max_zero_fraction: float) -> AbundanceTable:
    """Keep the taxa whose fraction of zero entries is at most ``max_zero_fraction``.

    The boundary is inclusive, and column order is preserved.
    """
    if not 0.0 <= max_zero_fraction <= 1.0:
        raise ValueError("max_zero_fraction must lie in [0, 1]")
    n, p = table.shape
    if n == 0 or p == 0:
        raise DataError("abundance table is empty")
    zero_counts = (table.values == 0).sum(axis=0)
    # integer comparison avoids 1/10 > 0.10 style float surprises
    keep = zero_counts <= np.floor(max_zero_fraction * n + 1e-9)
    if not keep.any():
        raise DataError("no taxa survive filter")
    cols = np.flatnonzero(keep)
    return AbundanceTable(
        table.values[:, cols],
        tuple(table.taxa_ids[j] for j in cols),
        table.sample_ids,
    )


def clr_transform(table: AbundanceTable, pseudocount: float = 1e-8,
                  policy: str = "zeros") -> DesignMatrix:
    """Centered log-ratio transform.

    ``policy="zeros"`` adds ``pseudocount`` to zero entries only; ``"all"``
    adds it to every entry.  Each output row sums to zero.
    """
    if not pseudocount > 0:
        raise ValueError("pseudocount must be positive")
    v = table.values
    if policy == "zeros":
        adjusted = np.where(v == 0, pseudocount, v)
    elif policy == "all":
        adjusted = v + pseudocount
    else:
        raise ValueError(f"unknown pseudocount policy {policy!r}")
    logs = np.log(adjusted)
    out = logs - logs.mean(axis=1, keepdims=True)
    return DesignMatrix(out, table.taxa_ids, centered=True, sample_ids=table.sample_ids)


def align_cohorts(target: TargetDataset, external: ExternalDataset):
    """Restrict both cohorts to their shared taxa, in the target's column order."""
    ext_set = set(external.design.taxa_ids)
    tgt_set = set(target.design.taxa_ids)
    shared = tuple(t for t in target.design.taxa_ids if t in ext_set)
    if not shared:
        raise DataError("cohorts share no taxa")
    report = AlignmentReport(
        shared_taxa=shared,
        dropped_from_target=tuple(t for t in target.design.taxa_ids if t not in ext_set),
        dropped_from_external=tuple(t for t in external.design.taxa_ids if t not in tgt_set),
    )
    new_target = replace(target, design=target.design.take_columns(shared))
    new_external = replace(external, design=external.design.take_columns(shared))
    return new_target, new_external, report


def standardize_metabolite(values, log: bool = True) -> np.ndarray:
    """Log-transform (unless ``log=False``) and scale to mean 0, sd 1 (ddof=1)."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise DataError("metabolite must be a vector with at least two values")
    if not np.all(np.isfinite(v)):
        raise DataError("metabolite contains NaN or infinite entries")
    if log:
        if np.any(v <= 0):
            raise DataError("log transform requires strictly positive metabolite values")
        v = np.log(v)
    centered = v - v.mean()
    sd = np.sqrt(np.dot(centered, centered) / (v.size - 1))
    if sd == 0 or sd <= 1e-14 * max(1.0, np.abs(v).max()):
        raise DataError("zero variance metabolite")
    return centered / sd


# --- CSV ingestion -----------------------------------------------------------


@dataclass(frozen=True)
class NumericTable:
    """A parsed ``sample_id,<col1>,<col2>,...`` CSV."""

    sample_ids: tuple
    columns: tuple
    values: np.ndarray
    path: str = field(default="<memory>", compare=False)

    def column(self, name: Optional[str] = None) -> np.ndarray:
        """Return one column; ``name=None`` is allowed only for single-column tables."""
        if name is None:
            if len(self.columns) != 1:
                raise DataError(
                    f"{self.path}: {len(self.columns)} value columns; choose one by name"
                )
            return self.values[:, 0]
        try:
            j = self.columns.index(name)
        except ValueError:
            raise DataError(f"{self.path}: column {name!r} not found") from None
        return self.values[:, j]


def read_numeric_csv(path) -> NumericTable:
    """Strictly parse a numeric CSV whose first column is ``sample_id``.

    Empty cells, non-numeric cells and ragged rows abort with the offending
    line number.
    """
    path = str(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if not header or header[0] != "sample_id":
            raise DataError(f"{path}:1: header must start with 'sample_id'")
        if len(header) < 2:
            raise DataError(f"{path}:1: header has no value columns")
        columns = _check_ids(header[1:], f"column names in {path}")
        samples, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            sid = row[0].strip()
            if not sid:
                raise DataError(f"{path}:{lineno}: empty sample_id")
            parsed = []
            for col, cell in zip(columns, row[1:]):
                cell = cell.strip()
                if not cell:
                    raise DataError(f"{path}:{lineno}: empty cell in column {col!r}")
                try:
                    x = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}:{lineno}: non-numeric value {cell!r} in column {col!r}"
                    ) from None
                if not np.isfinite(x):
                    raise DataError(f"{path}:{lineno}: non-finite value in column {col!r}")
                parsed.append(x)
            samples.append(sid)
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return NumericTable(
        _check_ids(samples, f"sample_ids in {path}"),
        columns,
        np.array(rows, dtype=float),
        path,
    )


def read_abundance_csv(path) -> AbundanceTable:
    t = read_numeric_csv(path)
    try:
        return AbundanceTable(t.values, t.columns, t.sample_ids)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def join_values(sample_ids: Sequence[str], table: NumericTable,
                column: Optional[str] = None) -> np.ndarray:
    """Reorder one column of ``table`` to follow ``sample_ids``.

    Every sample must be present on both sides.
    """
    values = table.column(column)
    index = {s: i for i, s in enumerate(table.sample_ids)}
    missing = [s for s in sample_ids if s not in index]
    if missing:
        raise DataError(f"{table.path}: no value for sample_id(s) {missing[:5]}")
    wanted = set(sample_ids)
    extra = [s for s in table.sample_ids if s not in wanted]
    if extra:
        raise DataError(f"{table.path}: unmatched sample_id(s) {extra[:5]}")
    return np.array([values[index[s]] for s in sample_ids])


def write_design_csv(design: DesignMatrix, path, fmt=".17g"):
    ids = design.sample_ids or tuple(f"s{i}" for i in range(design.n))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("sample_id",) + design.taxa_ids)
        for sid, row in zip(ids, design.values):
            w.writerow([sid] + [format(float(x), fmt) for x in row])
