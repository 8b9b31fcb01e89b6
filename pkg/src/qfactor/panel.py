"""Balanced-panel data model, CSV ingestion, and per-unit standardization.

A panel is a T x N real matrix: rows are time periods, columns are
cross-section units.  Panels are immutable once constructed and may be
shared freely across threads.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import (
    BalancedPanelError,
    DegenerateColumnError,
    DimensionError,
    DomainError,
    ParseError,
)

__all__ = ["PanelData", "load_csv", "save_csv", "standardize", "unstandardize"]


@dataclass(frozen=True)
class PanelData:
    """T x N observation matrix with unit/time labels and standardization state.

    Attributes
    ----------
    values : ndarray, shape (T, N)
        Observations, time in rows, units in columns.
    unit_ids, time_ids : tuple of str
        Column and row labels; synthesized as ``u1..uN`` / ``t1..tT`` when
        not supplied.
    standardized : bool
        True when every column has been demeaned and scaled to unit variance.
    orig_means, orig_sds : ndarray, shape (N,), optional
        Column moments recorded by :func:`standardize` so the transform can
        be inverted.
    """

    values: np.ndarray
    unit_ids: tuple = ()
    time_ids: tuple = ()
    standardized: bool = False
    orig_means: np.ndarray | None = field(default=None, repr=False)
    orig_sds: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DimensionError(f"panel values must be 2-D, got ndim={values.ndim}")
        T, N = values.shape
        if T < 2 or N < 2:
            raise DimensionError(f"panel needs T >= 2 and N >= 2, got T={T}, N={N}")
        if not np.all(np.isfinite(values)):
            raise BalancedPanelError("panel contains missing or non-finite entries")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(
            self,
            "unit_ids",
            tuple(self.unit_ids) if self.unit_ids else tuple(f"u{i + 1}" for i in range(N)),
        )
        object.__setattr__(
            self,
            "time_ids",
            tuple(self.time_ids) if self.time_ids else tuple(f"t{t + 1}" for t in range(T)),
        )
        if len(self.unit_ids) != N:
            raise DimensionError(f"{len(self.unit_ids)} unit labels for {N} units")
        if len(self.time_ids) != T:
            raise DimensionError(f"{len(self.time_ids)} time labels for {T} periods")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple:
        return self.values.shape


def standardize(p: PanelData) -> PanelData:
    """Demean and scale every column to unit sample variance (divisor T-1).

    The original column moments are retained on the result so
    :func:`unstandardize` can reproduce the input exactly.
    """
    if p.standardized:
        raise DomainError("panel is already standardized")
    means = p.values.mean(axis=0)
    sds = p.values.std(axis=0, ddof=1)
    bad = np.flatnonzero(sds <= 0.0)
    if bad.size:
        unit = p.unit_ids[bad[0]]
        raise DegenerateColumnError(f"unit {unit!r} has zero variance", unit=unit)
    values = (p.values - means) / sds
    return replace(p, values=values, standardized=True, orig_means=means, orig_sds=sds)


def unstandardize(p: PanelData) -> PanelData:
    """Invert :func:`standardize` using the recorded column moments."""
    if not p.standardized:
        raise DomainError("panel is not standardized")
    if p.orig_means is None or p.orig_sds is None:
        raise DomainError("panel is missing the original column moments")
    values = p.values * p.orig_sds + p.orig_means
    return replace(p, values=values, standardized=False, orig_means=None, orig_sds=None)


def _parse_cell(text: str, row: int, col: int) -> float:
    cell = text.strip()
    if cell == "":
        raise BalancedPanelError(f"empty cell at row {row + 1}, column {col + 1}")
    try:
        return float(cell)
    except ValueError:
        raise ParseError(
            f"non-numeric cell {cell!r} at row {row + 1}, column {col + 1}",
            row=row + 1,
            column=col + 1,
        ) from None


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def load_csv(path, layout: str = "time-by-unit") -> PanelData:
    """Read a rectangular numeric CSV into a PanelData.

    An optional first row of labels and an optional first column of labels
    are detected by their non-numeric content.  ``layout`` says how the file
    is oriented; the returned panel is always time-by-unit.
    """
    if layout not in ("time-by-unit", "unit-by-time"):
        raise DomainError(f"unknown layout {layout!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise DimensionError(f"{path}: empty file")
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise BalancedPanelError(
                f"ragged CSV: row {i + 1} has {len(row)} cells, expected {width}"
            )

    # a header row / label column is any leading row/column whose cells are
    # not all numeric (blank corner cells permitted)
    has_header = any(c.strip() != "" and not _is_number(c) for c in rows[0])
    body = rows[1:] if has_header else rows
    if not body:
        raise DimensionError(f"{path}: no data rows")
    has_labels = any(not _is_number(r[0]) for r in body)

    row_labels = [r[0].strip() for r in body] if has_labels else None
    col_offset = 1 if has_labels else 0
    col_labels = (
        [c.strip() for c in rows[0][col_offset:]] if has_header else None
    )

    data = np.empty((len(body), width - col_offset))
    for i, row in enumerate(body):
        src_row = i + (1 if has_header else 0)
        for j, cell in enumerate(row[col_offset:]):
            data[i, j] = _parse_cell(cell, src_row, j + col_offset)

    if layout == "unit-by-time":
        data = data.T
        time_ids = col_labels
        unit_ids = row_labels
    else:
        time_ids = row_labels
        unit_ids = col_labels
    return PanelData(values=data, unit_ids=unit_ids or (), time_ids=time_ids or ())


def save_csv(p: PanelData, path) -> None:
    """Write a panel as time-by-unit CSV with 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["", *p.unit_ids])
        for t in range(p.T):
            writer.writerow([p.time_ids[t], *(f"{v:.17g}" for v in p.values[t])])
