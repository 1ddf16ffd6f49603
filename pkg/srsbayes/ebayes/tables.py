"""
Contingency-table data model for SRS report counts.

A table holds I AE rows by J drug columns of report counts N_ij. By
convention the last row ("Other AEs") and the last column ("Other drugs")
are the reference categories. This module loads tables from CSV, collapses
AE rows into the reference row, and estimates the null baseline expected
counts E_ij with either the marginal estimator N_i. N_.j / N_.. or the
reference-subtable estimator N_iJ N_Ij / N_IJ.

Tables and expected counts are immutable once built, so they can be shared
read-only between concurrent fits.
"""

import csv
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DataError, TableFormatError

# Standard logger for this module
logger = logging.getLogger(__name__)

EXPECTED_METHODS = ('subtable', 'marginal')


def _frozen(array, dtype):
    array = np.array(array, dtype=dtype)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    """
    An I x J table of AE-drug report counts.

    Attributes:
        counts (np.ndarray): Nonnegative integer counts, shape (I, J).
        ae_names (tuple[str]): Row labels; the last one is the reference AE.
        drug_names (tuple[str]): Column labels; the last one is the reference drug.
    """
    counts: np.ndarray
    ae_names: tuple
    drug_names: tuple

    def __post_init__(self):
        raw = np.asarray(self.counts)
        if raw.ndim != 2:
            raise DataError(f"counts must be a 2-d matrix, got {raw.ndim} dimension(s)")
        if not np.all(np.isfinite(raw)) or not np.all(raw == np.round(raw)):
            raise DataError("counts must be integers")
        if np.any(raw < 0):
            i, j = np.argwhere(raw < 0)[0]
            raise DataError(f"negative count at cell ({i + 1}, {j + 1})", row=int(i) + 1, column=int(j) + 1)
        n_rows, n_cols = raw.shape
        if n_rows < 2 or n_cols < 2:
            raise DataError(f"a table needs at least 2 rows and 2 columns, got {n_rows}x{n_cols}")
        ae_names = tuple(str(name) for name in self.ae_names)
        drug_names = tuple(str(name) for name in self.drug_names)
        if len(ae_names) != n_rows or len(drug_names) != n_cols:
            raise DataError(
                f"{len(ae_names)} AE names and {len(drug_names)} drug names given "
                f"for a {n_rows}x{n_cols} table"
            )
        for label, names in (('AE', ae_names), ('drug', drug_names)):
            seen = set()
            for name in names:
                if name in seen:
                    raise DataError(f"duplicate {label} name '{name}'")
                seen.add(name)
        object.__setattr__(self, 'counts', _frozen(raw, np.int64))
        object.__setattr__(self, 'ae_names', ae_names)
        object.__setattr__(self, 'drug_names', drug_names)

    @property
    def shape(self):
        return self.counts.shape

    @property
    def n_cells(self):
        return int(self.counts.size)

    @property
    def reference_row_index(self):
        """Zero-based index of the reference AE row (always the last row)."""
        return self.counts.shape[0] - 1

    @property
    def reference_col_index(self):
        """Zero-based index of the reference drug column (always the last column)."""
        return self.counts.shape[1] - 1

    @property
    def row_totals(self):
        return self.counts.sum(axis=1)

    @property
    def col_totals(self):
        return self.counts.sum(axis=0)

    @property
    def grand_total(self):
        return int(self.counts.sum())

    def to_dict(self):
        """Returns the JSON payload {ae_names, drug_names, counts}."""
        return {
            'ae_names': list(self.ae_names),
            'drug_names': list(self.drug_names),
            'counts': self.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(
            counts=payload['counts'],
            ae_names=payload['ae_names'],
            drug_names=payload['drug_names'],
        )

    def digest(self):
        """SHA-256 of the canonical JSON form; used to tie fit files to their table."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

    def with_reference(self, reference_row=None, reference_col=None):
        """
        Returns a copy where the named row and/or column is moved to the last
        position, so it becomes the reference category.
        """
        row_order = list(range(self.shape[0]))
        col_order = list(range(self.shape[1]))
        if reference_row is not None:
            if reference_row not in self.ae_names:
                raise DataError(f"reference AE '{reference_row}' is not a row of the table", row=reference_row)
            index = self.ae_names.index(reference_row)
            row_order.remove(index)
            row_order.append(index)
        if reference_col is not None:
            if reference_col not in self.drug_names:
                raise DataError(f"reference drug '{reference_col}' is not a column of the table", column=reference_col)
            index = self.drug_names.index(reference_col)
            col_order.remove(index)
            col_order.append(index)
        return ContingencyTable(
            counts=self.counts[np.ix_(row_order, col_order)],
            ae_names=[self.ae_names[i] for i in row_order],
            drug_names=[self.drug_names[j] for j in col_order],
        )


@dataclass(frozen=True, eq=False)
class ExpectedCounts:
    """
    Null baseline expected counts E_ij for a table.

    Attributes:
        values (np.ndarray): Positive finite reals, same shape as the table.
        method (str): 'subtable' or 'marginal'.
    """
    values: np.ndarray
    method: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError("expected counts must be a 2-d matrix")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise DataError("expected counts must be finite and strictly positive")
        if self.method not in EXPECTED_METHODS:
            raise DataError(f"unknown expected-count method '{self.method}'")
        object.__setattr__(self, 'values', _frozen(values, float))

    def to_dict(self):
        return {'method': self.method, 'values': self.values.tolist()}

    @classmethod
    def from_dict(cls, payload):
        return cls(values=payload['values'], method=payload['method'])


def load_table(path, reference_row=None, reference_col=None):
    """
    Reads a contingency table from a CSV file with row names.

    The first header field is ignored, the remaining header fields are drug
    names, and every following line is an AE name followed by one count per
    drug. Blank lines and lines starting with "#" are skipped.

    Args:
        path (str | Path): The CSV file.
        reference_row (str, optional): AE to move last as the reference row.
        reference_col (str, optional): Drug to move last as the reference column.

    Returns:
        ContingencyTable: Rows and columns in file order (reference last).

    Raises:
        TableFormatError: On a malformed header, a row of the wrong length, a
            non-integer or negative cell, or a duplicate name.
    """
    path = Path(path)
    if not path.is_file():
        raise TableFormatError(f"table file not found: {path}")

    # 'utf-8-sig' also accepts files saved with a byte order mark
    with path.open(newline='', encoding='utf-8-sig') as handle:
        rows = [
            row for row in csv.reader(handle)
            if any(field.strip() for field in row) and not row[0].lstrip().startswith('#')
        ]

    if not rows:
        raise TableFormatError(f"{path} is empty")
    header = [field.strip() for field in rows[0]]
    drug_names = header[1:]
    if len(drug_names) < 2:
        raise TableFormatError("the header must name at least two drug columns", row=1)
    duplicates = {name for name in drug_names if drug_names.count(name) > 1}
    if duplicates:
        raise TableFormatError(f"duplicate drug name '{sorted(duplicates)[0]}' in header", row=1,
                               column=sorted(duplicates)[0])

    ae_names = []
    counts = []
    for line_number, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise TableFormatError(
                f"line {line_number} has {len(row)} fields, expected {len(header)}",
                row=line_number,
            )
        ae_name = row[0].strip()
        if ae_name in ae_names:
            raise TableFormatError(f"duplicate AE name '{ae_name}' on line {line_number}", row=ae_name)
        values = []
        for drug_name, field in zip(drug_names, row[1:]):
            try:
                value = int(field.strip())
            except ValueError:
                raise TableFormatError(
                    f"cell ({ae_name}, {drug_name}) is not an integer: '{field}'",
                    row=ae_name, column=drug_name,
                ) from None
            if value < 0:
                raise TableFormatError(
                    f"cell ({ae_name}, {drug_name}) is negative: {value}",
                    row=ae_name, column=drug_name,
                )
            values.append(value)
        ae_names.append(ae_name)
        counts.append(values)

    if len(ae_names) < 2:
        raise TableFormatError("a table needs at least two AE rows")

    table = ContingencyTable(counts=counts, ae_names=ae_names, drug_names=drug_names)
    logger.info(f"Loaded {table.shape[0]}x{table.shape[1]} table from {path} (N.. = {table.grand_total})")
    if reference_row is not None or reference_col is not None:
        table = table.with_reference(reference_row, reference_col)
    return table


def collapse_rows(table, keep, reference_label='Other AEs'):
    """
    Keeps the named AE rows and sums every other row (including the old
    reference row) into a new reference row.

    Args:
        table (ContingencyTable): The source table.
        keep (list[str]): AE names to keep, in the order they should appear.
        reference_label (str): Label of the new reference row.

    Returns:
        ContingencyTable: A (len(keep) + 1) x J table with the same column sums.
    """
    keep = list(keep)
    if not keep:
        raise DataError("collapse_rows needs at least one AE to keep")
    unknown = [name for name in keep if name not in table.ae_names]
    if unknown:
        raise DataError(f"unknown AE name '{unknown[0]}'", row=unknown[0])
    reference_name = table.ae_names[table.reference_row_index]
    if reference_name in keep:
        raise DataError(f"the reference row '{reference_name}' cannot be kept", row=reference_name)
    if reference_label in keep:
        raise DataError(f"reference label '{reference_label}' clashes with a kept AE")

    keep_index = [table.ae_names.index(name) for name in keep]
    dropped = np.ones(table.shape[0], dtype=bool)
    dropped[keep_index] = False
    reference = table.counts[dropped].sum(axis=0)
    counts = np.vstack([table.counts[keep_index], reference])
    return ContingencyTable(counts=counts, ae_names=keep + [reference_label], drug_names=table.drug_names)


def estimate_null_expected_count(table, method='subtable'):
    """
    Estimates the null baseline expected counts.

    - 'marginal': E_ij = N_i. N_.j / N_..
    - 'subtable': E_ij = N_iJ N_Ij / N_IJ, so that N_ij / E_ij is the sample
      odds ratio of the 2x2 table formed with the reference row and column.

    Raises:
        DataError: When a marginal or reference count needed by the formula is
            zero. The message names the row/column and suggests an alternative.
    """
    counts = table.counts.astype(float)
    if method == 'marginal':
        grand_total = counts.sum()
        if grand_total <= 0:
            raise DataError("the table is empty (N.. = 0); marginal expected counts are undefined")
        row_totals = counts.sum(axis=1)
        col_totals = counts.sum(axis=0)
        if np.any(row_totals == 0):
            i = int(np.flatnonzero(row_totals == 0)[0])
            raise DataError(
                f"AE row '{table.ae_names[i]}' has no reports (N_i. = 0); "
                "drop or collapse the row before estimating expected counts",
                row=table.ae_names[i],
            )
        if np.any(col_totals == 0):
            j = int(np.flatnonzero(col_totals == 0)[0])
            raise DataError(
                f"drug column '{table.drug_names[j]}' has no reports (N.j = 0); "
                "drop the column before estimating expected counts",
                column=table.drug_names[j],
            )
        values = np.outer(row_totals, col_totals) / grand_total
    elif method == 'subtable':
        ref_row = counts[-1, :]
        ref_col = counts[:, -1]
        corner = counts[-1, -1]
        if corner <= 0:
            raise DataError(
                "the reference cell N_IJ is zero; use method='marginal' or collapse more rows "
                "into the reference row",
                row=table.ae_names[-1], column=table.drug_names[-1],
            )
        if np.any(ref_col == 0):
            i = int(np.flatnonzero(ref_col == 0)[0])
            raise DataError(
                f"AE row '{table.ae_names[i]}' has no reports with the reference drug (N_iJ = 0); "
                "use method='marginal' or collapse the row into the reference row",
                row=table.ae_names[i],
            )
        if np.any(ref_row == 0):
            j = int(np.flatnonzero(ref_row == 0)[0])
            raise DataError(
                f"drug column '{table.drug_names[j]}' has no reports with the reference AE (N_Ij = 0); "
                "use method='marginal'",
                column=table.drug_names[j],
            )
        values = np.outer(ref_col, ref_row) / corner
    else:
        raise DataError(f"unknown expected-count method '{method}'; choose one of {EXPECTED_METHODS}")
    return ExpectedCounts(values=values, method=method)


def expected_counts_for(table, method='subtable', fallback_marginal=False):
    """
    `estimate_null_expected_count` with the optional escape hatch used by the
    commands: when the subtable estimator hits a zero reference count and
    `fallback_marginal` is set, the marginal estimator is used instead.
    """
    try:
        return estimate_null_expected_count(table, method)
    except DataError as error:
        if method != 'subtable' or not fallback_marginal:
            raise
        logger.warning(f"Subtable expected counts unavailable ({error}); falling back to marginal")
        return estimate_null_expected_count(table, 'marginal')
