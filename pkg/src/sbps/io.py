"""CSV ingestion and export of unit-level datasets.

The expected layout is one header row plus one row per unit with columns
``z`` (0/1 treatment), ``g`` (subgroup label, arbitrary), optionally
``y`` (outcome) and ``id``, and one column per covariate.  Subgroup
labels are mapped to contiguous integers 1..R (numeric labels sort
numerically, others lexicographically) and the mapping is recorded so
reports can restore the original labels.  Parse errors cite the file
line; structural problems (e.g. an empty subgroup arm, z = 2) surface as
dataset validation errors naming the unit or subgroup.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .data import Dataset, InvalidDatasetError, validate

RESERVED_COLUMNS = ("id", "z", "g", "y")


class CsvParseError(ValueError):
    """A cell or row could not be parsed; carries file and line number."""

    def __init__(self, path: Union[str, Path], line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


@dataclass
class LoadedDataset:
    """A validated dataset plus the subgroup label mapping used."""

    dataset: Dataset
    label_mapping: dict[str, int]

    def original_label(self, r: int) -> str:
        for label, idx in self.label_mapping.items():
            if idx == r:
                return label
        return str(r)


def _parse_float(raw: str, path, line: int, column: str) -> float:
    text = raw.strip()
    if not text:
        raise CsvParseError(path, line, f"column {column!r} is empty "
                            "(missing values are not supported)")
    try:
        return float(text)
    except ValueError:
        raise CsvParseError(
            path, line, f"column {column!r}: {raw!r} is not numeric") from None


def _map_labels(labels: list[str]) -> dict[str, int]:
    unique = sorted(set(labels))
    try:
        unique.sort(key=float)
    except ValueError:
        pass  # non-numeric labels stay lexicographic
    return {label: i + 1 for i, label in enumerate(unique)}


def _read_rows(path: Union[str, Path]) -> tuple[list[str], list[tuple[int, list[str]]]]:
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(path, 1, "file is empty") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise CsvParseError(path, 1, "duplicate column names in header")
        rows = []
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CsvParseError(path, line,
                                    f"expected {len(header)} fields, got {len(row)}")
            rows.append((line, row))
    if not rows:
        raise CsvParseError(path, 2, "no data rows")
    return header, rows


def read_dataset(path: Union[str, Path],
                 covariates: Optional[Sequence[str]] = None,
                 require_outcome: bool = True) -> LoadedDataset:
    """Load and validate a unit-level CSV.

    ``covariates`` selects covariate columns by name; by default every
    column other than id/z/g/y is a covariate.  Set
    ``require_outcome=False`` for balance-only files without ``y``.

    Raises
    ------
    CsvParseError
        On structural or cell-level parse problems (with line numbers).
    InvalidDatasetError
        When the parsed dataset violates the dataset invariants.
    """
    header, rows = _read_rows(path)
    col = {name: i for i, name in enumerate(header)}
    for required in ("z", "g"):
        if required not in col:
            raise CsvParseError(path, 1, f"missing required column {required!r}")
    has_y = "y" in col
    if require_outcome and not has_y:
        raise CsvParseError(path, 1, "missing required column 'y' "
                            "(pass require_outcome=False for balance-only data)")
    if covariates is None:
        covariates = [h for h in header if h not in RESERVED_COLUMNS]
    else:
        for name in covariates:
            if name not in col:
                raise CsvParseError(path, 1, f"covariate column {name!r} not found")
    if not covariates:
        raise CsvParseError(path, 1, "no covariate columns")

    n = len(rows)
    z = np.zeros(n, dtype=np.int64)
    x = np.zeros((n, len(covariates)))
    y = np.zeros(n) if has_y else None
    g_labels = []
    ids = []
    for i, (line, row) in enumerate(rows):
        z_val = _parse_float(row[col["z"]], path, line, "z")
        if not z_val.is_integer():
            raise CsvParseError(path, line,
                                f"column 'z': {row[col['z']]!r} is not an integer")
        z[i] = int(z_val)
        g_labels.append(row[col["g"]].strip())
        if not g_labels[-1]:
            raise CsvParseError(path, line, "column 'g' is empty")
        for j, name in enumerate(covariates):
            x[i, j] = _parse_float(row[col[name]], path, line, name)
        if has_y:
            y[i] = _parse_float(row[col["y"]], path, line, "y")
        ids.append(row[col["id"]].strip() if "id" in col else str(i))

    mapping = _map_labels(g_labels)
    g = np.array([mapping[label] for label in g_labels], dtype=np.int64)
    dataset = Dataset(z=z, g=g, x=x, y=y, R=len(mapping), ids=ids,
                      covariate_names=list(covariates))
    violations = validate(dataset)
    if violations:
        raise InvalidDatasetError(violations)
    return LoadedDataset(dataset=dataset, label_mapping=mapping)


def write_dataset(dataset: Dataset, path: Union[str, Path],
                  label_mapping: Optional[dict[str, int]] = None) -> None:
    """Write a dataset back to CSV (full double precision).

    ``label_mapping`` restores original subgroup labels; otherwise the
    contiguous integer labels are written.
    """
    inverse = {}
    if label_mapping:
        inverse = {r: label for label, r in label_mapping.items()}
    ids = dataset.ids or [str(i) for i in range(dataset.n)]
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        header = ["id", "z", "g"] + (["y"] if dataset.y is not None else []) \
            + list(dataset.covariate_names)
        writer.writerow(header)
        for i in range(dataset.n):
            row = [ids[i], str(int(dataset.z[i])),
                   inverse.get(int(dataset.g[i]), str(int(dataset.g[i])))]
            if dataset.y is not None:
                row.append(repr(float(dataset.y[i])))
            row.extend(repr(float(v)) for v in dataset.x[i])
            writer.writerow(row)


def read_covariate_table(path: Union[str, Path],
                         covariates: Optional[Sequence[str]] = None,
                         ) -> tuple[np.ndarray, np.ndarray, list[str], dict[str, int]]:
    """Load covariates and subgroup labels only (for semi-synthetic data).

    Returns (x, g, covariate_names, label_mapping); any z/y columns in
    the file are ignored.
    """
    header, rows = _read_rows(path)
    col = {name: i for i, name in enumerate(header)}
    if "g" not in col:
        raise CsvParseError(path, 1, "missing required column 'g'")
    if covariates is None:
        covariates = [h for h in header if h not in RESERVED_COLUMNS]
    else:
        for name in covariates:
            if name not in col:
                raise CsvParseError(path, 1, f"covariate column {name!r} not found")
    if not covariates:
        raise CsvParseError(path, 1, "no covariate columns")

    x = np.zeros((len(rows), len(covariates)))
    g_labels = []
    for i, (line, row) in enumerate(rows):
        g_labels.append(row[col["g"]].strip())
        if not g_labels[-1]:
            raise CsvParseError(path, line, "column 'g' is empty")
        for j, name in enumerate(covariates):
            x[i, j] = _parse_float(row[col[name]], path, line, name)
    mapping = _map_labels(g_labels)
    g = np.array([mapping[label] for label in g_labels], dtype=np.int64)
    return x, g, list(covariates), mapping
