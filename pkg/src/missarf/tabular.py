"""Mixed numeric/categorical tables with explicit missing cells.

A :class:`Dataset` stores every cell in one float64 matrix: numeric cells hold
their value, categorical cells hold the integer code of their label within the
column's category list, and missing cells hold NaN. The matrix is read-only
once the dataset is constructed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"

NA_TOKENS = ("", "NA")
MAX_CATEGORIES = 64


class SchemaError(ValueError):
    """Data does not conform to a column schema."""


class DataError(ValueError):
    """Malformed input data (bad rows, empty files, unparsable values)."""


class _Missing:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "MISSING"

    def __bool__(self) -> bool:
        return False

    def __reduce__(self):
        return (_Missing, ())


MISSING = _Missing()


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str = NUMERIC
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        cats = tuple(self.categories)
        object.__setattr__(self, "categories", cats)
        if self.kind == NUMERIC and cats:
            raise SchemaError(f"numeric column {self.name!r} cannot have categories")
        if len(set(cats)) != len(cats):
            raise SchemaError(f"column {self.name!r}: duplicate category labels")
        if any(c == "" for c in cats):
            raise SchemaError(f"column {self.name!r}: empty category label")
        if len(cats) > MAX_CATEGORIES:
            raise SchemaError(
                f"column {self.name!r}: at most {MAX_CATEGORIES} categories supported"
            )

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    def code(self, label: str) -> int:
        try:
            return self.categories.index(label)
        except ValueError:
            raise SchemaError(
                f"column {self.name!r}: unknown category {label!r}"
            ) from None


def numeric(name: str) -> ColumnSchema:
    return ColumnSchema(name, NUMERIC)


def categorical(name: str, categories: Iterable[str] = ()) -> ColumnSchema:
    return ColumnSchema(name, CATEGORICAL, tuple(categories))


class Dataset:
    """An immutable n x p table of numeric values, category labels and MISSING cells.

    Args:
        schema: one :class:`ColumnSchema` per column.
        values: (n, p) float array; categorical columns carry category codes,
            NaN marks a missing cell.
    """

    __slots__ = ("schema", "values")

    def __init__(self, schema: Sequence[ColumnSchema], values):
        schema = tuple(schema)
        arr = np.array(values, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise SchemaError("values must be a 2-d array")
        n, p = arr.shape
        if n < 1:
            raise DataError("no rows")
        if p < 1 or p != len(schema):
            raise SchemaError(f"schema has {len(schema)} columns, values have {p}")
        if len({c.name for c in schema}) != p:
            raise SchemaError("duplicate column names")
        for j, col in enumerate(schema):
            x = arr[:, j]
            if np.isinf(x).any():
                raise DataError(f"column {col.name!r}: infinite values are not supported")
            if col.is_categorical:
                obs = x[~np.isnan(x)]
                bad = (obs != np.round(obs)) | (obs < 0) | (obs >= len(col.categories))
                if bad.any():
                    raise SchemaError(f"column {col.name!r}: invalid category code")
        arr.setflags(write=False)
        self.schema = schema
        self.values = arr

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_rows(cls, schema: Sequence[ColumnSchema], rows: Iterable[Sequence]) -> "Dataset":
        """Build a dataset from cell rows (floats, labels or MISSING)."""
        schema = tuple(schema)
        out = []
        for i, row in enumerate(rows):
            if len(row) != len(schema):
                raise DataError(f"row {i}: expected {len(schema)} cells, got {len(row)}")
            out.append([_encode_cell(col, cell) for col, cell in zip(schema, row)])
        if not out:
            raise DataError("no rows")
        return cls(schema, np.array(out, dtype=np.float64))

    @classmethod
    def from_array(cls, values, names: Sequence[str] | None = None) -> "Dataset":
        """All-numeric dataset from an array; NaN marks missing cells."""
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 2:
            raise SchemaError("values must be a 2-d array")
        if names is None:
            names = [f"x{j + 1}" for j in range(arr.shape[1])]
        return cls([numeric(nm) for nm in names], arr)

    def with_values(self, values) -> "Dataset":
        return Dataset(self.schema, values)

    # -- accessors ------------------------------------------------------------

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.schema]

    @property
    def is_categorical(self) -> np.ndarray:
        return np.array([c.is_categorical for c in self.schema], dtype=bool)

    @property
    def n_categories(self) -> np.ndarray:
        return np.array([len(c.categories) for c in self.schema], dtype=np.int64)

    @property
    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    def has_missing(self) -> bool:
        return bool(np.isnan(self.values).any())

    def column_index(self, name: str) -> int:
        for j, col in enumerate(self.schema):
            if col.name == name:
                return j
        raise SchemaError(f"no column named {name!r}")

    def cell(self, i: int, j: int):
        return _decode_cell(self.schema[j], self.values[i, j])

    def row(self, i: int) -> list:
        return [self.cell(i, j) for j in range(self.p)]

    def rows(self) -> Iterable[list]:
        for i in range(self.n):
            yield self.row(i)

    def take(self, idx) -> "Dataset":
        return Dataset(self.schema, self.values[np.asarray(idx)])

    def same_schema(self, other: "Dataset") -> bool:
        return self.schema == other.schema

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.schema == other.schema and np.array_equal(
            self.values, other.values, equal_nan=True
        )

    def __hash__(self):
        return hash((self.schema, self.values.tobytes()))

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, p={self.p}, columns={self.names})"


def _encode_cell(col: ColumnSchema, cell) -> float:
    if cell is MISSING or cell is None:
        return math.nan
    if col.is_categorical:
        return float(col.code(str(cell)))
    if isinstance(cell, str):
        raise SchemaError(f"column {col.name!r}: expected a number, got {cell!r}")
    value = float(cell)
    return value


def _decode_cell(col: ColumnSchema, value: float):
    if math.isnan(value):
        return MISSING
    if col.is_categorical:
        return col.categories[int(value)]
    return float(value)


# -- CSV ----------------------------------------------------------------------


def _parse_float(text: str, col: str, lineno: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise SchemaError(
            f"line {lineno}: column {col!r} is numeric but got {text!r}"
            " (declare categorical columns in the schema)"
        ) from None
    if math.isnan(value) or math.isinf(value):
        raise DataError(f"line {lineno}: column {col!r}: non-finite value {text!r}")
    return value


def read_csv(path, schema_hint: Sequence[ColumnSchema] | None = None) -> Dataset:
    """Read a CSV file with a mandatory header row.

    Column types come from ``schema_hint`` only: columns it names take its
    kind, every other column is numeric. A categorical hint with an empty
    category list collects labels in order of first appearance; a hint with
    categories is fixed and rejects unknown labels. Empty cells and ``NA``
    are missing.
    """
    path = Path(path)
    hints = {c.name: c for c in (schema_hint or ())}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file (header row required)") from None
        unknown = set(hints) - set(header)
        if unknown:
            raise SchemaError(f"{path}: schema names unknown columns {sorted(unknown)}")
        raw_rows = []
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            raw_rows.append((lineno, row))
    if not raw_rows:
        raise DataError(f"{path}: no rows")

    schema = []
    values = np.empty((len(raw_rows), len(header)), dtype=np.float64)
    for j, name in enumerate(header):
        col = hints.get(name, ColumnSchema(name, NUMERIC))
        if col.is_categorical:
            cats = list(col.categories)
            fixed = bool(cats)
            lookup = {c: k for k, c in enumerate(cats)}
            for i, (lineno, row) in enumerate(raw_rows):
                text = row[j]
                if text in NA_TOKENS:
                    values[i, j] = math.nan
                    continue
                code = lookup.get(text)
                if code is None:
                    if fixed:
                        raise SchemaError(
                            f"{path}: line {lineno}: unknown category {text!r} in column {name!r}"
                        )
                    code = lookup[text] = len(cats)
                    cats.append(text)
                values[i, j] = code
            col = ColumnSchema(name, CATEGORICAL, tuple(cats))
        else:
            for i, (lineno, row) in enumerate(raw_rows):
                text = row[j].strip()
                values[i, j] = math.nan if text in NA_TOKENS else _parse_float(text, name, lineno)
        schema.append(col)
    return Dataset(schema, values)


def format_number(value: float) -> str:
    """Shortest text that parses back to exactly ``value``."""
    if value.is_integer() and abs(value) < 2**53 and math.copysign(1.0, value) > 0:
        return str(int(value))
    return repr(float(value))


def write_csv(data: Dataset, path) -> None:
    """Write ``data`` as RFC-4180 CSV; missing cells become ``NA``."""
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(data.names)
            for i in range(data.n):
                out = []
                for col, value in zip(data.schema, data.values[i]):
                    if math.isnan(value):
                        out.append("NA")
                    elif col.is_categorical:
                        out.append(col.categories[int(value)])
                    else:
                        out.append(format_number(float(value)))
                writer.writerow(out)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


# -- standardization ----------------------------------------------------------


@dataclass(frozen=True)
class StandardizationParams:
    """Per-column location and scale, keyed by column name."""

    mean: dict[str, float] = field(default_factory=dict)
    sd: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_data(cls, data: Dataset) -> "StandardizationParams":
        """Sample mean and SD (ddof=1) of the observed values of each numeric column.

        A constant or single-value column gets SD 1 so standardization is a
        pure shift.
        """
        mean, sd = {}, {}
        for j, col in enumerate(data.schema):
            if col.is_categorical:
                continue
            x = data.values[:, j]
            x = x[~np.isnan(x)]
            mu = float(x.mean()) if x.size else 0.0
            s = float(x.std(ddof=1)) if x.size > 1 else 0.0
            mean[col.name] = mu
            sd[col.name] = s if s > 0 else 1.0
        return cls(mean, sd)


def standardize(data: Dataset, params: StandardizationParams) -> Dataset:
    """Map every numeric cell to ``(x - mean) / sd``; other cells pass through."""
    out = np.array(data.values)
    for j, col in enumerate(data.schema):
        if col.is_categorical:
            continue
        if col.name not in params.mean or col.name not in params.sd:
            raise SchemaError(f"no standardization parameters for column {col.name!r}")
        sd = params.sd[col.name]
        if not sd > 0:
            raise SchemaError(f"column {col.name!r}: standard deviation must be positive")
        out[:, j] = (out[:, j] - params.mean[col.name]) / sd
    return Dataset(data.schema, out)
