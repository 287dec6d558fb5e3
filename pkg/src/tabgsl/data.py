"""Tabular dataset loading, validation, preprocessing and splitting.

Datasets arrive as a CSV file with a header row plus a JSON schema that
lists every column (in file order) as numeric, categorical, or the single
target column. Categorical values and target labels are mapped to dense
integer codes in order of first appearance in the file. Numeric columns
are standardized later, by :func:`preprocess`, using statistics from the
training split only.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

COLUMN_KINDS = ("numeric", "categorical", "target")


class DataError(ValueError):
    """Raised for malformed datasets, schemas, or split requests."""


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str

    def __post_init__(self):
        if not self.name:
            raise DataError("column name must be non-empty")
        if self.kind not in COLUMN_KINDS:
            raise DataError(f"column {self.name!r}: unknown kind {self.kind!r}")


@dataclass
class TabularDataset:
    """Numeric/categorical matrices with integer labels.

    x_num: (n, m_num) float64. x_cat: (n, m_cat) int64 dense codes.
    y: (n,) int64 class indices in [0, class_count).
    """

    x_num: np.ndarray
    x_cat: np.ndarray
    y: np.ndarray
    class_count: int
    schema: list[ColumnSchema]
    cat_cardinalities: list[int]
    cat_categories: list[list[str]] = field(default_factory=list)
    target_categories: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def m_num(self) -> int:
        return self.x_num.shape[1]

    @property
    def m_cat(self) -> int:
        return self.x_cat.shape[1]

    def validate(self) -> None:
        if self.n < 1:
            raise DataError("dataset must contain at least one row")
        if self.m_num + self.m_cat < 1:
            raise DataError("dataset must contain at least one feature column")
        if self.x_num.shape[0] != self.n or self.x_cat.shape[0] != self.n:
            raise DataError("feature matrices and labels disagree on row count")
        if not np.isfinite(self.x_num).all():
            raise DataError("numeric features contain non-finite values")
        if self.class_count < 2:
            raise DataError("need at least two target classes")
        if self.y.min() < 0 or self.y.max() >= self.class_count:
            raise DataError("labels outside [0, class_count)")
        for j, card in enumerate(self.cat_cardinalities):
            col = self.x_cat[:, j]
            if col.min() < 0 or col.max() >= card:
                raise DataError(f"categorical column {j} has codes outside its cardinality {card}")

    def numeric_schema(self) -> list[ColumnSchema]:
        return [c for c in self.schema if c.kind == "numeric"]

    def categorical_schema(self) -> list[ColumnSchema]:
        return [c for c in self.schema if c.kind == "categorical"]


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray

    def validate(self, n: int) -> None:
        parts = [self.train, self.valid, self.test]
        combined = np.concatenate(parts)
        if combined.size != n or not np.array_equal(np.sort(combined), np.arange(n)):
            raise DataError("split indices must be disjoint and cover [0, n)")


@dataclass(frozen=True)
class Standardizer:
    """Per-column affine transform fitted on the training split."""

    mean: np.ndarray
    std: np.ndarray

    def transform(self, x_num: np.ndarray) -> np.ndarray:
        return (x_num - self.mean) / self.std

    def inverse_transform(self, x_std: np.ndarray) -> np.ndarray:
        return x_std * self.std + self.mean


def load_schema(schema_path: str | Path) -> list[ColumnSchema]:
    """Load and validate a JSON column schema."""
    try:
        raw = json.loads(Path(schema_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read schema {schema_path}: {exc}") from exc
    if not isinstance(raw, list) or not raw:
        raise DataError("schema must be a non-empty JSON array of {name, kind} objects")
    columns = []
    for entry in raw:
        if not isinstance(entry, dict) or set(entry) != {"name", "kind"}:
            raise DataError(f"schema entry {entry!r} must have exactly the keys 'name' and 'kind'")
        columns.append(ColumnSchema(name=str(entry["name"]), kind=str(entry["kind"])))
    names = [c.name for c in columns]
    if len(set(names)) != len(names):
        raise DataError("schema column names must be unique")
    targets = [c for c in columns if c.kind == "target"]
    if len(targets) != 1:
        raise DataError(f"schema must declare exactly one target column, found {len(targets)}")
    return columns


def load_dataset(csv_path: str | Path, schema_path: str | Path) -> TabularDataset:
    """Load a CSV file against its schema.

    Numeric columns are parsed to float64 but not standardized. Categorical
    and target values are coded by first appearance. Missing cells are
    rejected.
    """
    schema = load_schema(schema_path)
    try:
        with open(csv_path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read dataset {csv_path}: {exc}") from exc
    if not rows:
        raise DataError("CSV file is empty")
    header, data_rows = rows[0], rows[1:]
    expected = [c.name for c in schema]
    if header != expected:
        raise DataError(
            f"column mismatch: CSV header {header} does not match schema columns {expected}"
        )
    if not data_rows:
        raise DataError("CSV contains a header but no data rows")

    num_cols = [i for i, c in enumerate(schema) if c.kind == "numeric"]
    cat_cols = [i for i, c in enumerate(schema) if c.kind == "categorical"]
    target_col = next(i for i, c in enumerate(schema) if c.kind == "target")

    n = len(data_rows)
    x_num = np.zeros((n, len(num_cols)), dtype=np.float64)
    x_cat = np.zeros((n, len(cat_cols)), dtype=np.int64)
    y = np.zeros(n, dtype=np.int64)
    cat_codes: list[dict[str, int]] = [{} for _ in cat_cols]
    target_codes: dict[str, int] = {}

    for r, row in enumerate(data_rows):
        if len(row) != len(schema):
            raise DataError(f"row {r + 1}: expected {len(schema)} cells, found {len(row)}")
        for cell, col in zip(row, schema):
            if cell == "":
                raise DataError(f"row {r + 1}: missing value in column {col.name!r}")
        for j, i in enumerate(num_cols):
            token = row[i]
            try:
                value = float(token)
            except ValueError:
                raise DataError(
                    f"row {r + 1}: non-numeric token {token!r} in numeric column "
                    f"{schema[i].name!r}"
                ) from None
            if not math.isfinite(value):
                raise DataError(
                    f"row {r + 1}: non-finite value in numeric column {schema[i].name!r}"
                )
            x_num[r, j] = value
        for j, i in enumerate(cat_cols):
            x_cat[r, j] = cat_codes[j].setdefault(row[i], len(cat_codes[j]))
        y[r] = target_codes.setdefault(row[target_col], len(target_codes))

    ds = TabularDataset(
        x_num=x_num,
        x_cat=x_cat,
        y=y,
        class_count=len(target_codes),
        schema=schema,
        cat_cardinalities=[len(codes) for codes in cat_codes],
        cat_categories=[list(codes) for codes in cat_codes],
        target_categories=list(target_codes),
    )
    ds.validate()
    return ds


def preprocess(ds: TabularDataset, fit_on: SplitIndices) -> tuple[TabularDataset, Standardizer]:
    """Standardize numeric columns using train-split statistics.

    Uses population std. Columns with (near) zero variance on the train
    split get std clamped to 1 and therefore standardize to all zeros
    around the train mean. Categorical codes pass through untouched.
    """
    fit_on.validate(ds.n)
    train_block = ds.x_num[fit_on.train]
    mean = train_block.mean(axis=0) if ds.m_num else np.zeros(0)
    std = train_block.std(axis=0) if ds.m_num else np.zeros(0)
    constant = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    std = np.where(constant, 1.0, std)
    scaler = Standardizer(mean=mean, std=std)
    x_std = scaler.transform(ds.x_num)
    if ds.m_num:
        x_std[:, constant] = 0.0
    out = TabularDataset(
        x_num=x_std,
        x_cat=ds.x_cat.copy(),
        y=ds.y.copy(),
        class_count=ds.class_count,
        schema=ds.schema,
        cat_cardinalities=list(ds.cat_cardinalities),
        cat_categories=[list(c) for c in ds.cat_categories],
        target_categories=list(ds.target_categories),
    )
    out.validate()
    return out, scaler


def stratified_split(
    ds: TabularDataset, ratios: tuple[float, float, float], seed: int
) -> SplitIndices:
    """Split instances into train/valid/test preserving class proportions.

    Per class, counts follow the requested ratios via largest-remainder
    rounding, so every class lands within one instance of its target in
    each split. Deterministic for a fixed seed. Raises if any class would
    leave some split empty.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise DataError("need three positive split ratios")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {sum(ratios)}")

    rng = np.random.default_rng(seed)
    buckets: list[list[np.ndarray]] = [[], [], []]
    allocated = np.zeros(3)
    targeted = np.zeros(3)
    for cls in range(ds.class_count):
        members = np.flatnonzero(ds.y == cls)
        rng.shuffle(members)
        counts = _largest_remainder(len(members), ratios, targeted - allocated)
        allocated += counts
        targeted += np.asarray(ratios) * len(members)
        for s, count in enumerate(counts):
            if count == 0:
                split_name = ("train", "valid", "test")[s]
                raise DataError(
                    f"class {cls} leaves the {split_name} split empty; "
                    f"{len(members)} instances are too few for ratios {ratios}"
                )
        offsets = np.cumsum(counts)
        buckets[0].append(members[: offsets[0]])
        buckets[1].append(members[offsets[0] : offsets[1]])
        buckets[2].append(members[offsets[1] :])

    split = SplitIndices(
        train=np.sort(np.concatenate(buckets[0])),
        valid=np.sort(np.concatenate(buckets[1])),
        test=np.sort(np.concatenate(buckets[2])),
    )
    split.validate(ds.n)
    return split


def _largest_remainder(
    total: int, ratios: tuple[float, float, float], deficits: np.ndarray
) -> list[int]:
    exact = [total * r for r in ratios]
    counts = [int(math.floor(e)) for e in exact]
    remainders = [e - c for e, c in zip(exact, counts)]
    leftover = total - sum(counts)
    # Remainder ties resolve toward the split lagging its global target,
    # so e.g. two balanced classes at 70/15/15 land on 70/15/15 overall.
    order = sorted(range(3), key=lambda s: (-remainders[s], -deficits[s], s))
    for s in order[:leftover]:
        counts[s] += 1
    return counts


def dense_features(ds: TabularDataset) -> np.ndarray:
    """Numeric block concatenated with one-hot encoded categoricals."""
    blocks = []
    if ds.m_num:
        blocks.append(ds.x_num)
    for j, card in enumerate(ds.cat_cardinalities):
        onehot = np.zeros((ds.n, card), dtype=np.float64)
        onehot[np.arange(ds.n), ds.x_cat[:, j]] = 1.0
        blocks.append(onehot)
    if not blocks:
        raise DataError("dataset has no feature columns")
    return np.concatenate(blocks, axis=1)
