"""Tabular data loading, schema handling, and column-wise (vertical) partitioning.

A dataset is split column by column into feature subsets: each subset pairs
one input feature column with the target column, so gain-ratio work for a
feature never needs any other column. Subsets are the unit of allocation in
the cluster simulator, so they carry a deterministic serialized size.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"
QUANTITATIVE = "quantitative"

SUBSET_MAGIC = b"FSUB"
SUBSET_HEADER_BYTES = 16  # magic(4) + feature index u32 + row count u64
ROW_INDEX_BYTES = 8
CATEGORICAL_VALUE_BYTES = 4
CONTINUOUS_VALUE_BYTES = 8


class DatasetError(ValueError):
    """Malformed schema, row, or value."""


@dataclass(frozen=True)
class FeatureDescriptor:
    name: str
    kind: str
    values: tuple[str, ...] | None = None  # closed vocabulary if given

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, CONTINUOUS):
            raise DatasetError(f"unknown feature kind {self.kind!r} for {self.name!r}")


@dataclass(frozen=True)
class Schema:
    """Column descriptors with the target in the last position."""

    feature_descriptors: tuple[FeatureDescriptor, ...]
    class_labels: tuple[str, ...] | str  # label tuple, or QUANTITATIVE marker

    def __post_init__(self):
        if len(self.feature_descriptors) < 1:
            raise DatasetError("schema has no columns")
        names = [f.name for f in self.feature_descriptors]
        if len(set(names)) != len(names):
            raise DatasetError("feature names are not unique")
        if self.class_labels == QUANTITATIVE:
            if self.feature_descriptors[-1].kind != CONTINUOUS:
                raise DatasetError("quantitative target must be a continuous column")
        else:
            if not self.class_labels:
                raise DatasetError("class_labels empty for a classification schema")
            if len(set(self.class_labels)) != len(self.class_labels):
                raise DatasetError("duplicate class labels")

    @property
    def m(self) -> int:
        return len(self.feature_descriptors)

    @property
    def target_index(self) -> int:
        return self.m - 1

    @property
    def is_regression(self) -> bool:
        return self.class_labels == QUANTITATIVE

    @property
    def inputs(self) -> tuple[FeatureDescriptor, ...]:
        return self.feature_descriptors[:-1]

    @property
    def target(self) -> FeatureDescriptor:
        return self.feature_descriptors[-1]

    def to_dict(self) -> dict:
        feats = []
        for f in self.inputs:
            d = {"name": f.name, "kind": f.kind}
            if f.values is not None:
                d["values"] = list(f.values)
            feats.append(d)
        if self.is_regression:
            target = {"name": self.target.name, "kind": QUANTITATIVE}
        else:
            target = {
                "name": self.target.name,
                "kind": CATEGORICAL,
                "classes": list(self.class_labels),
            }
        return {"features": feats, "target": target}

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        try:
            feats = tuple(
                FeatureDescriptor(
                    f["name"], f["kind"],
                    tuple(f["values"]) if "values" in f else None,
                )
                for f in d["features"]
            )
            target = d["target"]
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"bad schema document: {exc}") from exc
        if target.get("kind") == QUANTITATIVE:
            descr = feats + (FeatureDescriptor(target["name"], CONTINUOUS),)
            return cls(descr, QUANTITATIVE)
        classes = tuple(str(c) for c in target.get("classes", ()))
        descr = feats + (FeatureDescriptor(target["name"], CATEGORICAL, classes),)
        return cls(descr, classes)


def load_schema(path: str | Path) -> Schema:
    with open(path) as fh:
        return Schema.from_dict(json.load(fh))


@dataclass(frozen=True)
class Dataset:
    """Immutable table: one numpy column per schema column."""

    schema: Schema
    columns: tuple[np.ndarray, ...]

    @property
    def n(self) -> int:
        return len(self.columns[0]) if self.columns else 0

    @property
    def m(self) -> int:
        return self.schema.m

    def row(self, i: int) -> tuple:
        return tuple(col[i] for col in self.columns)

    @property
    def rows(self) -> list[tuple]:
        return [self.row(i) for i in range(self.n)]

    @classmethod
    def from_rows(cls, schema: Schema, rows: list[tuple]) -> "Dataset":
        cols = []
        for j, descr in enumerate(schema.feature_descriptors):
            raw = [r[j] for r in rows]
            if descr.kind == CONTINUOUS:
                arr = np.asarray(raw, dtype=np.float64)
                if arr.size and not np.all(np.isfinite(arr)):
                    raise DatasetError(f"non-finite value in column {descr.name!r}")
            else:
                arr = np.asarray([str(v) for v in raw], dtype=object)
            cols.append(arr)
        return cls(schema, tuple(cols))


def _parse_value(raw: str, descr: FeatureDescriptor, row_no: int):
    if raw == "":
        raise DatasetError(f"row {row_no}: missing value for {descr.name!r}")
    if descr.kind == CONTINUOUS:
        try:
            v = float(raw)
        except ValueError:
            raise DatasetError(
                f"row {row_no}: {raw!r} is not a number for {descr.name!r}"
            ) from None
        if not math.isfinite(v):
            raise DatasetError(f"row {row_no}: non-finite value for {descr.name!r}")
        return v
    if descr.values is not None and raw not in descr.values:
        raise DatasetError(f"row {row_no}: unknown value {raw!r} for {descr.name!r}")
    return raw


def load_csv(path: str | Path, schema: Schema) -> Dataset:
    """Load an RFC-4180 CSV whose header matches the schema column names."""
    expected = [f.name for f in schema.feature_descriptors]
    rows: list[tuple] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file, header expected") from None
        if header != expected:
            raise DatasetError(f"{path}: header {header} does not match schema {expected}")
        for row_no, raw in enumerate(reader, start=1):
            if len(raw) != schema.m:
                raise DatasetError(
                    f"row {row_no}: expected {schema.m} values, got {len(raw)}"
                )
            rows.append(tuple(
                _parse_value(v, d, row_no)
                for v, d in zip(raw, schema.feature_descriptors)
            ))
    if not schema.is_regression:
        for row_no, r in enumerate(rows, start=1):
            if r[-1] not in schema.class_labels:
                raise DatasetError(f"row {row_no}: unknown class label {r[-1]!r}")
    return Dataset.from_rows(schema, rows)


@dataclass(frozen=True)
class FeatureSubset:
    """One input feature column paired with the target column.

    ``values`` holds the raw feature column over all rows in ascending row
    order; ``value_codes`` are indexes into ``vocab`` for categorical columns
    (and an empty array otherwise). ``target_codes`` are class-label indexes
    for classification and the raw float targets for regression.
    """

    feature_index: int
    kind: str
    values: np.ndarray
    value_codes: np.ndarray
    vocab: tuple[str, ...]
    targets: np.ndarray
    target_codes: np.ndarray
    n_classes: int  # 0 for regression

    @property
    def n(self) -> int:
        return len(self.values)

    def entries(self):
        """Triples of (row index, feature value, target value)."""
        for i in range(self.n):
            yield (i, self.values[i], self.targets[i])


def vertical_partition(d: Dataset) -> list[FeatureSubset]:
    """Split a dataset into one subset per input feature.

    Every subset duplicates the target column, so each one is self-contained
    for split evaluation.
    """
    if d.m < 2:
        raise DatasetError("cannot partition: no input features")
    schema = d.schema
    target_col = d.columns[schema.target_index]
    if schema.is_regression:
        targets = np.asarray(target_col, dtype=np.float64)
        target_codes = targets
        n_classes = 0
    else:
        targets = target_col
        label_index = {c: i for i, c in enumerate(schema.class_labels)}
        target_codes = np.asarray([label_index[v] for v in target_col], dtype=np.int64)
        n_classes = len(schema.class_labels)
    subsets = []
    for j, descr in enumerate(schema.inputs):
        col = d.columns[j]
        if descr.kind == CONTINUOUS:
            values = np.asarray(col, dtype=np.float64)
            codes = np.empty(0, dtype=np.int64)
            vocab: tuple[str, ...] = ()
        else:
            values = col
            vocab = tuple(sorted(set(str(v) for v in col)))
            code_of = {v: i for i, v in enumerate(vocab)}
            codes = np.asarray([code_of[str(v)] for v in col], dtype=np.int64)
        subsets.append(FeatureSubset(
            feature_index=j, kind=descr.kind, values=values, value_codes=codes,
            vocab=vocab, targets=targets, target_codes=target_codes,
            n_classes=n_classes,
        ))
    return subsets


def column_entry_bytes(kind: str, regression: bool) -> int:
    value = CONTINUOUS_VALUE_BYTES if kind == CONTINUOUS else CATEGORICAL_VALUE_BYTES
    target = CONTINUOUS_VALUE_BYTES if regression else CATEGORICAL_VALUE_BYTES
    return ROW_INDEX_BYTES + value + target


def subset_entry_bytes(fs: FeatureSubset) -> int:
    return column_entry_bytes(fs.kind, fs.n_classes == 0)


def subset_size_bytes(fs: FeatureSubset) -> int:
    """Serialized size of a subset: fixed header plus fixed-width entries."""
    return SUBSET_HEADER_BYTES + fs.n * subset_entry_bytes(fs)


def serialize_subset(fs: FeatureSubset) -> bytes:
    """Reference wire form backing subset_size_bytes (little-endian)."""
    out = bytearray()
    out += SUBSET_MAGIC
    out += struct.pack("<IQ", fs.feature_index, fs.n)
    regression = fs.n_classes == 0
    vfmt = "<d" if fs.kind == CONTINUOUS else "<I"
    tfmt = "<d" if regression else "<I"
    for i in range(fs.n):
        out += struct.pack("<Q", i)
        if fs.kind == CONTINUOUS:
            out += struct.pack(vfmt, float(fs.values[i]))
        else:
            out += struct.pack(vfmt, int(fs.value_codes[i]))
        if regression:
            out += struct.pack(tfmt, float(fs.target_codes[i]))
        else:
            out += struct.pack(tfmt, int(fs.target_codes[i]))
    return bytes(out)
