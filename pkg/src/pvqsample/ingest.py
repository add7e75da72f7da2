"""Loading and preparing delimited data windows.

A :class:`Schema` names every column and its kind. Numeric columns become
features, one optional label column travels beside the matrix, and
categorical columns must be listed in ``drop``. An optional constant-1
column can be appended after the features.

Schema files are JSON::

    {
      "delimiter": ",",
      "header": false,
      "columns": [{"name": "duration", "kind": "numeric"}, ...],
      "drop": ["protocol_type", "service", "flag"],
      "dummy_feature": true,
      "label_strip": "."
    }

``label_strip`` removes trailing characters from labels (KDD files end every
label with a period).
"""

from __future__ import annotations

import csv
import gzip
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator

import numpy as np

from .core import DataMatrix, InvalidArgument, PVQError, as_labels

log = logging.getLogger(__name__)

KINDS = ("numeric", "categorical", "label")
BUILTIN_SCHEMAS = {"kddcup": "kddcup_schema.json"}
BUILTIN_LABEL_MAPS = {"kddcup-5": "kddcup_5class.json"}
_BLOCK_ROWS = 65_536


class ParseError(PVQError):
    """Input file does not match its schema."""


@dataclass(frozen=True)
class Column:
    name: str
    kind: str = "numeric"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"column {self.name!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...]
    drop: tuple[str, ...] = ()
    dummy_feature: bool = False
    delimiter: str = ","
    header: bool = False
    label_strip: str = ""

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise InvalidArgument("duplicate column names in schema")
        unknown = set(self.drop) - set(names)
        if unknown:
            raise InvalidArgument(f"drop list names unknown columns: {sorted(unknown)}")
        if sum(c.kind == "label" for c in self.columns) > 1:
            raise InvalidArgument("schema may have at most one label column")
        kept_categorical = [c.name for c in self.columns if c.kind == "categorical" and c.name not in self.drop]
        if kept_categorical:
            raise InvalidArgument(f"categorical columns must be dropped: {kept_categorical}")
        if not self.feature_names:
            raise InvalidArgument("schema has no numeric feature columns")

    @property
    def feature_index(self) -> list[int]:
        return [i for i, c in enumerate(self.columns) if c.kind == "numeric" and c.name not in self.drop]

    @property
    def feature_names(self) -> list[str]:
        names = [self.columns[i].name for i in self.feature_index]
        return names + ["dummy"] if self.dummy_feature else names

    @property
    def label_index(self) -> int | None:
        for i, c in enumerate(self.columns):
            if c.kind == "label":
                return i
        return None

    @classmethod
    def from_dict(cls, obj: dict) -> "Schema":
        return cls(
            columns=tuple(Column(c["name"], c.get("kind", "numeric")) for c in obj["columns"]),
            drop=tuple(obj.get("drop", ())),
            dummy_feature=bool(obj.get("dummy_feature", False)),
            delimiter=obj.get("delimiter", ","),
            header=bool(obj.get("header", False)),
            label_strip=obj.get("label_strip", ""),
        )

    def to_dict(self) -> dict:
        return {
            "columns": [{"name": c.name, "kind": c.kind} for c in self.columns],
            "drop": list(self.drop),
            "dummy_feature": self.dummy_feature,
            "delimiter": self.delimiter,
            "header": self.header,
            "label_strip": self.label_strip,
        }


def _builtin(name: str) -> dict:
    return json.loads(resources.files("pvqsample").joinpath("data", name).read_text())


def load_schema(source) -> Schema:
    """Schema from a JSON file path or a built-in name (``kddcup``)."""
    if str(source) in BUILTIN_SCHEMAS:
        return Schema.from_dict(_builtin(BUILTIN_SCHEMAS[str(source)]))
    try:
        return Schema.from_dict(json.loads(Path(source).read_text()))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ParseError(f"cannot read schema {source}: {exc}") from exc


def infer_schema(path, delimiter: str = ",", label_column: str = "label") -> Schema:
    """Schema for a headed file: the column called ``label_column`` is the
    label, every other column is numeric."""
    with _open_text(path) as fh:
        first = next(csv.reader(fh, delimiter=delimiter), None)
    if not first:
        raise ParseError(f"{path}: empty file, no header row")
    cols = tuple(Column(name, "label" if name == label_column else "numeric") for name in first)
    return Schema(cols, delimiter=delimiter, header=True)


def _open_text(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rt", newline="")
    return open(path, newline="")


def load_delimited(path, schema: Schema) -> tuple[DataMatrix, np.ndarray | None]:
    """Read a delimited (optionally gzip-compressed) file in one pass.

    Returns the feature matrix (rows in file order, row ids 0..n-1) and the
    label vector, or None when the schema has no label column.
    """
    feat = schema.feature_index
    lab = schema.label_index
    ncol = len(schema.columns)
    blocks: list[np.ndarray] = []
    rows: list[list[float]] = []
    labels: list[str] = []
    with _open_text(path) as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        if schema.header:
            next(reader, None)
        for record in reader:
            if not record:
                continue
            line = reader.line_num
            if len(record) != ncol:
                raise ParseError(f"{path}:{line}: expected {ncol} columns, found {len(record)}")
            try:
                rows.append([float(record[i]) for i in feat])
            except ValueError as exc:
                raise ParseError(f"{path}:{line}: {exc}") from None
            if lab is not None:
                value = record[lab].strip()
                labels.append(value.rstrip(schema.label_strip) if schema.label_strip else value)
            if len(rows) == _BLOCK_ROWS:
                # python floats cost ~4x their array size; flush regularly
                blocks.append(np.asarray(rows, dtype=np.float64))
                rows = []
    if rows:
        blocks.append(np.asarray(rows, dtype=np.float64))
    if not blocks:
        raise ParseError(f"{path}: no data rows")
    n = sum(b.shape[0] for b in blocks)
    values = np.ones((n, len(feat) + int(schema.dummy_feature)))
    start = 0
    while blocks:
        b = blocks.pop(0)
        values[start:start + b.shape[0], :len(feat)] = b
        start += b.shape[0]
    if not np.isfinite(values).all():
        bad = int(np.argwhere(~np.isfinite(values))[0][0])
        raise ParseError(f"{path}: non-finite value in data row {bad + 1}")
    return DataMatrix(values), (np.asarray(labels) if lab is not None else None)


@dataclass(frozen=True, eq=False)
class Scaler:
    """Per-feature z-score transform. Zero-variance features are passed
    through (shift 0, scale 1)."""

    mean: np.ndarray
    scale: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}


def fit_scaler(data: DataMatrix) -> Scaler:
    x = data.values if isinstance(data, DataMatrix) else np.asarray(data, dtype=np.float64)
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    # constant columns: relative threshold so float noise in the mean of a
    # constant column does not count as variance
    const = sd <= 1e-12 * np.maximum(np.abs(mean), 1.0)
    return Scaler(np.where(const, 0.0, mean), np.where(const, 1.0, sd))


def apply_scaler(data: DataMatrix, scaler: Scaler) -> DataMatrix:
    """Standardized copy; row ids are kept, the input is untouched."""
    x = data.values
    if x.shape[1] != scaler.mean.size:
        raise InvalidArgument("scaler was fitted on a different number of features")
    return DataMatrix((x - scaler.mean) / scaler.scale, data.row_ids)


@dataclass(frozen=True)
class LabelMap:
    mapping: dict = field(default_factory=dict)
    name: str = "identity"

    def to_dict(self) -> dict:
        return {"name": self.name, "mapping": dict(sorted(self.mapping.items()))}


def load_label_map(source) -> LabelMap:
    """Label map from a JSON file or built-in name (``kddcup-5``).

    The file holds ``{"name": ..., "groups": {"dos": ["smurf", ...], ...}}``
    or a flat ``{"mapping": {"smurf": "dos", ...}}``.
    """
    if str(source) in BUILTIN_LABEL_MAPS:
        obj = _builtin(BUILTIN_LABEL_MAPS[str(source)])
    else:
        try:
            obj = json.loads(Path(source).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"cannot read label map {source}: {exc}") from exc
    mapping = dict(obj.get("mapping", {}))
    for group, members in obj.get("groups", {}).items():
        for label in members:
            if mapping.get(label, group) != group:
                raise ParseError(f"label {label!r} assigned to two groups")
            mapping[label] = group
    return LabelMap(mapping, obj.get("name", str(source)))


def aggregate_labels(labels, label_map: LabelMap | dict) -> np.ndarray:
    """Map fine labels to aggregate ones; unmapped labels keep their value."""
    labels = as_labels(labels)
    mapping = label_map.mapping if isinstance(label_map, LabelMap) else dict(label_map)
    if not mapping:
        return labels
    unique, inverse = np.unique(labels, return_inverse=True)
    missing = [u for u in unique.tolist() if u not in mapping]
    if missing:
        log.warning("labels without an aggregate class kept as-is: %s", ", ".join(missing))
    images = np.asarray([mapping.get(u, u) for u in unique.tolist()]).astype(str)
    return images[inverse]


def window(data: DataMatrix, labels=None, window_size: int = 80_000
           ) -> Iterator[tuple[DataMatrix, np.ndarray | None]]:
    """Consecutive non-overlapping mini-batches; the last may be short."""
    if window_size < 1:
        raise InvalidArgument("window_size must be >= 1")
    if labels is not None:
        labels = as_labels(labels, data.n)
    for start in range(0, data.n, window_size):
        stop = min(start + window_size, data.n)
        yield data.take(np.arange(start, stop)), (None if labels is None else labels[start:stop])


def write_sample_csv(path, data: DataMatrix, result, labels=None, feature_names=None) -> None:
    """Write the sampled rows with their original values.

    Columns: ``row_id``, ``shard``, the features, and ``label`` when labels
    are given. Floats use ``repr`` so values round-trip exactly.
    """
    pos = data.positions_of(result.rows)
    shard = result.shard_of()
    names = feature_names or [f"f{i}" for i in range(data.d)]
    if labels is not None:
        labels = as_labels(labels, data.n)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id", "shard", *names] + (["label"] if labels is not None else []))
        for i, p in enumerate(pos.tolist()):
            row = [int(data.row_ids[p]), int(shard[i]), *map(repr, data.values[p].tolist())]
            if labels is not None:
                row.append(labels[p])
            w.writerow(row)


def read_labels_column(path, column: str = "label", delimiter: str = ",") -> np.ndarray:
    """The ``column`` values of a headed delimited file."""
    with _open_text(path) as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: empty file")
        if column not in reader.fieldnames:
            raise ParseError(f"{path}: no {column!r} column")
        values = [row[column] for row in reader]
    if not values:
        raise ParseError(f"{path}: no data rows")
    return np.asarray(values)
