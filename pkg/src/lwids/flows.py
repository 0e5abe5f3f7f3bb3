"""Flow-CSV ingestion, cleaning and train/test splitting.

The input is a CICFlowMeter-style export: a header row, identifier columns
(flow id, endpoints, timestamp), numeric flow statistics, and a text label.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

IDENTIFIER_COLUMNS = ("Flow ID", "Timestamp", "Src IP", "Dst IP", "Src Port", "Dst Port")
NORMAL_TAGS = ("Normal", "NormalTraffic", "Normal Traffic", "Benign")
POSITIVE_TAGS = ("Initial Compromise", "InitialCompromise", "IC", "I.C")
DEFAULT_LABEL_COLUMN = "Label"

NUMERIC = "numeric"
CATEGORICAL = "categorical"


class FlowDataError(ValueError):
    """Raised for malformed or unusable flow data."""


class MissingColumnWarning(UserWarning):
    pass


def normalize_name(name: str) -> str:
    """Case-folded column name with all spaces removed."""
    return "".join(name.split()).casefold()


@dataclass(frozen=True)
class SchemaOptions:
    label_column: str = DEFAULT_LABEL_COLUMN
    identifier_columns: tuple[str, ...] = IDENTIFIER_COLUMNS
    normal_labels: tuple[str, ...] = NORMAL_TAGS
    positive_labels: tuple[str, ...] = POSITIVE_TAGS
    strict_identifiers: bool = False


@dataclass(frozen=True)
class RawTable:
    columns: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]

    @property
    def row_count(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list[str]:
        j = self.columns.index(name)
        return [r[j] for r in self.rows]


@dataclass(frozen=True)
class FeatureSchema:
    feature_names: tuple[str, ...]
    feature_kinds: tuple[str, ...]
    label_column: str = DEFAULT_LABEL_COLUMN
    dropped_columns: tuple[str, ...] = ()

    def __post_init__(self):
        if len(set(self.feature_names)) != len(self.feature_names):
            raise FlowDataError("feature names must be unique")
        if len(self.feature_kinds) != len(self.feature_names):
            raise FlowDataError("one kind per feature is required")
        banned = {self.label_column, *self.dropped_columns}
        leaked = banned.intersection(self.feature_names)
        if leaked:
            raise FlowDataError(f"dropped/label columns present among features: {sorted(leaked)}")

    @property
    def feature_count(self) -> int:
        return len(self.feature_names)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name in self.feature_names:
            h.update(name.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()

    def subset(self, indices: Sequence[int]) -> "FeatureSchema":
        return FeatureSchema(
            feature_names=tuple(self.feature_names[i] for i in indices),
            feature_kinds=tuple(self.feature_kinds[i] for i in indices),
            label_column=self.label_column,
            dropped_columns=self.dropped_columns,
        )

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "feature_kinds": list(self.feature_kinds),
            "label_column": self.label_column,
            "dropped_columns": list(self.dropped_columns),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(
            feature_names=tuple(d["feature_names"]),
            feature_kinds=tuple(d["feature_kinds"]),
            label_column=d.get("label_column", DEFAULT_LABEL_COLUMN),
            dropped_columns=tuple(d.get("dropped_columns", ())),
        )


@dataclass(frozen=True)
class FlowDataset:
    """Cleaned feature matrix with binary labels (0 = Normal, 1 = Initial Compromise)."""

    schema: FeatureSchema
    features: np.ndarray
    labels: np.ndarray
    dropped_row_count: int = 0
    encoding_maps: dict[str, dict[str, int]] = field(default_factory=dict)

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int8)
        if X.ndim != 2 or X.shape[1] != self.schema.feature_count:
            raise FlowDataError(
                f"feature matrix shape {X.shape} does not match {self.schema.feature_count} schema features"
            )
        if y.shape != (X.shape[0],):
            raise FlowDataError("labels must have one entry per row")
        if not np.isfinite(X).all():
            raise FlowDataError("feature matrix contains non-finite cells")
        if not np.isin(y, (0, 1)).all():
            raise FlowDataError("labels must be 0 or 1")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def row_count(self) -> int:
        return self.features.shape[0]

    def class_counts(self) -> dict[int, int]:
        n_pos = int(np.count_nonzero(self.labels))
        return {0: self.row_count - n_pos, 1: n_pos}

    def take(self, rows: np.ndarray) -> "FlowDataset":
        return FlowDataset(
            self.schema, self.features[rows], self.labels[rows], self.dropped_row_count, self.encoding_maps
        )

    def select(self, indices: Sequence[int]) -> "FlowDataset":
        """Dataset restricted to the given feature columns, in the given order."""
        indices = [int(i) for i in indices]
        schema = self.schema.subset(indices)
        maps = {n: m for n, m in self.encoding_maps.items() if n in schema.feature_names}
        return FlowDataset(schema, self.features[:, indices], self.labels, self.dropped_row_count, maps)

    def to_table(self, normal_tag: str = "Normal", positive_tag: str = "Initial Compromise") -> RawTable:
        """Render back to text cells; categorical codes are decoded."""
        decoders = {n: {v: k for k, v in m.items()} for n, m in self.encoding_maps.items()}
        columns = list(self.schema.feature_names) + [self.schema.label_column]
        col_cells = []
        for j, name in enumerate(self.schema.feature_names):
            col = self.features[:, j]
            if name in decoders:
                dec = decoders[name]
                col_cells.append([dec[int(v)] for v in col])
            else:
                col_cells.append([repr(float(v)) for v in col])
        tags = [positive_tag if v else normal_tag for v in self.labels]
        rows = tuple(tuple(r) for r in zip(*col_cells, tags)) if col_cells else tuple((t,) for t in tags)
        return RawTable(tuple(columns), rows)


@dataclass(frozen=True)
class DatasetSplit:
    train: FlowDataset
    test: FlowDataset
    seed: int
    train_fraction: float = 0.8
    stratified: bool = True

    @property
    def schema(self) -> FeatureSchema:
        return self.train.schema

    def select(self, indices: Sequence[int]) -> "DatasetSplit":
        return DatasetSplit(
            self.train.select(indices), self.test.select(indices), self.seed, self.train_fraction, self.stratified
        )


def load_csv(path, schema_options: SchemaOptions | None = None) -> RawTable:
    """Read an RFC-4180 CSV into text cells. Header names are stripped."""
    path = Path(path)
    if not path.is_file():
        raise FlowDataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FlowDataError(f"{path}: empty file") from None
        header = tuple(h.strip() for h in header)
        if not any(header):
            raise FlowDataError(f"{path}: empty header")
        seen = set()
        for h in header:
            if h in seen:
                raise FlowDataError(f"{path}: duplicate header name {h!r}")
            seen.add(h)
        width = len(header)
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != width:
                raise FlowDataError(
                    f"{path}: row {reader.line_num} has {len(row)} cells, header has {width}"
                )
            rows.append(tuple(row))
    return RawTable(header, tuple(rows))


def _parse_float(cell: str) -> float | None:
    """Float value of a cell, or None if it is not a number at all."""
    try:
        return float(cell)
    except ValueError:
        return None


def _match_tags(values: list[str], tags: Sequence[str]) -> np.ndarray:
    wanted = {normalize_name(t) for t in tags}
    return np.array([normalize_name(v) in wanted for v in values], dtype=bool)


def preprocess(table: RawTable, schema_options: SchemaOptions | None = None) -> FlowDataset:
    """Drop identifier and label columns, isolate the two classes, remove
    rows with missing cells, and label-encode text columns."""
    opts = schema_options or SchemaOptions()
    by_norm = {normalize_name(c): c for c in table.columns}

    label_col = by_norm.get(normalize_name(opts.label_column))
    if label_col is None:
        raise FlowDataError(
            f"label column {opts.label_column!r} not found; available columns: {', '.join(table.columns)}"
        )

    dropped = []
    for ident in opts.identifier_columns:
        actual = by_norm.get(normalize_name(ident))
        if actual is None:
            msg = f"identifier column {ident!r} not present"
            if opts.strict_identifiers:
                raise FlowDataError(msg)
            warnings.warn(msg, MissingColumnWarning, stacklevel=2)
            continue
        if actual != label_col and actual not in dropped:
            dropped.append(actual)

    feature_cols = [c for c in table.columns if c != label_col and c not in dropped]

    labels_text = table.column(label_col)
    is_normal = _match_tags(labels_text, opts.normal_labels)
    is_pos = _match_tags(labels_text, opts.positive_labels)
    keep = is_normal | is_pos
    logger.info("stage isolation kept %d of %d rows", int(keep.sum()), table.row_count)

    kept_rows = [r for r, k in zip(table.rows, keep) if k]
    y = is_pos[keep].astype(np.int8)
    n = len(kept_rows)

    idx = {c: table.columns.index(c) for c in feature_cols}
    missing = np.zeros(n, dtype=bool)
    numeric_values: dict[str, np.ndarray] = {}
    text_values: dict[str, list[str]] = {}
    kinds = []
    for c in feature_cols:
        j = idx[c]
        cells = [r[j].strip() for r in kept_rows]
        parsed = [_parse_float(s) if s else math.nan for s in cells]
        if any(p is None for p in parsed):
            kinds.append(CATEGORICAL)
            text_values[c] = cells
            missing |= np.array([s == "" for s in cells], dtype=bool)
        else:
            kinds.append(NUMERIC)
            arr = np.array(parsed, dtype=np.float64)
            numeric_values[c] = arr
            missing |= ~np.isfinite(arr)

    good = ~missing
    dropped_row_count = int(missing.sum())
    if not good.any():
        raise FlowDataError("no rows remain after stage isolation and missing-value removal")

    columns = []
    encoding_maps: dict[str, dict[str, int]] = {}
    for c, kind in zip(feature_cols, kinds):
        if kind == NUMERIC:
            columns.append(numeric_values[c][good])
        else:
            vals = [v for v, g in zip(text_values[c], good) if g]
            mapping = {v: i for i, v in enumerate(sorted(set(vals)))}
            encoding_maps[c] = mapping
            columns.append(np.array([mapping[v] for v in vals], dtype=np.float64))

    X = np.column_stack(columns) if columns else np.empty((int(good.sum()), 0))
    schema = FeatureSchema(tuple(feature_cols), tuple(kinds), label_col, tuple(dropped))
    return FlowDataset(schema, X, y[good], dropped_row_count, encoding_maps)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(dataset: FlowDataset, seed: int = 0, train_fraction: float = 0.8, stratify: bool = True) -> DatasetSplit:
    """Seeded train/test split; stratified by class unless ``stratify`` is False.

    Each side keeps the source row order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise FlowDataError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    counts = dataset.class_counts()
    for c, k in counts.items():
        if k < 2:
            raise FlowDataError(f"class {c} has {k} samples; at least 2 are required")
    rng = np.random.default_rng(seed)
    y = dataset.labels
    train_rows = []
    if stratify:
        for c in (0, 1):
            members = np.flatnonzero(y == c)
            n_train = _round_half_up(train_fraction * members.size)
            if n_train == 0 or n_train == members.size:
                raise FlowDataError(
                    f"train_fraction {train_fraction} leaves class {c} empty on one side ({members.size} samples)"
                )
            train_rows.append(rng.permutation(members)[:n_train])
    else:
        n_train = _round_half_up(train_fraction * dataset.row_count)
        train_rows.append(rng.permutation(dataset.row_count)[:n_train])
    in_train = np.zeros(dataset.row_count, dtype=bool)
    in_train[np.concatenate(train_rows)] = True
    train, test = dataset.take(np.flatnonzero(in_train)), dataset.take(np.flatnonzero(~in_train))
    for side, ds in (("train", train), ("test", test)):
        if min(ds.class_counts().values()) == 0:
            raise FlowDataError(f"{side} side lacks a class; use a stratified split or another seed")
    return DatasetSplit(train, test, int(seed), float(train_fraction), bool(stratify))


def write_dataset_csv(dataset: FlowDataset, path) -> None:
    """Write the encoded matrix with a 0/1 label column (exact float repr)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(dataset.schema.feature_names) + [dataset.schema.label_column])
        for row, lab in zip(dataset.features.tolist(), dataset.labels.tolist()):
            w.writerow([repr(v) for v in row] + [lab])


def read_dataset_csv(path, schema: FeatureSchema, encoding_maps=None, dropped_row_count: int = 0) -> FlowDataset:
    table = load_csv(path)
    expected = tuple(schema.feature_names) + (schema.label_column,)
    if table.columns != expected:
        raise FlowDataError(f"{path}: columns do not match the dataset manifest schema")
    if table.row_count == 0:
        raise FlowDataError(f"{path}: no rows")
    data = np.array([[float(c) for c in r] for r in table.rows], dtype=np.float64)
    return FlowDataset(schema, data[:, :-1], data[:, -1].astype(np.int8), dropped_row_count, encoding_maps or {})
