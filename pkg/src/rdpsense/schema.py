"""Attribute names and the windows-by-attributes matrix type."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import SchemaMismatch
from .windowing import CLASSES, LABEL_COLUMNS

SCHEMA_VERSION = 1

FLOW_ATTRIBUTES = (
    "ACK Flag Cnt", "Active Max", "Active Mean", "Active Min", "Active Std",
    "Bwd Blk Rate Avg", "Bwd Byts/b Avg", "Bwd Header Len", "Bwd IAT Max",
    "Bwd IAT Mean", "Bwd IAT Min", "Bwd IAT Std", "Bwd IAT Tot", "Bwd PSH Flags",
    "Bwd Pkt Len Max", "Bwd Pkt Len Mean", "Bwd Pkt Len Min", "Bwd Pkt Len Std",
    "Bwd Pkts/b Avg", "Bwd Pkts/s", "Bwd Seg Size Avg", "Bwd URG Flags",
    "CWE Flag Count", "ECE Flag Cnt", "FIN Flag Cnt", "Flow Byts/s", "Flow Duration",
    "Flow IAT Max", "Flow IAT Mean", "Flow IAT Min", "Flow IAT Std", "Flow Pkts/s",
    "Fwd Blk Rate Avg", "Fwd Byts/b Avg", "Fwd Header Len", "Fwd IAT Max",
    "Fwd IAT Mean", "Fwd IAT Min", "Fwd IAT Std", "Fwd IAT Tot", "Fwd PSH Flags",
    "Fwd Pkt Len Max", "Fwd Pkt Len Mean", "Fwd Pkt Len Min", "Fwd Pkt Len Std",
    "Fwd Pkts/b Avg", "Fwd Pkts/s", "Fwd Seg Size Avg", "Fwd URG Flags",
    "Idle Max", "Idle Mean", "Idle Min", "Idle Std", "Init Bwd Win Byts",
    "Init Fwd Win Byts", "PSH Flag Cnt", "Pkt Len Max", "Pkt Len Mean",
    "Pkt Len Min", "Pkt Len Std", "Pkt Len Var", "Pkt Size Avg", "RST Flag Cnt",
    "SYN Flag Cnt", "Subflow Bwd Byts", "Subflow Bwd Pkts", "Subflow Fwd Byts",
    "Subflow Fwd Pkts", "Tot Bwd Pkts", "Tot Fwd Pkts", "TotLen Bwd Pkts",
    "TotLen Fwd Pkts", "URG Flag Cnt",
)

# (name, direction, low, high) with inclusive bounds on on-wire frame length
FRAME_BINS = (
    ("FwdFrame91-93", "Fwd", 91, 93),
    ("FwdFrame80-91", "Fwd", 80, 91),
    ("FwdFrame90-94", "Fwd", 90, 94),
    ("FwdFrame96-98", "Fwd", 96, 98),
    ("FwdFrame103-105", "Fwd", 103, 105),
    ("FwdFrame1280-2559", "Fwd", 1280, 2559),
    ("BwdFrame40-79", "Bwd", 40, 79),
    ("BwdFrame80-159", "Bwd", 80, 159),
    ("BwdFrame160-319", "Bwd", 160, 319),
    ("BwdFrame320-639", "Bwd", 320, 639),
    ("BwdFrame640-1279", "Bwd", 640, 1279),
    ("BwdFrame1280-2559", "Bwd", 1280, 2559),
)

MARKER_ATTRIBUTES = tuple(b[0] for b in FRAME_BINS) + ("BwdPUSH", "FwdPUSH")
BASE_ATTRIBUTES = FLOW_ATTRIBUTES + MARKER_ATTRIBUTES

N_COMPONENTS = 20
DERIVED_ATTRIBUTES = (
    ("dct_col",)
    + tuple(f"svd{i}" for i in range(N_COMPONENTS))
    + tuple(f"ica{i}" for i in range(N_COMPONENTS))
)
FULL_ATTRIBUTES = BASE_ATTRIBUTES + DERIVED_ATTRIBUTES


@dataclass(frozen=True)
class FeatureSchema:
    names: tuple[str, ...]
    version: int = SCHEMA_VERSION

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("attribute names must be unique")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


BASE_SCHEMA = FeatureSchema(BASE_ATTRIBUTES)
FULL_SCHEMA = FeatureSchema(FULL_ATTRIBUTES)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    window_ref: int
    labels: tuple[bool, ...] | None = None


@dataclass(frozen=True)
class FeatureMatrix:
    """Rows are windows, columns are named attributes."""

    values: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != len(self.names):
            raise SchemaMismatch(
                f"matrix shape {v.shape} does not match {len(self.names)} attribute names"
            )
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.values.shape[0]

    def columns(self, names: Sequence[str]) -> np.ndarray:
        pos = {n: i for i, n in enumerate(self.names)}
        missing = [n for n in names if n not in pos]
        if missing:
            raise SchemaMismatch(f"attributes not present: {missing}")
        return self.values[:, [pos[n] for n in names]]

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        return FeatureMatrix(self.columns(names), tuple(names))

    def rows(self, idx) -> "FeatureMatrix":
        return FeatureMatrix(self.values[idx], self.names)

    def hstack(self, other: "FeatureMatrix") -> "FeatureMatrix":
        return FeatureMatrix(np.hstack([self.values, other.values]), self.names + other.names)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def export_features(vectors: Sequence[FeatureVector], schema: FeatureSchema = BASE_SCHEMA) -> str:
    """Feature CSV: schema names then the five label columns, one row per window.

    Unlabeled vectors leave the label cells empty.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(schema.names) + list(LABEL_COLUMNS))
    for vec in vectors:
        if len(vec.values) != len(schema):
            raise SchemaMismatch(
                f"window {vec.window_ref}: {len(vec.values)} values for {len(schema)} attributes"
            )
        labels = [""] * len(CLASSES) if vec.labels is None else [int(b) for b in vec.labels]
        w.writerow([_fmt(v) for v in vec.values] + labels)
    return buf.getvalue()


def matrix_to_csv(matrix: FeatureMatrix, labels: np.ndarray | None = None) -> str:
    vectors = [
        FeatureVector(row, i, None if labels is None else tuple(bool(b) for b in labels[i]))
        for i, row in enumerate(matrix.values)
    ]
    return export_features(vectors, FeatureSchema(matrix.names))


def read_features(text: str, source: str = "<features>") -> tuple[FeatureMatrix, np.ndarray | None]:
    """Inverse of :func:`export_features`; labels are ``None`` when absent."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaMismatch(f"{source}: empty feature file") from None
    has_labels = tuple(header[-len(LABEL_COLUMNS):]) == LABEL_COLUMNS
    names = tuple(header[: -len(LABEL_COLUMNS)] if has_labels else header)
    values, labels = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise SchemaMismatch(f"{source}:{lineno}: {len(row)} cells, header has {len(header)}")
        try:
            values.append([float(c) for c in row[: len(names)]])
        except ValueError as exc:
            raise SchemaMismatch(f"{source}:{lineno}: {exc}") from exc
        if has_labels:
            cells = row[len(names):]
            labels.append(None if all(c == "" for c in cells) else [c == "1" for c in cells])
    matrix = FeatureMatrix(np.array(values, dtype=float).reshape(len(values), len(names)), names)
    if not has_labels or any(lab is None for lab in labels):
        return matrix, None
    return matrix, np.array(labels, dtype=bool).reshape(len(labels), len(LABEL_COLUMNS))
