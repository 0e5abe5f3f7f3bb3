"""Synthetic flow-shaped datasets with planted informative features."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .flows import IDENTIFIER_COLUMNS, FeatureSchema, FlowDataset

# CICFlowMeter-V4 flow statistics: the 84-column export minus six identifiers and the label.
SCVIC_FEATURES = (
    "Protocol", "Flow Duration", "Total Fwd Packet", "Total Bwd packets",
    "Total Length of Fwd Packet", "Total Length of Bwd Packet", "Fwd Packet Length Max",
    "Fwd Packet Length Min", "Fwd Packet Length Mean", "Fwd Packet Length Std",
    "Bwd Packet Length Max", "Bwd Packet Length Min", "Bwd Packet Length Mean",
    "Bwd Packet Length Std", "Flow Bytes/s", "Flow Packets/s", "Flow IAT Mean", "Flow IAT Std",
    "Flow IAT Max", "Flow IAT Min", "Fwd IAT Total", "Fwd IAT Mean", "Fwd IAT Std", "Fwd IAT Max",
    "Fwd IAT Min", "Bwd IAT Total", "Bwd IAT Mean", "Bwd IAT Std", "Bwd IAT Max", "Bwd IAT Min",
    "Fwd PSH Flags", "Bwd PSH Flags", "Fwd URG Flags", "Bwd URG Flags", "Fwd Header Length",
    "Bwd Header Length", "Fwd Packets/s", "Bwd Packets/s", "Packet Length Min", "Packet Length Max",
    "Packet Length Mean", "Packet Length Std", "Packet Length Variance", "FIN Flag Count",
    "SYN Flag Count", "RST Flag Count", "PSH Flag Count", "ACK Flag Count", "URG Flag Count",
    "CWR Flag Count", "ECE Flag Count", "Down/Up Ratio", "Average Packet Size",
    "Fwd Segment Size Avg", "Bwd Segment Size Avg", "Fwd Bytes/Bulk Avg", "Fwd Packet/Bulk Avg",
    "Fwd Bulk Rate Avg", "Bwd Bytes/Bulk Avg", "Bwd Packet/Bulk Avg", "Bwd Bulk Rate Avg",
    "Subflow Fwd Packets", "Subflow Fwd Bytes", "Subflow Bwd Packets", "Subflow Bwd Bytes",
    "FWD Init Win Bytes", "Bwd Init Win Bytes", "Fwd Act Data Pkts", "Fwd Seg Size Min",
    "Active Mean", "Active Std", "Active Max", "Active Min", "Idle Mean", "Idle Std", "Idle Max",
    "Idle Min",
)

SHARED = "shared"
DISJOINT = "disjoint"


@dataclass(frozen=True)
class SynthSpec:
    """Generator parameters.

    ``informative`` pairs a feature index with a positive-class shift in
    units of ``noise_sigma``. In ``shared`` mode every positive row carries
    every shift. In ``disjoint`` mode positive rows are dealt round-robin to
    the informative features and each row is shifted only on its own
    feature, so every planted feature is needed to recover all positives.
    """

    n_features: int
    informative: tuple[tuple[int, float], ...] = ()
    n_normal: int = 1000
    n_positive: int = 50
    noise_sigma: float = 1.0
    seed: int = 0
    feature_names: tuple[str, ...] | None = None
    mode: str = SHARED

    def __post_init__(self):
        if self.n_features < 1:
            raise ValueError("n_features must be >= 1")
        if self.n_normal < 1 or self.n_positive < 1:
            raise ValueError("sample counts must be >= 1")
        if not self.noise_sigma > 0:
            raise ValueError("noise_sigma must be > 0")
        idx = [j for j, _ in self.informative]
        if any(not 0 <= j < self.n_features for j in idx) or len(set(idx)) != len(idx):
            raise ValueError("informative indices must be distinct and < n_features")
        if self.feature_names is not None and len(self.feature_names) != self.n_features:
            raise ValueError("feature_names must have n_features entries")
        if self.mode not in (SHARED, DISJOINT):
            raise ValueError(f"unknown mode {self.mode!r}")

    def names(self) -> tuple[str, ...]:
        if self.feature_names is not None:
            return tuple(self.feature_names)
        return tuple(f"F{j}" for j in range(self.n_features))

    @property
    def planted(self) -> list[int]:
        return [j for j, _ in self.informative]


def planted_spec(n_features: int = 77, n_planted: int = 4, shift: float = 6.0, n_normal: int = 10_000,
                 n_positive: int = 150, seed: int = 0, mode: str = DISJOINT, scvic_names: bool = True) -> SynthSpec:
    """Fixture with planted features spread evenly over the column range."""
    rng = np.random.default_rng([seed, 0x5EED])
    planted = sorted(int(j) for j in rng.choice(n_features, size=n_planted, replace=False))
    names = SCVIC_FEATURES if (scvic_names and n_features == len(SCVIC_FEATURES)) else None
    return SynthSpec(n_features, tuple((j, shift) for j in planted), n_normal, n_positive,
                     1.0, seed, names, mode)


def generate(spec: SynthSpec) -> FlowDataset:
    n = spec.n_normal + spec.n_positive
    labels = np.zeros(n, dtype=np.int8)
    labels[spec.n_normal:] = 1
    X = np.empty((n, spec.n_features))
    for j in range(spec.n_features):
        # one stream per column so columns can be generated independently
        X[:, j] = np.random.default_rng([spec.seed, j]).normal(0.0, spec.noise_sigma, size=n)
    pos = np.arange(spec.n_normal, n)
    for slot, (j, shift) in enumerate(spec.informative):
        rows = pos if spec.mode == SHARED else pos[slot::len(spec.informative)]
        X[rows, j] += shift * spec.noise_sigma
    schema = FeatureSchema(spec.names(), ("numeric",) * spec.n_features)
    return FlowDataset(schema, X, labels)


def write_csv(dataset: FlowDataset, path, with_identifiers: bool = True,
              normal_tag: str = "Normal", positive_tag: str = "Initial Compromise",
              extra_rows: Sequence[Sequence[str]] = ()) -> None:
    """Write a flow CSV that ``flows.load_csv``/``preprocess`` ingest.

    With identifiers, dummy Flow ID / endpoint / timestamp columns are added
    in CICFlowMeter order around the statistics. ``extra_rows`` are appended
    verbatim (useful for exercising stage isolation and missing values).
    """
    names = list(dataset.schema.feature_names)
    ids = list(IDENTIFIER_COLUMNS) if with_identifiers else []
    header = ["Flow ID", "Src IP", "Src Port", "Dst IP", "Dst Port"] if with_identifiers else []
    header += names[:1]
    if with_identifiers:
        header.append("Timestamp")
    header += names[1:] + ["Label"]
    assert len(set(header)) == len(header) and set(ids) <= set(header)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, (row, lab) in enumerate(zip(dataset.features.tolist(), dataset.labels.tolist())):
            cells = [repr(v) for v in row]
            out = []
            if with_identifiers:
                src = f"10.0.{i // 250 % 250}.{i % 250 + 1}"
                out += [f"{src}-192.168.1.1-{40000 + i % 20000}-21-6", src, str(40000 + i % 20000),
                        "192.168.1.1", "21"]
            out += cells[:1]
            if with_identifiers:
                out.append(f"2021-01-01 00:{i // 60 % 60:02d}:{i % 60:02d}")
            out += cells[1:] + [positive_tag if lab else normal_tag]
            w.writerow(out)
        for row in extra_rows:
            w.writerow(list(row))
