"""Hierarchical heterogeneous data model: modality schemas, samples and
the fixed intra-modality adjacency used by the channel-level GCN."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .numerics import ContractError, Matrix, as_matrix


@dataclass(frozen=True)
class ModalitySchema:
    name: str
    channel_count: int
    unit: str = ""

    def __post_init__(self):
        if self.channel_count < 1:
            raise ContractError(f"modality {self.name}: channel_count must be >= 1")


@dataclass(frozen=True)
class DatasetSchema:
    modalities: tuple[ModalitySchema, ...]
    feature_len: int = 100
    class_count: int = 2

    def __post_init__(self):
        object.__setattr__(self, "modalities", tuple(self.modalities))
        names = [m.name for m in self.modalities]
        if not names:
            raise ContractError("schema needs at least one modality")
        if len(set(names)) != len(names):
            raise ContractError(f"duplicate modality names in {names}")
        if self.feature_len < 1 or self.class_count < 1:
            raise ContractError("feature_len and class_count must be positive")

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.modalities]

    def __len__(self) -> int:
        return len(self.modalities)

    def modality(self, name: str) -> ModalitySchema:
        for m in self.modalities:
            if m.name == name:
                return m
        raise ContractError(f"unknown modality {name!r}; schema has {self.names}")

    def to_dict(self) -> dict:
        return {
            "modalities": [{"name": m.name, "channels": m.channel_count, "unit": m.unit}
                           for m in self.modalities],
            "feature_len": self.feature_len,
            "class_count": self.class_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> DatasetSchema:
        mods = tuple(ModalitySchema(m["name"], int(m["channels"]), m.get("unit", ""))
                     for m in d["modalities"])
        return cls(mods, int(d.get("feature_len", 100)), int(d.get("class_count", 2)))

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# CogPilot channel layout: wrist EMG flexor/extensor, forearm+torso 3-axis
# accelerometry, 3-axis gaze per eye, pupil diameter and eye openness per eye.
COGPILOT_MODALITIES = (
    ModalitySchema("EMG", 2, "mV"),
    ModalitySchema("PPG", 1, "mV"),
    ModalitySchema("EDA", 1, "kOhm"),
    ModalitySchema("ECG", 1, "mV"),
    ModalitySchema("RES", 1, "mV"),
    ModalitySchema("ACC", 6, "m/s^2"),
    ModalitySchema("GD", 6, "unit"),
    ModalitySchema("PD", 2, "mm"),
    ModalitySchema("EO", 2, "unit"),
)
EYE_TRACKING = ("PD", "EO", "GD")


def default_schema(feature_len: int = 100, class_count: int = 2) -> DatasetSchema:
    return DatasetSchema(COGPILOT_MODALITIES, feature_len, class_count)


@dataclass
class HierarchicalSample:
    subject_id: str
    label: int
    features: dict[str, Matrix] = field(default_factory=dict)
    sample_id: str = ""


def build_complete_subgraph(n: int) -> Matrix:
    if n < 1:
        raise ContractError(f"subgraph needs at least one node, got {n}")
    return np.ones((n, n)) - np.eye(n)


def normalize_adjacency(a) -> Matrix:
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    a = as_matrix(a)
    n, c = a.shape
    if n != c:
        raise ContractError(f"adjacency must be square, got {a.shape}")
    if not np.array_equal(a, a.T):
        raise ContractError("adjacency must be symmetric")
    if not np.isin(a, (0.0, 1.0)).all() or np.any(np.diag(a) != 0):
        raise ContractError("adjacency must be binary with a zero diagonal")
    a_hat = a + np.eye(n)
    inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return inv_sqrt[:, None] * a_hat * inv_sqrt[None, :]


@lru_cache(maxsize=None)
def complete_normalized(n: int) -> Matrix:
    out = normalize_adjacency(build_complete_subgraph(n))
    out.setflags(write=False)
    return out


def validate_sample(s: HierarchicalSample, schema: DatasetSchema) -> list[str]:
    """Every way ``s`` disagrees with ``schema``; an empty list means valid."""
    problems = []
    if not isinstance(s.label, (int, np.integer)) or not 0 <= s.label < schema.class_count:
        problems.append(f"label {s.label!r} outside [0, {schema.class_count})")
    for m in schema.modalities:
        x = s.features.get(m.name)
        if x is None:
            problems.append(f"missing modality {m.name}")
            continue
        x = np.asarray(x)
        want = (m.channel_count, schema.feature_len)
        if x.shape != want:
            problems.append(f"modality {m.name}: shape {x.shape}, expected {want}")
        elif not np.isfinite(x).all():
            problems.append(f"modality {m.name}: non-finite values")
    extra = sorted(set(s.features) - set(schema.names))
    if extra:
        problems.append(f"unexpected modalities {extra}")
    return problems
