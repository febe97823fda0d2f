"""The H2G2-Net model: per-modality GCN stacks with sum readout, modality-level
layers that learn their own adjacency, network readout and a two-layer
softmax classifier.

All forward functions accept a batch. Row layouts are entity-major and
batch-minor: for a batch of ``B`` samples, row ``c*B + b`` of a modality's
feature matrix is channel ``c`` of sample ``b``, and row ``i*B + b`` of the
modality representation matrix is modality ``i`` of sample ``b``. Under that
layout mixing by a matrix ``M`` becomes ``kron(M, I_B)`` and each readout is a
:func:`~h2g2net.numerics.fold_sum`. A batch of one is exactly the
single-sample computation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .graph import DatasetSchema, HierarchicalSample, complete_normalized, validate_sample
from .numerics import (ContractError, DimensionError, Matrix, Node, Operand, Tape, add,
                       fold_sum, kron_identity, matmul, relu, row_softmax, vstack)

CHECKPOINT_FORMAT = "h2g2net-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    sub_layers: int = 2
    mod_layers: int = 2
    hidden: int = 100
    fc: int = 32
    seed: int = 0
    init: str = "glorot"  # or "zeros"
    phi_init_std: float = 0.0

    def __post_init__(self):
        if min(self.sub_layers, self.mod_layers, self.hidden, self.fc) < 1:
            raise ContractError("layer counts and widths must be positive")
        if self.init not in ("glorot", "zeros"):
            raise ContractError(f"unknown init {self.init!r}")


@dataclass
class ModelParams:
    """All trainable weights, keyed by name.

    ``gcn/<modality>/<l>`` channel-level GCN weights, ``phi/<l>`` and
    ``theta/<l>`` the modality-level layers, ``fc1/W``, ``fc1/b``, ``fc2/W``,
    ``fc2/b`` the classifier head.
    """

    config: ModelConfig
    schema_hash: str
    weights: dict[str, Matrix] = field(default_factory=dict)

    def copy(self) -> ModelParams:
        return ModelParams(self.config, self.schema_hash,
                           {k: v.copy() for k, v in self.weights.items()})


def param_group(name: str) -> str:
    head = name.split("/", 1)[0]
    return "classifier" if head.startswith("fc") else head


def init_params(schema: DatasetSchema, config: ModelConfig) -> ModelParams:
    rng = np.random.default_rng(config.seed)
    zeros = config.init == "zeros"

    def glorot(fan_in, fan_out):
        if zeros:
            return np.zeros((fan_in, fan_out))
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    w = {}
    for mod in schema.modalities:
        d_in = schema.feature_len
        for l in range(config.sub_layers):
            w[f"gcn/{mod.name}/{l}"] = glorot(d_in, config.hidden)
            d_in = config.hidden
    m = len(schema)
    for l in range(config.mod_layers):
        w[f"phi/{l}"] = (rng.normal(0.0, config.phi_init_std, (m, m))
                         if config.phi_init_std > 0 and not zeros else np.zeros((m, m)))
        w[f"theta/{l}"] = glorot(config.hidden, config.hidden)
    w["fc1/W"] = glorot(config.hidden, config.fc)
    w["fc1/b"] = np.zeros((1, config.fc))
    w["fc2/W"] = glorot(config.fc, schema.class_count)
    w["fc2/b"] = np.zeros((1, schema.class_count))
    return ModelParams(config, schema.hash(), w)


def check_params(params: ModelParams, schema: DatasetSchema) -> None:
    want = init_params(schema, ModelConfig(**{**asdict(params.config), "init": "zeros"}))
    if set(want.weights) != set(params.weights):
        raise ContractError("parameter names do not match the schema")
    for k, v in want.weights.items():
        if params.weights[k].shape != v.shape:
            raise DimensionError(f"{k}: shape {params.weights[k].shape}, expected {v.shape}")


# -- layer primitives -------------------------------------------------------

def gcn_layer_forward(x: Operand, a_norm: Operand, theta: Operand) -> Node:
    return relu(matmul(matmul(a_norm, x), theta))


def readout(x: Operand, batch: int = 1) -> Node:
    """Sum node rows per sample (modality and network readout share this)."""
    rows = x.shape[0] if isinstance(x, Node) else np.shape(x)[0]
    return fold_sum(x, rows // batch)


modality_readout = readout
network_readout = readout


def h2g2_layer_forward(h: Operand, phi: Operand, theta: Operand,
                       batch: int = 1) -> tuple[Node, Node]:
    a = row_softmax(phi)
    mix = a if batch == 1 else kron_identity(a, batch)
    return relu(matmul(matmul(mix, h), theta)), a


def classifier_forward(z: Operand, w1: Operand, b1: Operand, w2: Operand, b2: Operand) -> Node:
    batch = z.shape[0]
    ones = np.ones((batch, 1))
    hidden = relu(add(matmul(z, w1), matmul(ones, b1)))
    return row_softmax(add(matmul(hidden, w2), matmul(ones, b2)))


@lru_cache(maxsize=None)
def _batched_adjacency(n: int, batch: int) -> Matrix:
    a = complete_normalized(n)
    out = a if batch == 1 else np.kron(a, np.eye(batch))
    out.setflags(write=False)
    return out


def _modality_block(samples: Sequence[HierarchicalSample], name: str) -> Matrix:
    # rows channel-major, batch-minor
    x = np.stack([np.asarray(s.features[name], dtype=np.float64) for s in samples], axis=1)
    return x.reshape(-1, x.shape[-1])


def sub_modality_forward(samples: Sequence[HierarchicalSample], leaves: Mapping[str, Operand],
                         schema: DatasetSchema, sub_layers: int) -> Node:
    batch = len(samples)
    reps = []
    for mod in schema.modalities:
        x: Operand = _modality_block(samples, mod.name)
        a = _batched_adjacency(mod.channel_count, batch)
        for l in range(sub_layers):
            x = gcn_layer_forward(x, a, leaves[f"gcn/{mod.name}/{l}"])
        reps.append(readout(x, batch))
    return vstack(reps)


@dataclass
class BatchForward:
    probs: Node
    adjacency: list[Node]
    modality_reps: Node
    network_rep: Node


def forward_nodes(samples: Sequence[HierarchicalSample], leaves: Mapping[str, Operand],
                  schema: DatasetSchema, config: ModelConfig) -> BatchForward:
    batch = len(samples)
    if batch < 1:
        raise ContractError("empty batch")
    h0 = sub_modality_forward(samples, leaves, schema, config.sub_layers)
    h = h0
    adjacency = []
    for l in range(config.mod_layers):
        h, a = h2g2_layer_forward(h, leaves[f"phi/{l}"], leaves[f"theta/{l}"], batch)
        adjacency.append(a)
    z = readout(h, batch)
    probs = classifier_forward(z, leaves["fc1/W"], leaves["fc1/b"],
                               leaves["fc2/W"], leaves["fc2/b"])
    return BatchForward(probs, adjacency, h0, z)


def attach(tape: Tape, params: ModelParams, trainable: bool = True) -> dict[str, Node]:
    make = tape.parameter if trainable else tape.constant
    return {k: make(v, name=k) for k, v in params.weights.items()}


@dataclass
class ForwardTrace:
    probabilities: Matrix
    adjacency_sequence: list[Matrix]
    modality_reps: Matrix
    network_rep: Matrix


def model_forward(sample: HierarchicalSample, params: ModelParams,
                  schema: DatasetSchema) -> ForwardTrace:
    problems = validate_sample(sample, schema)
    if problems:
        raise ContractError("invalid sample: " + "; ".join(problems))
    tape = Tape()
    out = forward_nodes([sample], attach(tape, params, trainable=False), schema, params.config)
    return ForwardTrace(out.probs.value, [a.value for a in out.adjacency],
                        out.modality_reps.value, out.network_rep.value)


def predict_proba(samples: Sequence[HierarchicalSample], params: ModelParams,
                  schema: DatasetSchema, batch_size: int = 64) -> Matrix:
    chunks = []
    for start in range(0, len(samples), batch_size):
        tape = Tape()
        part = samples[start:start + batch_size]
        out = forward_nodes(part, attach(tape, params, trainable=False), schema, params.config)
        chunks.append(out.probs.value)
    return np.vstack(chunks)


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(path, params: ModelParams, schema: DatasetSchema, extra: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "schema_hash": params.schema_hash,
        "schema": schema.to_dict(),
        "hyper": asdict(params.config),
        "weights": [{"name": k, "shape": list(v.shape), "data": v.ravel().tolist()}
                    for k, v in params.weights.items()],
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[ModelParams, DatasetSchema]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ContractError(f"{path}: not a version {CHECKPOINT_VERSION} checkpoint")
    schema = DatasetSchema.from_dict(doc["schema"])
    if schema.hash() != doc["schema_hash"]:
        raise ContractError(f"{path}: schema hash mismatch "
                            f"(stored {doc['schema_hash'][:12]}, computed {schema.hash()[:12]})")
    weights = {w["name"]: np.array(w["data"], dtype=np.float64).reshape(w["shape"])
               for w in doc["weights"]}
    params = ModelParams(ModelConfig(**doc["hyper"]), doc["schema_hash"], weights)
    check_params(params, schema)
    return params, schema
