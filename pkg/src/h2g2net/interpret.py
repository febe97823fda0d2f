"""Reading the learned modality graphs: adjacency sequence, ranked flows and
meta-paths.

Orientation: ``A[i][j]`` is the weight with which modality ``j`` feeds the
update of modality ``i``, i.e. a flow ``j -> i``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import DatasetSchema
from .layers import ModelParams
from .numerics import ContractError, Matrix, row_softmax

ORIENTATION = "A[i][j] = j->i"
MAX_PATH_MODALITIES = 16


@dataclass
class AdjacencySequence:
    modality_names: list[str]
    matrices: list[Matrix]

    def __len__(self) -> int:
        return len(self.matrices)


@dataclass(frozen=True)
class Flow:
    source: str
    target: str
    weight: float


@dataclass
class FlowRanking:
    layer: int
    flows: list[Flow]


@dataclass(frozen=True)
class MetaPath:
    nodes: tuple[str, ...]
    score: float


def extract_adjacency_sequence(params: ModelParams, schema: DatasetSchema) -> AdjacencySequence:
    mats = [row_softmax(params.weights[f"phi/{l}"]).value
            for l in range(params.config.mod_layers)]
    return AdjacencySequence(list(schema.names), mats)


def rank_flows(seq: AdjacencySequence, layer: int) -> FlowRanking:
    if not 0 <= layer < len(seq):
        raise ContractError(f"layer {layer} out of range for {len(seq)} layers")
    a = seq.matrices[layer]
    names = seq.modality_names
    flows = [Flow(names[j], names[i], float(a[i, j]))
             for i in range(len(names)) for j in range(len(names))]
    flows.sort(key=lambda f: (-f.weight, f.source, f.target))
    return FlowRanking(layer, flows)


def outgoing_weight(seq: AdjacencySequence, layer: int) -> dict[str, float]:
    """Total weight each modality sends out in ``layer`` (column sums)."""
    col = seq.matrices[layer].sum(axis=0)
    return {n: float(w) for n, w in zip(seq.modality_names, col)}


def top_sources(seq: AdjacencySequence, layer: int, k: int = 2) -> list[str]:
    out = outgoing_weight(seq, layer)
    return sorted(out, key=lambda n: (-out[n], n))[:k]


def path_scores(seq: AdjacencySequence) -> np.ndarray:
    """Score tensor ``S[n0, ..., nL]`` for every node sequence of length L+1."""
    m = len(seq.modality_names)
    scores = np.ones((m,))
    for a in seq.matrices:
        # step n_prev -> n_next uses A[n_next][n_prev]
        scores = scores[..., None] * a.T.reshape((1,) * (scores.ndim - 1) + (m, m))
    return scores


def top_meta_paths(seq: AdjacencySequence, k: int) -> list[MetaPath]:
    if k < 1:
        raise ContractError("k must be at least 1")
    m = len(seq.modality_names)
    if m > MAX_PATH_MODALITIES:
        raise ContractError(f"{m} modalities: exhaustive enumeration of {m}^{len(seq) + 1} "
                            f"paths is limited to {MAX_PATH_MODALITIES} modalities")
    scores = path_scores(seq)
    names = seq.modality_names
    paths = [(-float(scores[idx]), tuple(names[i] for i in idx))
             for idx in itertools.product(range(m), repeat=len(seq) + 1)]
    paths.sort()
    return [MetaPath(nodes, -neg) for neg, nodes in paths[:k]]


def export_json(seq: AdjacencySequence, path, k: int = 10, top_flows: int = 10,
                extra: dict | None = None) -> dict:
    doc = {
        "modalities": seq.modality_names,
        "orientation": ORIENTATION,
        "layers": [a.ravel().tolist() for a in seq.matrices],
        "outgoing_weight": [outgoing_weight(seq, l) for l in range(len(seq))],
        "top_flows": [[{"source": f.source, "target": f.target, "weight": f.weight}
                       for f in rank_flows(seq, l).flows[:top_flows]]
                      for l in range(len(seq))],
        "top_meta_paths": [{"path": list(p.nodes), "score": p.score}
                           for p in top_meta_paths(seq, k)],
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")
    return doc


def write_heatmaps(seq: AdjacencySequence, out_dir, prefix: str = "adjacency") -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    names = seq.modality_names
    written = []
    for l, a in enumerate(seq.matrices):
        fig, ax = plt.subplots(figsize=(5, 4.5))
        im = ax.imshow(a, vmin=0.0, vmax=max(float(a.max()), 1e-12), cmap="viridis")
        ax.set_xticks(range(len(names)), names, rotation=90)
        ax.set_yticks(range(len(names)), names)
        ax.set_xlabel("source j")
        ax.set_ylabel("target i")
        ax.set_title(f"layer {l}  ({ORIENTATION})")
        fig.colorbar(im, ax=ax)
        fig.tight_layout()
        path = out_dir / f"{prefix}_layer{l}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written.append(path)
    return written
