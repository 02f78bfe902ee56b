"""Bipartite graph view of a master problem and the JSONL dataset format.

Node features have three channels ``[node_type, value, cut_flag]``:
variable nodes carry the previous binary value, cut nodes the scaled
right-hand side ``-alpha`` of ``beta . y <= -alpha (+ mu_B)``.  Edges carry
the scaled nonzero coefficients ``beta_i``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .cuts import FEASIBILITY, CutStore

SCHEMA = "v1"
RHS_SCALE = 1.0 / 100.0
EDGE_SCALE = 1.0 / 10.0
N_FEATURES = 3


class SchemaError(ValueError):
    pass


@dataclass
class BipartiteGraph:
    var_features: np.ndarray  # (m, 3)
    cut_features: np.ndarray  # (c, 3)
    edge_var: np.ndarray  # (e,) int
    edge_cut: np.ndarray  # (e,) int
    edge_weight: np.ndarray  # (e,)

    @property
    def n_vars(self) -> int:
        return self.var_features.shape[0]

    @property
    def n_cuts(self) -> int:
        return self.cut_features.shape[0]

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return list(zip(self.edge_var.tolist(), self.edge_cut.tolist(), self.edge_weight.tolist()))

    def node_features(self) -> np.ndarray:
        return np.vstack([self.var_features, self.cut_features])

    def permute_cuts(self, perm) -> "BipartiteGraph":
        """Reorder cut nodes; ``perm[new] = old``."""
        perm = np.asarray(perm, dtype=int)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return BipartiteGraph(
            self.var_features.copy(), self.cut_features[perm], self.edge_var.copy(),
            inv[self.edge_cut], self.edge_weight.copy(),
        )

    def to_dict(self) -> dict:
        return {
            "var_features": self.var_features.tolist(),
            "cut_features": self.cut_features.tolist(),
            "edges": [[int(v), int(c), float(w)] for v, c, w in self.edges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BipartiteGraph":
        edges = d["edges"]
        return cls(
            var_features=np.array(d["var_features"], dtype=float).reshape(-1, N_FEATURES),
            cut_features=np.array(d["cut_features"], dtype=float).reshape(-1, N_FEATURES),
            edge_var=np.array([e[0] for e in edges], dtype=int),
            edge_cut=np.array([e[1] for e in edges], dtype=int),
            edge_weight=np.array([e[2] for e in edges], dtype=float),
        )


def encode(store: CutStore, y_prev) -> BipartiteGraph:
    y_prev = np.asarray(y_prev, dtype=float)
    m = len(y_prev)
    var = np.zeros((m, N_FEATURES))
    var[:, 1] = y_prev
    cuts = store.in_order()
    cut_feat = np.zeros((len(cuts), N_FEATURES))
    ev, ec, ew = [], [], []
    for j, cut in enumerate(cuts):
        cut_feat[j] = (1.0, -cut.alpha * RHS_SCALE, 1.0 if cut.kind == FEASIBILITY else 0.0)
        for i in np.flatnonzero(cut.beta):
            ev.append(int(i))
            ec.append(j)
            ew.append(cut.beta[i] * EDGE_SCALE)
    return BipartiteGraph(
        var, cut_feat, np.array(ev, dtype=int), np.array(ec, dtype=int), np.array(ew, dtype=float)
    )


def decode_cuts(graph: BipartiteGraph) -> list[tuple[str, float, np.ndarray]]:
    """Inverse of the cut part of :func:`encode` (kind, alpha, beta)."""
    out = []
    for j in range(graph.n_cuts):
        beta = np.zeros(graph.n_vars)
        sel = graph.edge_cut == j
        beta[graph.edge_var[sel]] = graph.edge_weight[sel] / EDGE_SCALE
        kind = FEASIBILITY if graph.cut_features[j, 2] == 1.0 else "optimality"
        out.append((kind, -graph.cut_features[j, 1] / RHS_SCALE, beta))
    return out


@dataclass
class DatasetSample:
    graph: BipartiteGraph
    label_index: int
    feasibility_cuts: list[tuple[float, list[float]]] = field(default_factory=list)
    instance_seed: int | None = None
    iteration: int = 0
    label_assignment: tuple[int, ...] | None = None

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "instance_seed": self.instance_seed,
            "iteration": self.iteration,
            "label_index": self.label_index,
            "label_assignment": list(self.label_assignment) if self.label_assignment else None,
            "feasibility_cuts": [[float(a), [float(b) for b in beta]] for a, beta in self.feasibility_cuts],
            "graph": self.graph.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSample":
        if d.get("schema") != SCHEMA:
            raise SchemaError(f"dataset schema {d.get('schema')!r}, expected {SCHEMA!r}")
        label = d.get("label_assignment")
        return cls(
            graph=BipartiteGraph.from_dict(d["graph"]),
            label_index=int(d["label_index"]),
            feasibility_cuts=[(float(a), [float(b) for b in beta]) for a, beta in d["feasibility_cuts"]],
            instance_seed=d.get("instance_seed"),
            iteration=int(d.get("iteration", 0)),
            label_assignment=tuple(label) if label is not None else None,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


def make_sample(store: CutStore, y_prev, label_index: int, label_assignment=None,
                instance_seed=None, iteration: int = 0) -> DatasetSample:
    return DatasetSample(
        graph=encode(store, y_prev),
        label_index=int(label_index),
        feasibility_cuts=[(c.alpha, c.beta.tolist()) for c in store.feasibility],
        instance_seed=instance_seed,
        iteration=iteration,
        label_assignment=tuple(int(v) for v in label_assignment) if label_assignment is not None else None,
    )


def write_jsonl(path, samples: Iterable[DatasetSample]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(s.to_json())
            fh.write("\n")
            n += 1
    return n


def iter_jsonl(path) -> Iterator[DatasetSample]:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield DatasetSample.from_dict(json.loads(line))
            except SchemaError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None


def read_jsonl(path) -> list[DatasetSample]:
    return list(iter_jsonl(path))
