"""Edge-conditioned graph policy in plain numpy.

Architecture: ``n_ecc`` edge-conditioned convolutions, global sum pooling,
two ReLU dense layers and a linear head.  Each ECC layer computes, per node,

    h'_v = relu(R h_v + mean_{u in N(v)} (W0 + e_uv W1) h_u + b)

with isolated nodes getting the root term only.  In matrix form with the
row-normalised adjacency ``M0`` and its edge-weighted twin ``M1``::

    H' = relu(H R^T + M0 H W0^T + M1 H W1^T + b)

Weights are stored ``(out, in)``.  Gradients are derived by hand; the test
suite checks them against central differences.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cuts import scores_from_rows
from .graph import EDGE_SCALE, N_FEATURES, RHS_SCALE, SCHEMA, BipartiteGraph, SchemaError

COMBINATION = "combination"
INDEPENDENT = "independent"
THRESHOLDS = (0.25, 0.75)


def default_descriptor(n_out: int = 12, head: str = COMBINATION, hidden: int = 64,
                       dense: tuple[int, int] = (64, 32), n_ecc: int = 3, n_vars: int = 5) -> dict:
    return {
        "in_features": N_FEATURES + n_vars,
        "n_vars": int(n_vars),
        "hidden": int(hidden),
        "n_ecc": int(n_ecc),
        "dense": [int(d) for d in dense],
        "n_out": int(n_out),
        "head": head,
    }


def param_shapes(desc: dict) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    width = desc["in_features"]
    h = desc["hidden"]
    for layer in range(desc["n_ecc"]):
        for name in ("root", "w0", "w1"):
            shapes[f"ecc{layer}.{name}"] = (h, width)
        shapes[f"ecc{layer}.bias"] = (h,)
        width = h
    d1, d2 = desc["dense"]
    shapes["dense1.w"] = (d1, width)
    shapes["dense1.b"] = (d1,)
    shapes["dense2.w"] = (d2, d1)
    shapes["dense2.b"] = (d2,)
    shapes["out.w"] = (desc["n_out"], d2)
    shapes["out.b"] = (desc["n_out"],)
    return shapes


@dataclass
class PolicyParams:
    arrays: dict[str, np.ndarray]
    descriptor: dict
    scaling: dict = field(default_factory=lambda: {"rhs": RHS_SCALE, "edge": EDGE_SCALE})
    frozen: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def head(self) -> str:
        return self.descriptor["head"]

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            {k: v.copy() for k, v in self.arrays.items()}, dict(self.descriptor),
            dict(self.scaling), list(self.frozen), json.loads(json.dumps(self.meta)),
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.arrays):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.arrays[name], dtype=np.float64).tobytes())
        return h.hexdigest()


def init_params(descriptor: dict, seed: int) -> PolicyParams:
    """Uniform in ``+-1/sqrt(fan_in)``; biases use their layer's fan-in."""
    rng = np.random.default_rng(seed)
    shapes = param_shapes(descriptor)
    arrays = {}
    fan = None
    for name, shape in shapes.items():
        if len(shape) == 2:
            fan = shape[1]
        bound = 1.0 / np.sqrt(fan)
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    return PolicyParams(arrays, dict(descriptor))


def ecc_names(desc: dict) -> list[str]:
    return [n for n in param_shapes(desc) if n.startswith("ecc")]


def dense_names(desc: dict) -> list[str]:
    return [n for n in param_shapes(desc) if not n.startswith("ecc")]


@dataclass
class GraphTensors:
    h0: np.ndarray
    m0: np.ndarray
    m1: np.ndarray


def prepare(graph: BipartiteGraph) -> GraphTensors:
    """Node features plus mean-aggregation operators over the bipartite edges.

    Variable nodes get a one-hot position code appended to the encoder's
    three channels.  Without it every variable node looks alike and sum
    pooling would make the logits invariant to relabelling the binaries,
    while the target combination is not.
    """
    n_v, n_c = graph.n_vars, graph.n_cuts
    n = n_v + n_c
    position = np.zeros((n, n_v))
    position[np.arange(n_v), np.arange(n_v)] = 1.0
    h0 = np.hstack([graph.node_features(), position])
    a0 = np.zeros((n, n))
    a1 = np.zeros((n, n))
    if len(graph.edge_var):
        v = graph.edge_var
        c = graph.edge_cut + n_v
        np.add.at(a0, (v, c), 1.0)
        np.add.at(a0, (c, v), 1.0)
        np.add.at(a1, (v, c), graph.edge_weight)
        np.add.at(a1, (c, v), graph.edge_weight)
    deg = a0.sum(axis=1)
    inv = np.divide(1.0, deg, out=np.zeros(n), where=deg > 0)
    return GraphTensors(h0, a0 * inv[:, None], a1 * inv[:, None])


def _as_tensors(graph) -> GraphTensors:
    return graph if isinstance(graph, GraphTensors) else prepare(graph)


def _forward(params: PolicyParams, gt: GraphTensors):
    p = params.arrays
    desc = params.descriptor
    cache = {"H": [gt.h0], "Z": []}
    h = gt.h0
    for layer in range(desc["n_ecc"]):
        z = (
            h @ p[f"ecc{layer}.root"].T
            + gt.m0 @ h @ p[f"ecc{layer}.w0"].T
            + gt.m1 @ h @ p[f"ecc{layer}.w1"].T
            + p[f"ecc{layer}.bias"]
        )
        h = np.maximum(z, 0.0)
        cache["Z"].append(z)
        cache["H"].append(h)
    pooled = h.sum(axis=0)
    a1 = p["dense1.w"] @ pooled + p["dense1.b"]
    h1 = np.maximum(a1, 0.0)
    a2 = p["dense2.w"] @ h1 + p["dense2.b"]
    h2 = np.maximum(a2, 0.0)
    out = p["out.w"] @ h2 + p["out.b"]
    cache.update(pooled=pooled, a1=a1, h1=h1, a2=a2, h2=h2)
    return out, cache


def _backward(params: PolicyParams, gt: GraphTensors, cache, d_out, skip_ecc=False):
    p = params.arrays
    desc = params.descriptor
    g = {}
    g["out.w"] = np.outer(d_out, cache["h2"])
    g["out.b"] = d_out.copy()
    d_a2 = (p["out.w"].T @ d_out) * (cache["a2"] > 0)
    g["dense2.w"] = np.outer(d_a2, cache["h1"])
    g["dense2.b"] = d_a2
    d_a1 = (p["dense2.w"].T @ d_a2) * (cache["a1"] > 0)
    g["dense1.w"] = np.outer(d_a1, cache["pooled"])
    g["dense1.b"] = d_a1
    if skip_ecc:
        return g
    d_pooled = p["dense1.w"].T @ d_a1
    d_h = np.broadcast_to(d_pooled, cache["H"][-1].shape)
    for layer in reversed(range(desc["n_ecc"])):
        h_in = cache["H"][layer]
        d_z = d_h * (cache["Z"][layer] > 0)
        g[f"ecc{layer}.root"] = d_z.T @ h_in
        g[f"ecc{layer}.w0"] = d_z.T @ (gt.m0 @ h_in)
        g[f"ecc{layer}.w1"] = d_z.T @ (gt.m1 @ h_in)
        g[f"ecc{layer}.bias"] = d_z.sum(axis=0)
        if layer:
            d_h = (
                d_z @ p[f"ecc{layer}.root"]
                + gt.m0.T @ (d_z @ p[f"ecc{layer}.w0"])
                + gt.m1.T @ (d_z @ p[f"ecc{layer}.w1"])
            )
    return g


def forward(params: PolicyParams, graph) -> np.ndarray:
    """Raw outputs: logits for the combination head, pre-sigmoid scores otherwise."""
    gt = _as_tensors(graph)
    if gt.h0.shape[1] != params.descriptor["in_features"]:
        raise ValueError(f"graph has {gt.h0.shape[1]} features, policy expects {params.descriptor['in_features']}")
    return _forward(params, gt)[0]


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def _log_softmax(z):
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def loss_and_grad(params: PolicyParams, sample, mode: str = "stage1", omega: float = 0.0,
                  admissible=None, trainable=None, tensors: GraphTensors | None = None):
    """Loss for one sample and gradients w.r.t. the trainable parameters.

    ``mode`` is ``"stage1"`` (cross-entropy on logits) or ``"stage2"``
    (cross-entropy on ``logits - omega * s``).  For the independent head the
    loss is the summed binary cross-entropy against the label assignment.
    """
    gt = tensors if tensors is not None else prepare(sample.graph)
    out, cache = _forward(params, gt)
    if params.head == INDEPENDENT:
        if mode != "stage1":
            raise ValueError("independent head only supports behavioural cloning")
        target = np.asarray(sample.label_assignment, dtype=float)
        # numerically stable BCE with logits
        loss = float(np.sum(np.maximum(out, 0) - out * target + np.log1p(np.exp(-np.abs(out)))))
        d_out = _sigmoid(out) - target
    else:
        z = out
        if mode == "stage2":
            if admissible is None:
                raise ValueError("stage2 needs the admissible set")
            z = out - omega * scores_from_rows(sample.feasibility_cuts, admissible)
        elif mode != "stage1":
            raise ValueError(f"unknown mode {mode!r}")
        logp = _log_softmax(z)
        loss = float(-logp[sample.label_index])
        d_out = np.exp(logp)
        d_out[sample.label_index] -= 1.0
    names = list(params.arrays) if trainable is None else list(trainable)
    skip_ecc = not any(n.startswith("ecc") for n in names)
    grads = _backward(params, gt, cache, d_out, skip_ecc=skip_ecc)
    return loss, {n: grads[n] for n in names}


def predict(params: PolicyParams, graph, admissible=None) -> tuple[int, np.ndarray]:
    """Argmax index (smallest on ties) and softmax probabilities."""
    probs = softmax(forward(params, graph))
    return int(np.argmax(probs)), probs


def adjusted_probabilities(logits, scores, omega: float) -> np.ndarray:
    return softmax(np.asarray(logits) - omega * np.asarray(scores))


def independent_outputs(params: PolicyParams, graph) -> np.ndarray:
    if params.head != INDEPENDENT:
        raise ValueError("policy does not have an independent head")
    return _sigmoid(forward(params, graph))


def threshold_assignment(outputs, thresholds=THRESHOLDS):
    """Binary assignment from sigmoid outputs, or ``None`` inside the dead zone."""
    lo, hi = thresholds
    y = []
    for o in outputs:
        if o >= hi:
            y.append(1)
        elif o <= lo:
            y.append(0)
        else:
            return None
    return tuple(y)


def independent_predict(params: PolicyParams, graph, thresholds=THRESHOLDS):
    return threshold_assignment(independent_outputs(params, graph), thresholds)


@dataclass
class OptimizerState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: OptimizerState, params: PolicyParams, grads: dict) -> None:
    """In-place bias-corrected Adam update of the parameters named in ``grads``."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params.arrays[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def save_params(params: PolicyParams, path) -> None:
    doc = {
        "schema": SCHEMA,
        "kind": "policy",
        "descriptor": params.descriptor,
        "scaling": params.scaling,
        "frozen": params.frozen,
        "meta": params.meta,
        "params": {
            name: {"shape": list(a.shape), "data": a.ravel().tolist()}
            for name, a in params.arrays.items()
        },
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")), encoding="utf-8")


def load_params(path, expected_head: str | None = None) -> PolicyParams:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema") != SCHEMA or doc.get("kind") != "policy":
        raise SchemaError(f"{path}: not a {SCHEMA} policy file")
    desc = doc["descriptor"]
    if expected_head is not None and desc.get("head") != expected_head:
        raise SchemaError(f"{path}: head {desc.get('head')!r}, expected {expected_head!r}")
    shapes = param_shapes(desc)
    stored = doc["params"]
    if set(stored) != set(shapes):
        raise SchemaError(f"{path}: parameter names do not match the descriptor")
    arrays = {}
    for name, shape in shapes.items():
        entry = stored[name]
        if tuple(entry["shape"]) != shape or len(entry["data"]) != int(np.prod(shape)):
            raise SchemaError(f"{path}: {name} has shape {entry['shape']}, expected {list(shape)}")
        arrays[name] = np.array(entry["data"], dtype=float).reshape(shape)
    scaling = doc.get("scaling", {})
    if scaling.get("rhs") != RHS_SCALE or scaling.get("edge") != EDGE_SCALE:
        raise SchemaError(f"{path}: feature scaling {scaling} differs from the encoder")
    return PolicyParams(arrays, desc, scaling, list(doc.get("frozen", [])), doc.get("meta", {}))
