"""Two-stage imitation training and policy evaluation.

Stage 1 is behavioural cloning with cross-entropy on the raw logits.
Stage 2 freezes the graph layers and fine-tunes the dense layers on logits
shifted by ``-omega * s``, where ``s_j`` totals the feasibility-cut
violation of candidate ``j``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cuts import CUT_TOL
from .graph import DatasetSample
from .policy import (
    COMBINATION, INDEPENDENT, OptimizerState, PolicyParams, adam_step, default_descriptor,
    dense_names, ecc_names, init_params, independent_predict, loss_and_grad, predict, prepare,
)
from .problem import ADMISSIBLE


@dataclass
class TrainConfig:
    lr1: float = 1e-3
    batch1: int = 8
    epochs1: int = 20
    lr2: float = 1e-4
    batch2: int = 8
    epochs2: int = 20
    omega: float = 0.1
    seed: int = 0
    train_fraction: float = 0.95
    hidden: int = 64
    dense: tuple[int, int] = (64, 32)

    def __post_init__(self):
        for name in ("lr1", "lr2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("batch1", "batch2", "epochs1", "epochs2", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.omega < 0:
            raise ValueError("omega must be >= 0")
        if not 0 < self.train_fraction <= 1:
            raise ValueError("train_fraction must be in (0, 1]")


@dataclass
class TrainLog:
    epoch_losses: list[float] = field(default_factory=list)


def split_by_instance(samples: Sequence[DatasetSample], train_fraction: float, seed: int):
    """Disjoint train/test split keeping each instance's samples together."""
    seeds = sorted({s.instance_seed for s in samples}, key=lambda v: (v is None, v))
    order = np.random.default_rng(seed).permutation(len(seeds))
    n_train = int(round(train_fraction * len(seeds)))
    if train_fraction < 1 and len(seeds) > 1:
        n_train = min(max(n_train, 1), len(seeds) - 1)
    train_ids = {seeds[i] for i in order[:n_train]}
    train = [s for s in samples if s.instance_seed in train_ids]
    test = [s for s in samples if s.instance_seed not in train_ids]
    return train, test


def _run_epochs(params, samples, mode, omega, lr, batch, epochs, seed, trainable, log, admissible):
    if not samples:
        raise ValueError("empty dataset")
    tensors = [prepare(s.graph) for s in samples]
    state = OptimizerState(lr=lr)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(len(samples))
        total = 0.0
        for start in range(0, len(order), batch):
            idx = order[start:start + batch]
            acc = {n: np.zeros_like(params.arrays[n]) for n in trainable}
            for i in idx:
                loss, grads = loss_and_grad(params, samples[i], mode, omega, admissible,
                                            trainable=trainable, tensors=tensors[i])
                total += loss
                for n in trainable:
                    acc[n] += grads[n]
            for n in trainable:
                acc[n] /= len(idx)
            adam_step(state, params, acc)
        log.epoch_losses.append(total / len(samples))
    return params


def stage1_train(samples: Sequence[DatasetSample], config: TrainConfig, head: str = COMBINATION,
                 admissible=ADMISSIBLE, log: TrainLog | None = None) -> PolicyParams:
    n_out = len(admissible) if head == COMBINATION else len(admissible[0])
    desc = default_descriptor(n_out=n_out, head=head, hidden=config.hidden, dense=tuple(config.dense))
    params = init_params(desc, config.seed)
    if head == INDEPENDENT and any(s.label_assignment is None for s in samples):
        raise ValueError("independent head needs label assignments")
    log = log if log is not None else TrainLog()
    _run_epochs(params, list(samples), "stage1", 0.0, config.lr1, config.batch1, config.epochs1,
                config.seed, list(params.arrays), log, admissible)
    params.meta = {"stages": ["stage1"], "train_samples": len(samples), "seed": config.seed}
    return params


def stage2_finetune(params: PolicyParams, samples: Sequence[DatasetSample], config: TrainConfig,
                    admissible=ADMISSIBLE, log: TrainLog | None = None) -> PolicyParams:
    """Fine-tune the dense layers with the feasibility-adjusted loss.

    Returns a new parameter object; the input is left untouched.
    """
    if params.head != COMBINATION:
        raise ValueError("stage 2 needs the combination head")
    out = params.copy()
    log = log if log is not None else TrainLog()
    _run_epochs(out, list(samples), "stage2", config.omega, config.lr2, config.batch2, config.epochs2,
                config.seed + 1, dense_names(out.descriptor), log, admissible)
    out.frozen = ecc_names(out.descriptor)
    out.meta = dict(out.meta)
    out.meta["stages"] = list(out.meta.get("stages", [])) + ["stage2"]
    out.meta["omega"] = config.omega
    return out


@dataclass
class PolicyMetrics:
    exact_num: int
    exact_den: int
    feas_num: int
    feas_den: int

    @property
    def exact_match(self) -> float:
        return self.exact_num / self.exact_den if self.exact_den else float("nan")

    @property
    def feasibility_satisfaction(self) -> float | None:
        """``None`` when no sample carries a feasibility cut."""
        return self.feas_num / self.feas_den if self.feas_den else None


def _satisfies_rows(rows, y) -> bool:
    y = np.asarray(y, dtype=float)
    return all(a + float(np.dot(b, y)) <= CUT_TOL for a, b in rows)


def evaluate_policy(params: PolicyParams, samples: Sequence[DatasetSample], admissible=ADMISSIBLE) -> PolicyMetrics:
    """Exact-match ratio and cut-feasibility ratio of the predicted assignments.

    For the independent head a rejected prediction counts as a miss and as
    infeasible.
    """
    exact = feas = feas_den = 0
    for s in samples:
        if params.head == COMBINATION:
            j, _ = predict(params, s.graph, admissible)
            y = tuple(admissible[j])
        else:
            y = independent_predict(params, s.graph)
        label = tuple(admissible[s.label_index])
        hit = y is not None and tuple(y) == label
        exact += hit
        if s.feasibility_cuts:
            feas_den += 1
            feas += y is not None and _satisfies_rows(s.feasibility_cuts, y)
    return PolicyMetrics(exact, len(samples), feas, feas_den)


def majority_rate(samples: Sequence[DatasetSample]) -> float:
    if not samples:
        return float("nan")
    counts = np.bincount([s.label_index for s in samples])
    return counts.max() / len(samples)


METRIC_FIELDS = ("model", "exact_match_num", "exact_match_den", "exact_match",
                 "feas_num", "feas_den", "feasibility")


def metrics_row(name: str, m: PolicyMetrics) -> dict:
    fs = m.feasibility_satisfaction
    return {
        "model": name,
        "exact_match_num": m.exact_num,
        "exact_match_den": m.exact_den,
        "exact_match": f"{m.exact_match:.6f}",
        "feas_num": m.feas_num,
        "feas_den": m.feas_den,
        "feasibility": "n/a" if fs is None else f"{fs:.6f}",
    }


def write_metrics_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
