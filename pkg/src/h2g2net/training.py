"""Loss, optimizers, the training loop and leave-one-subject-out evaluation."""

from __future__ import annotations

import logging
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .graph import DatasetSchema, HierarchicalSample, validate_sample
from .layers import (ModelConfig, ModelParams, attach, forward_nodes, init_params,
                     param_group, predict_proba)
from .numerics import ContractError, Matrix, Node, NonFiniteError, Operand, Tape, backward, \
    pick_neglog_mean

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    seed: int = 0
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ContractError("learning_rate must be nonnegative")
        if self.optimizer not in ("adam", "sgd"):
            raise ContractError(f"unknown optimizer {self.optimizer!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ContractError("betas must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ContractError("weight_decay must be nonnegative")


def cross_entropy_loss(probs: Operand, label: int | Sequence[int]) -> Node:
    labels = [label] if np.ndim(label) == 0 else list(label)
    return pick_neglog_mean(probs, labels)


@dataclass
class AdamState:
    m: dict[str, Matrix] = field(default_factory=dict)
    v: dict[str, Matrix] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, Matrix], grads: dict[str, Matrix], state: AdamState,
              config: TrainConfig) -> tuple[dict[str, Matrix], AdamState]:
    """Bias-corrected Adam with decoupled weight decay applied first. Updates in place."""
    state.step += 1
    lr, b1, b2 = config.learning_rate, config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k, p in params.items():
        g = grads[k]
        if config.weight_decay:
            p -= lr * config.weight_decay * p
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return params, state


def sgd_step(params: dict[str, Matrix], grads: dict[str, Matrix], config: TrainConfig) -> dict[str, Matrix]:
    lr = config.learning_rate
    for k, p in params.items():
        if config.weight_decay:
            p -= lr * config.weight_decay * p
        p -= lr * grads[k]
    return params


def batch_loss(samples: Sequence[HierarchicalSample], params: ModelParams,
               schema: DatasetSchema) -> tuple[float, dict[str, Matrix], Matrix]:
    """Mean cross-entropy over ``samples`` and its gradient for every weight."""
    tape = Tape()
    leaves = attach(tape, params)
    out = forward_nodes(samples, leaves, schema, params.config)
    loss = cross_entropy_loss(out.probs, [s.label for s in samples])
    backward(tape, loss)
    return loss.value[0, 0], {k: n.grad for k, n in leaves.items()}, out.probs.value


def _per_sample_loss(probs: Matrix, labels: Sequence[int]) -> Matrix:
    picked = probs[np.arange(len(labels)), labels]
    return -np.log(np.maximum(picked, 1e-12))


def train(dataset: Sequence[HierarchicalSample], schema: DatasetSchema,
          model_cfg: ModelConfig, train_cfg: TrainConfig,
          params: ModelParams | None = None) -> tuple[ModelParams, list[float]]:
    if not dataset:
        raise ContractError("cannot train on an empty dataset")
    for i, s in enumerate(dataset):
        problems = validate_sample(s, schema)
        if problems:
            raise ContractError(f"sample {i} ({s.subject_id}/{s.sample_id}): " + "; ".join(problems))
    params = init_params(schema, model_cfg) if params is None else params.copy()
    rng = np.random.default_rng(train_cfg.seed)
    state = AdamState()
    history = []
    n = len(dataset)
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(n)
        sample_losses = np.empty(n)
        for start in range(0, n, train_cfg.batch_size):
            idx = order[start:start + train_cfg.batch_size]
            batch = [dataset[i] for i in idx]
            try:
                _, grads, probs = batch_loss(batch, params, schema)
            except NonFiniteError as exc:
                raise TrainingAborted(f"epoch {epoch}: {exc}") from exc
            for k, g in grads.items():
                if not np.isfinite(g).all():
                    raise TrainingAborted(f"epoch {epoch}: non-finite gradient in "
                                          f"parameter group {param_group(k)} ({k})")
            sample_losses[idx] = _per_sample_loss(probs, [s.label for s in batch])
            if train_cfg.optimizer == "adam":
                adam_step(params.weights, grads, state, train_cfg)
            else:
                sgd_step(params.weights, grads, train_cfg)
        epoch_loss = float(np.mean(sample_losses))
        if not np.isfinite(epoch_loss):
            raise TrainingAborted(f"epoch {epoch}: loss is {epoch_loss}")
        history.append(epoch_loss)
        log.debug("epoch %d loss %.6f", epoch, epoch_loss)
    return params, history


def evaluate(dataset: Sequence[HierarchicalSample], params: ModelParams,
             schema: DatasetSchema) -> float:
    if not dataset:
        raise ContractError("cannot evaluate an empty dataset")
    probs = predict_proba(dataset, params, schema)
    pred = np.argmax(probs, axis=1)  # first maximum wins ties
    labels = np.array([s.label for s in dataset])
    return float(np.mean(pred == labels))


def loso_split(dataset: Sequence[HierarchicalSample]
               ) -> list[tuple[str, list[HierarchicalSample], list[HierarchicalSample]]]:
    """One ``(subject, train, test)`` fold per subject, ordered by subject id."""
    by_subject = defaultdict(list)
    for s in dataset:
        by_subject[s.subject_id].append(s)
    if len(by_subject) < 2:
        raise ContractError(f"LOSO needs at least 2 subjects, got {len(by_subject)}")
    folds = []
    for subject in sorted(by_subject):
        train_set = [s for s in dataset if s.subject_id != subject]
        folds.append((subject, train_set, by_subject[subject]))
    return folds


@dataclass
class FoldReport:
    held_out_subject: str
    train_subjects: list[str]
    test_accuracy: float
    test_sample_count: int
    final_train_loss: float
    loss_history: list[float] = field(default_factory=list, repr=False)
    params: ModelParams | None = field(default=None, repr=False)


@dataclass
class LosoReport:
    folds: list[FoldReport]
    mean_accuracy: float
    std_accuracy: float
    config_echo: dict = field(default_factory=dict)

    @classmethod
    def from_folds(cls, folds: list[FoldReport], config_echo: dict | None = None) -> LosoReport:
        acc = np.array([f.test_accuracy for f in folds])
        return cls(folds, float(acc.mean()), float(acc.std()), config_echo or {})

    def to_dict(self) -> dict:
        return {
            "folds": [{"subject": f.held_out_subject, "accuracy": f.test_accuracy,
                       "n_test": f.test_sample_count, "final_train_loss": f.final_train_loss,
                       "train_subjects": f.train_subjects}
                      for f in self.folds],
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "config_echo": self.config_echo,
        }


def _run_fold(args) -> FoldReport:
    index, subject, train_set, test_set, schema, model_cfg, train_cfg = args
    seed = train_cfg.seed ^ index
    fold_model = ModelConfig(**{**asdict(model_cfg), "seed": seed})
    fold_train = TrainConfig(**{**asdict(train_cfg), "seed": seed})
    params, history = train(train_set, schema, fold_model, fold_train)
    acc = evaluate(test_set, params, schema)
    log.info("fold %s: accuracy %.3f (n=%d)", subject, acc, len(test_set))
    return FoldReport(subject, sorted({s.subject_id for s in train_set}), acc, len(test_set),
                      history[-1], history, params)


def loso_evaluate(dataset: Sequence[HierarchicalSample], schema: DatasetSchema,
                  model_cfg: ModelConfig, train_cfg: TrainConfig, jobs: int = 1,
                  config_echo: dict | None = None) -> LosoReport:
    jobs_args = [(i, subject, tr, te, schema, model_cfg, train_cfg)
                 for i, (subject, tr, te) in enumerate(loso_split(dataset))]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            folds = list(pool.map(_run_fold, jobs_args))
    else:
        folds = [_run_fold(a) for a in jobs_args]
    return LosoReport.from_folds(folds, config_echo)
