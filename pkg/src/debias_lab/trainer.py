"""Mini-batch Adam training with validation-AUC checkpoint selection."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import losses
from .datagen import SampleTable
from .metrics import auc_score
from .model import MlpParams, mlp_backward, mlp_forward, softmax_stable


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch_size: int = 256
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    eval_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: MlpParams) -> AdamState:
        flat = params.flat()
        return cls([np.zeros_like(a) for a in flat], [np.zeros_like(a) for a in flat])


def adam_update(params: MlpParams, grads, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam step.  Returns new ``(params, state)``."""
    flat_p = params.flat()
    flat_g = [g for layer in grads for g in layer]
    if len(flat_g) != len(flat_p) or any(p.shape != g.shape for p, g in zip(flat_p, flat_g)):
        raise ValueError("gradient shapes do not match parameters")
    b1, b2 = config.beta1, config.beta2
    t = state.t + 1
    m = [b1 * m0 + (1 - b1) * g for m0, g in zip(state.m, flat_g)]
    v = [b2 * v0 + (1 - b2) * (g * g) for v0, g in zip(state.v, flat_g)]
    bc1, bc2 = 1 - b1**t, 1 - b2**t
    new = [
        p - config.learning_rate * (mi / bc1) / (np.sqrt(vi / bc2) + config.epsilon)
        for p, mi, vi in zip(flat_p, m, v)
    ]
    layers = [(new[2 * i], new[2 * i + 1]) for i in range(len(params.layers))]
    return MlpParams(layers, params.init_seed), AdamState(m, v, t)


@dataclass(frozen=True)
class Objective:
    """Training loss selector: ``ce``, ``gce`` (with ``q``) or ``bs`` (with priors).

    For ``bs`` the ``groups`` vector holds the bias label of every training row.
    """

    kind: str = "ce"
    q: float = 0.7
    priors: losses.PriorTable | None = None
    groups: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("ce", "gce", "bs"):
            raise ValueError(f"unknown objective {self.kind!r}")
        if self.kind == "gce" and not 0 < self.q <= 1:
            raise ValueError(f"q must lie in (0, 1], got {self.q}")
        if self.kind == "bs" and (self.priors is None or self.groups is None):
            raise ValueError("bs objective needs priors and per-row bias groups")

    @property
    def label(self) -> str:
        return f"gce(q={self.q})" if self.kind == "gce" else self.kind

    def loss_and_grad(self, logits, y, idx):
        if self.kind == "bs":
            return losses.bs_loss(logits, y, self.groups[idx], self.priors)
        probs = softmax_stable(logits)
        if self.kind == "gce":
            return losses.gce_loss(probs, y, self.q)
        return losses.ce_loss(probs, y)

    def per_sample(self, logits, y) -> np.ndarray:
        if self.kind == "bs":
            return losses.bs_per_sample(logits, y, self.groups, self.priors)
        probs = softmax_stable(logits)
        if self.kind == "gce":
            return losses.gce_per_sample(probs, y, self.q)
        return losses.ce_per_sample(probs, y)


@dataclass(frozen=True)
class EvalRecord:
    step: int
    train_loss: float
    aligned_loss: float | None
    conflicting_loss: float | None
    val_auc: float


@dataclass
class TrainHistory:
    records: list[EvalRecord] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    selected_step: int | None = None

    def write_csv(self, path) -> None:
        def fmt(v):
            return "" if v is None else repr(float(v))

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "train_loss", "aligned_loss", "conflicting_loss", "val_auc"])
            for r in self.records:
                w.writerow(
                    [r.step, fmt(r.train_loss), fmt(r.aligned_loss), fmt(r.conflicting_loss), fmt(r.val_auc)]
                )


def select_best_checkpoint(history: TrainHistory, snapshots: list[MlpParams]) -> MlpParams:
    """Snapshot with the highest validation AUC; ties go to the earliest step."""
    if not history.records or len(snapshots) != len(history.records):
        raise ValueError("need one snapshot per evaluation record")
    aucs = [r.val_auc for r in history.records]
    best = int(np.argmax(aucs))  # argmax returns the first maximum
    history.selected_step = history.records[best].step
    return snapshots[best]


def _batches(rng: np.random.Generator, n: int, batch_size: int):
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start : start + batch_size]


def train_model(
    params: MlpParams,
    data: SampleTable,
    objective: Objective,
    config: TrainConfig,
    *,
    targets: np.ndarray | None = None,
    select: str = "best",
) -> tuple[MlpParams, TrainHistory]:
    """Train on the ``train`` split, evaluating every ``eval_every`` steps.

    ``targets`` overrides the training labels (the bias-capture phase fits
    pseudo-bias labels).  Validation AUC is always measured against the
    target labels of the ``val`` split.  ``select="last"`` skips checkpoint
    selection and returns the final parameters.
    """
    if select not in ("best", "last"):
        raise ValueError("select must be 'best' or 'last'")
    train, val = data.subset("train"), data.subset("val")
    if train.num_rows == 0 or val.num_rows == 0:
        raise ValueError("training needs non-empty train and val splits")
    y = train.target if targets is None else np.asarray(targets, dtype=np.int64)
    if y.shape != (train.num_rows,):
        raise ValueError("targets must have one entry per training row")
    tags = None if train.bias is None else train.target == train.bias

    rng = np.random.default_rng(config.seed)
    batches = _batches(rng, train.num_rows, config.batch_size)
    state = AdamState.zeros_like(params)
    history = TrainHistory()
    snapshots = []
    for step in range(1, config.steps + 1):
        idx = next(batches)
        logits, cache = mlp_forward(params, train.features[idx])
        loss, grad_logits = objective.loss_and_grad(logits, y[idx], idx)
        history.step_losses.append(loss)
        grads = mlp_backward(params, cache, grad_logits)
        params, state = adam_update(params, grads, state, config)
        if step % config.eval_every == 0 or step == config.steps:
            history.records.append(_evaluate(params, train, val, y, tags, objective, step))
            if select == "best":
                snapshots.append(params)
    if select == "last":
        history.selected_step = config.steps
        return params, history
    return select_best_checkpoint(history, snapshots), history


def _evaluate(params, train, val, y, tags, objective, step) -> EvalRecord:
    logits, _ = mlp_forward(params, train.features)
    per = objective.per_sample(logits, y)
    aligned = conflicting = None
    if tags is not None:
        aligned = float(per[tags].mean()) if tags.any() else None
        conflicting = float(per[~tags].mean()) if (~tags).any() else None
    val_logits, _ = mlp_forward(params, val.features)
    val_auc = auc_score(softmax_stable(val_logits)[:, 1], val.target)
    return EvalRecord(step, float(per.mean()), aligned, conflicting, val_auc)


def with_seed(config: TrainConfig, seed: int) -> TrainConfig:
    return replace(config, seed=seed)
