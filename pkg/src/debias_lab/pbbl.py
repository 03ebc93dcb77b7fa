"""Pseudo bias-balanced learning.

1. Start from pseudo-bias labels equal to the targets.
2. Repeat ``num_capture_iters`` times: train a fresh network with GCE on the
   current pseudo-bias labels, build the ROC of its scores against those
   labels, and relabel every training sample by thresholding at the Youden
   point.
3. Estimate p(y | pseudo-bias) and train a fresh debiased network with the
   bias-balanced softmax loss.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .datagen import SampleTable
from .losses import PriorTable
from .metrics import group_auc_report, roc_curve, youden_threshold
from .model import MlpParams, init_mlp, predict_scores
from .trainer import Objective, TrainConfig, TrainHistory, train_model

ROC_LABEL_SOURCE = "current_pseudo_bias"

# Stream identifiers for seed derivation; fixed so runs stay reproducible.
_PHASE_CAPTURE = 1
_PHASE_DEBIAS = 2


class PbblError(RuntimeError):
    pass


@dataclass(frozen=True)
class PbblConfig:
    num_capture_iters: int = 1
    biased_steps: int = 1000
    debiased_steps: int = 1000
    gce_q: float = 0.7
    smoothing_alpha: float = 1.0
    hidden: tuple[int, ...] = (128, 128)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    oracle: bool = False

    def __post_init__(self):
        if self.num_capture_iters < 1:
            raise ValueError("num_capture_iters must be >= 1")
        if self.biased_steps < 1 or self.debiased_steps < 1:
            raise ValueError("step counts must be >= 1")
        if not 0 < self.gce_q <= 1:
            raise ValueError(f"gce_q must lie in (0, 1], got {self.gce_q}")
        if self.smoothing_alpha < 0:
            raise ValueError("smoothing_alpha must be >= 0")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["hidden"] = list(self.hidden)
        return doc


@dataclass(frozen=True)
class PseudoBiasLabels:
    labels: np.ndarray
    iteration: int
    provenance: str  # "init_from_target" | "thresholded" | "ground_truth"
    threshold: float | None = None

    @property
    def degenerate(self) -> bool:
        return self.labels.min() == self.labels.max()


def derive_seed(seed: int, phase: int, index: int = 0) -> int:
    return int(np.random.SeedSequence([seed, phase, index]).generate_state(1, np.uint64)[0])


def _dims(data: SampleTable, hidden) -> tuple[int, ...]:
    return (data.num_features, *hidden, 2)


def agreement(pseudo: np.ndarray, truth: np.ndarray) -> float:
    """Orientation-free agreement: max(a, 1 - a)."""
    a = float(np.mean(np.asarray(pseudo) == np.asarray(truth)))
    return max(a, 1.0 - a)


def estimate_priors(y, pseudo_bias, alpha: float = 1.0, num_classes: int = 2,
                    num_bias_classes: int = 2) -> PriorTable:
    y = np.asarray(y, dtype=np.int64)
    b = np.asarray(pseudo_bias, dtype=np.int64)
    if y.size == 0:
        raise ValueError("cannot estimate priors from an empty label set")
    if y.shape != b.shape:
        raise ValueError("target and bias label vectors differ in length")
    counts = np.zeros((num_classes, num_bias_classes), dtype=np.int64)
    np.add.at(counts, (y, b), 1)
    return PriorTable(counts, smoothing_alpha=alpha)


def assign_pseudo_bias(biased_scores, current_labels, iteration: int = 0) -> PseudoBiasLabels:
    """Threshold ``biased_scores`` at the Youden point of their ROC against ``current_labels``."""
    scores = np.asarray(biased_scores, dtype=np.float64)
    roc = roc_curve(scores, current_labels)
    tau = youden_threshold(roc)
    labels = (scores >= tau).astype(np.int64)
    return PseudoBiasLabels(labels, iteration, "thresholded", tau)


def run_bias_capture(data: SampleTable, config: PbblConfig):
    """Returns ``(biased_params, pseudo_labels, iteration_log)``."""
    train = data.subset("train")
    pseudo = PseudoBiasLabels(train.target.copy(), 0, "init_from_target")
    log = []
    params = None
    for n in range(1, config.num_capture_iters + 1):
        init = init_mlp(_dims(data, config.hidden), derive_seed(config.seed, _PHASE_CAPTURE, n))
        tcfg = replace(config.train, steps=config.biased_steps,
                       seed=derive_seed(config.seed, _PHASE_CAPTURE, n))
        params, _ = train_model(init, data, Objective("gce", q=config.gce_q), tcfg,
                                targets=pseudo.labels, select="last")
        scores = predict_scores(params, train.features)
        try:
            pseudo = assign_pseudo_bias(scores, pseudo.labels, iteration=n)
        except ValueError as exc:
            raise PbblError(f"capture iteration {n}: {exc}") from exc
        entry = {
            "iteration": n,
            "threshold": pseudo.threshold,
            "positive_fraction": float(pseudo.labels.mean()),
            "degenerate": bool(pseudo.degenerate),
        }
        if train.bias is not None:
            entry["agreement"] = agreement(pseudo.labels, train.bias)
        log.append(entry)
    return params, pseudo, log


def debias_init_and_config(data: SampleTable, config: PbblConfig) -> tuple[MlpParams, TrainConfig]:
    """Initial weights and trainer settings for the debiased network.

    Shared with the vanilla baseline so that both runs start from the same
    weights and see the same mini-batch order.
    """
    seed = derive_seed(config.seed, _PHASE_DEBIAS)
    return (
        init_mlp(_dims(data, config.hidden), seed),
        replace(config.train, steps=config.debiased_steps, seed=seed),
    )


def run_vanilla(data: SampleTable, config: PbblConfig, objective: Objective | None = None):
    """Baseline trained with CE (or another plain objective) under PBBL's debiased-phase settings."""
    init, tcfg = debias_init_and_config(data, config)
    params, history = train_model(init, data, objective or Objective("ce"), tcfg)
    return params, history


def evaluate_split(params: MlpParams, data: SampleTable, split: str):
    part = data.subset(split)
    return group_auc_report(predict_scores(params, part.features), part.target, part.bias)


def run_pbbl(data: SampleTable, config: PbblConfig) -> tuple[MlpParams, dict, TrainHistory]:
    """Full pipeline.  Returns ``(debiased_params, report, debiased_history)``."""
    train = data.subset("train")
    report: dict = {"method": "oracle" if config.oracle else "pbbl", "config": config.to_dict()}
    if config.oracle:
        if train.bias is None:
            raise PbblError("oracle mode needs ground-truth bias labels")
        pseudo = PseudoBiasLabels(train.bias.copy(), 0, "ground_truth")
        report["capture"] = []
    else:
        _, pseudo, log = run_bias_capture(data, config)
        report["roc_labels"] = ROC_LABEL_SOURCE
        report["capture"] = log
        if train.bias is not None:
            report["initial_agreement"] = agreement(train.target, train.bias)

    priors = estimate_priors(train.target, pseudo.labels, config.smoothing_alpha)
    report["pseudo_bias"] = {
        "provenance": pseudo.provenance,
        "positive_fraction": float(pseudo.labels.mean()),
        "final_agreement": None if train.bias is None else agreement(pseudo.labels, train.bias),
    }
    report["bias_capture_degenerate"] = bool(pseudo.degenerate)
    report["priors"] = priors.to_dict()

    init, tcfg = debias_init_and_config(data, config)
    objective = Objective("bs", priors=priors, groups=pseudo.labels)
    params, history = train_model(init, data, objective, tcfg)
    report["selected_step"] = history.selected_step
    report["val"] = evaluate_split(params, data, "val").to_dict()
    report["test"] = evaluate_split(params, data, "test").to_dict()
    return params, report, history
