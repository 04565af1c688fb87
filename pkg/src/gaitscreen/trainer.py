"""Batch sampling, the SGD training loop, evaluation metrics, imbalance
sweeps and ablations.

Batches follow the metric-learning recipe: P subjects x Q contiguous frame
windows each, so every anchor has a same-subject positive. Subjects are drawn
uniformly (class mix matches the dataset ratio in expectation); if a draw
lands on a single class, one slot is re-drawn from the other classes so a
valid triplet always exists. Evaluation averages window logits per sequence
and reports the confusion-matrix-derived metric schema: accuracy, sensitivity
(negative-class recall), specificity (macro recall of the other classes),
macro F1 and per-class recall.
"""

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import autograd as ag
from .datasynth import LABELS, LABEL_INDEX, DatasetConfig, generate_dataset
from .dtwcluster import partition_boundaries, uniform_boundaries
from .errors import NumericError, SamplerError
from .losses import BatchLabels, TripletConfig, total_loss
from .model import GaitScreenNet, ModelConfig

VARIANTS = ("full", "no_bam", "no_text", "no_ibta", "no_dtw")


@dataclass(frozen=True)
class SamplerConfig:
    subjects_per_batch: int = 4   # P
    samples_per_subject: int = 2  # Q
    window: int = 30              # T, frames per sampled window

    def __post_init__(self):
        if self.subjects_per_batch < 2 or self.samples_per_subject < 2:
            raise ValueError("need P >= 2 subjects and Q >= 2 windows for valid triplets")
        if self.window < 4:
            raise ValueError(f"window length {self.window} is too short")


@dataclass(frozen=True)
class TrainerConfig:
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 40
    steps_per_epoch: int = 4
    seed: int = 0
    variant: str = "full"
    margin: float = 0.2
    loss_weights: tuple = (1.0, 1.0, 1.0)
    cosine_decay: bool = True
    warmup_steps: int = 10
    holdout_fraction: float = 0.2
    ratio: tuple = (1, 1, 8)

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 1 or self.steps_per_epoch < 1:
            raise ValueError("lr, epochs and steps_per_epoch must be positive")
        if self.warmup_steps < 0:
            raise ValueError(f"warmup_steps must be >= 0, got {self.warmup_steps}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0,1), got {self.momentum}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


@dataclass
class Batch:
    windows: list  # [S_b, H, W] uint8 arrays
    labels: BatchLabels


@dataclass(frozen=True)
class PipelineOptions:
    """Variant-resolved forward-pass settings shared by train and eval."""

    text_ternary: np.ndarray
    text_binary: np.ndarray
    aggregate: str = "attention"
    use_dtw: bool = True
    window: int = 30

    @classmethod
    def for_variant(cls, variant, text_embeddings, model_config: ModelConfig, window: int):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
        if variant == "no_text":
            t3 = np.zeros(model_config.text_dim)
            tb = np.zeros(model_config.text_dim)
        else:
            t3 = text_embeddings["ternary"].vector
            tb = text_embeddings["binary"].vector
        return cls(text_ternary=t3, text_binary=tb,
                   aggregate="mean" if variant == "no_ibta" else "attention",
                   use_dtw=variant != "no_dtw", window=window)


def window_boundaries(frames, bags: int, use_dtw: bool = True) -> np.ndarray:
    if use_dtw:
        return partition_boundaries(frames, bags)
    return uniform_boundaries(len(frames), bags)


# ---------------------------------------------------------------------------
# batch sampling


def sample_batch(dataset, config: SamplerConfig, rng) -> Batch:
    """P subjects x Q windows with a guaranteed valid triplet."""
    n = len(dataset)
    if n < config.subjects_per_batch:
        raise SamplerError(
            f"need at least {config.subjects_per_batch} subjects, dataset has {n}")
    labels = np.array([LABEL_INDEX[s.label] for s in dataset])
    if np.unique(labels).size < 2:
        raise SamplerError("dataset spans a single class; no valid triplets possible")

    chosen = rng.choice(n, size=config.subjects_per_batch, replace=False)
    if np.unique(labels[chosen]).size == 1:
        # single-class draw: swap one slot so the batch spans two classes
        others = np.flatnonzero(labels != labels[chosen[0]])
        chosen[-1] = rng.choice(others)

    windows, class3, ids = [], [], []
    for idx in chosen:
        seq = dataset[idx]
        s, t = seq.frame_count, config.window
        if s <= t:
            if s == t:
                warnings.warn(f"subject {seq.subject_id}: only one distinct window (S == T)")
            else:
                warnings.warn(f"subject {seq.subject_id}: sequence shorter than window ({s} < {t})")
            starts = [0] * config.samples_per_subject
        else:
            n_starts = s - t + 1
            distinct = n_starts >= config.samples_per_subject
            starts = rng.choice(n_starts, size=config.samples_per_subject, replace=not distinct)
        for st in starts:
            windows.append(seq.frames[st:st + t] if s > t else seq.frames)
            class3.append(LABEL_INDEX[seq.label])
            ids.append(seq.subject_id)
    return Batch(windows=windows, labels=BatchLabels.from_class3(class3, ids))


# ---------------------------------------------------------------------------
# optimization


class SGD:
    """Momentum SGD over a named parameter dict."""

    def __init__(self, params, momentum: float):
        self.params = params
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, lr: float):
        for name, p in self.params.items():
            v = self.velocity[name]
            v *= self.momentum
            v += p.grad
            p.data -= lr * v


def _cosine_lr(base: float, step: int, total: int) -> float:
    return base * 0.5 * (1.0 + math.cos(math.pi * step / total))


def _snapshot(model: GaitScreenNet):
    state = {name: p.data.copy() for name, p in model.named_parameters().items()}
    state.update({name: b.copy() for name, b in model.named_buffers().items()})
    return state


def _restore(model: GaitScreenNet, state):
    for name, p in model.named_parameters().items():
        p.data[...] = state[name]
    for name, b in model.named_buffers().items():
        b[...] = state[name]


def train(dataset, model_config: ModelConfig, sampler_config: SamplerConfig,
          trainer_config: TrainerConfig, text_embeddings):
    """Train a fresh model; returns (model, per-epoch loss history).

    Deterministic in (configs, dataset): one seeded generator drives all
    sampling. A non-finite loss aborts with parameters restored to the last
    epoch that finished finite.
    """
    options = PipelineOptions.for_variant(
        trainer_config.variant, text_embeddings, model_config, sampler_config.window)
    model = GaitScreenNet(model_config)
    rng = np.random.default_rng(trainer_config.seed)
    optimizer = SGD(model.named_parameters(), trainer_config.momentum)
    triplet_config = TripletConfig(margin=trainer_config.margin)
    include_binary = trainer_config.variant != "no_bam"
    total_steps = trainer_config.epochs * trainer_config.steps_per_epoch

    history = []
    last_good = _snapshot(model)
    step = 0
    for epoch in range(1, trainer_config.epochs + 1):
        sums = {"total": 0.0, "triplet": 0.0, "ce": 0.0, "binary_ce": 0.0}
        for _ in range(trainer_config.steps_per_epoch):
            batch = sample_batch(dataset, sampler_config, rng)
            bounds = [window_boundaries(w, model_config.bags, options.use_dtw)
                      for w in batch.windows]
            model.zero_grad()
            with ag.tape() as t:
                out = model.forward_windows(
                    batch.windows, bounds, options.text_ternary, options.text_binary,
                    train=True, aggregate=options.aggregate)
                loss, parts = total_loss(out, batch.labels, triplet_config,
                                         weights=trainer_config.loss_weights,
                                         include_binary=include_binary)
                if not math.isfinite(parts["total"]):
                    _restore(model, last_good)
                    err = NumericError(
                        f"training diverged at epoch {epoch} (loss {parts['total']}); "
                        f"parameters restored to the last finite epoch")
                    err.model = model  # last-good state, so callers can checkpoint it
                    err.history = history
                    raise err
                t.backward(loss)
            lr = (_cosine_lr(trainer_config.lr, step, total_steps)
                  if trainer_config.cosine_decay else trainer_config.lr)
            if trainer_config.warmup_steps:
                lr *= min(1.0, (step + 1) / trainer_config.warmup_steps)
            optimizer.step(lr)
            step += 1
            for key in sums:
                sums[key] += parts[key]
        history.append({"epoch": epoch} | {
            key: val / trainer_config.steps_per_epoch for key, val in sums.items()})
        last_good = _snapshot(model)
    return model, history


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    """Confusion matrix plus every metric derivable from it.

    Metrics for classes absent from the evaluation set are None; macro
    averages skip them.
    """

    confusion: np.ndarray
    accuracy: float
    sensitivity: float
    specificity: float
    macro_f1: float
    per_class_recall: dict

    @classmethod
    def from_confusion(cls, confusion):
        conf = np.asarray(confusion, dtype=np.int64)
        if conf.shape != (3, 3):
            raise ValueError(f"confusion matrix must be 3x3, got {conf.shape}")
        total = int(conf.sum())
        if total == 0:
            raise ValueError("confusion matrix is empty")
        row_sums = conf.sum(axis=1)
        col_sums = conf.sum(axis=0)
        recalls, f1s = {}, {}
        for i, name in enumerate(LABELS):
            if row_sums[i] == 0:
                warnings.warn(f"no true {name} samples; its recall/F1 are undefined")
                recalls[name] = None
                continue
            recall = conf[i, i] / row_sums[i]
            precision = conf[i, i] / col_sums[i] if col_sums[i] > 0 else 0.0
            recalls[name] = float(recall)
            f1s[name] = float(2 * precision * recall / (precision + recall)) \
                if precision + recall > 0 else 0.0
        defined_spec = [recalls[name] for name in ("neutral", "positive")
                        if recalls[name] is not None]
        return cls(
            confusion=conf,
            accuracy=float(np.trace(conf) / total),
            sensitivity=recalls["negative"],
            specificity=float(np.mean(defined_spec)) if defined_spec else None,
            macro_f1=float(np.mean(list(f1s.values()))) if f1s else None,
            per_class_recall=recalls,
        )

    def to_json_dict(self):
        return {
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "macro_f1": self.macro_f1,
            "per_class_recall": self.per_class_recall,
        }


def confusion_matrix(y_true, y_pred) -> np.ndarray:
    conf = np.zeros((3, 3), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        conf[t, p] += 1
    return conf


def sequence_windows(frames, window: int):
    """Deterministic eval windows: non-overlapping strides plus a tail window."""
    s = len(frames)
    if s <= window:
        return [frames]
    starts = list(range(0, s - window + 1, window))
    if starts[-1] != s - window:
        starts.append(s - window)
    return [frames[st:st + window] for st in starts]


def _sequence_outputs(model: GaitScreenNet, frames, options: PipelineOptions):
    """Mean window logits3 and mean metric feature for one sequence (eval mode)."""
    windows = sequence_windows(frames, options.window)
    bounds = [window_boundaries(w, model.config.bags, options.use_dtw) for w in windows]
    out = model.forward_windows(windows, bounds, options.text_ternary,
                                options.text_binary, train=False,
                                aggregate=options.aggregate)
    return out.logits3.data.mean(axis=0), out.metric_feature.data.mean(axis=0)


def evaluate(model: GaitScreenNet, dataset, options: PipelineOptions) -> EvalReport:
    """Predict every sequence (argmax of window-averaged logits) and score."""
    if not dataset:
        raise ValueError("evaluate: dataset is empty")
    y_true, y_pred = [], []
    for seq in dataset:
        logits, _ = _sequence_outputs(model, seq.frames, options)
        y_true.append(LABEL_INDEX[seq.label])
        y_pred.append(int(np.argmax(logits)))
    return EvalReport.from_confusion(confusion_matrix(y_true, y_pred))


def collect_embeddings(model: GaitScreenNet, dataset, options: PipelineOptions):
    """Per-sequence mean metric features, for external projection plots."""
    feats, labels, ids = [], [], []
    for seq in dataset:
        _, feat = _sequence_outputs(model, seq.frames, options)
        feats.append(feat)
        labels.append(seq.label)
        ids.append(seq.subject_id)
    return np.asarray(feats), labels, ids


def split_holdout(dataset, fraction: float, seed: int):
    """Stratified train/holdout split; every present class keeps >= 1 held sample."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"holdout fraction must be in (0,1), got {fraction}")
    rng = np.random.default_rng(seed)
    held_idx = set()
    for name in LABELS:
        idx = [i for i, s in enumerate(dataset) if s.label == name]
        if not idx:
            continue
        count = max(1, round(len(idx) * fraction))
        held_idx.update(rng.permutation(idx)[:count].tolist())
    train_set = [s for i, s in enumerate(dataset) if i not in held_idx]
    held = [s for i, s in enumerate(dataset) if i in held_idx]
    return train_set, held


# ---------------------------------------------------------------------------
# experiment drivers


def ablate(variant: str, dataset, model_config: ModelConfig,
           sampler_config: SamplerConfig, trainer_config: TrainerConfig,
           text_embeddings) -> EvalReport:
    """Train one variant on a stratified split and score the held-out part."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    trainer_config = replace(trainer_config, variant=variant)
    train_set, held = split_holdout(dataset, trainer_config.holdout_fraction,
                                    trainer_config.seed)
    model, _ = train(train_set, model_config, sampler_config, trainer_config,
                     text_embeddings)
    options = PipelineOptions.for_variant(variant, text_embeddings, model_config,
                                          sampler_config.window)
    return evaluate(model, held, options)


def imbalance_sweep(ratios, model_config: ModelConfig, sampler_config: SamplerConfig,
                    trainer_config: TrainerConfig, text_embeddings,
                    synth_config: DatasetConfig = None, unit: int = 6,
                    eval_unit: int = 4):
    """Train one model per pos:neu:neg ratio (shared seed) and score each.

    Training sets scale the ratio by `unit`; each ratio is scored on its own
    freshly generated set scaling the same ratio by `eval_unit` (disjoint
    generator seed), mirroring a fixed test protocol across runs.
    """
    synth_config = synth_config or DatasetConfig()
    rows = []
    for ratio in ratios:
        pos, neu, neg = (int(r) for r in ratio)
        train_ds = generate_dataset(pos * unit, neu * unit, neg * unit,
                                    synth_config, seed=trainer_config.seed)
        eval_ds = generate_dataset(pos * eval_unit, neu * eval_unit, neg * eval_unit,
                                   synth_config, seed=trainer_config.seed + 7919)
        model, _ = train(train_ds, model_config, sampler_config, trainer_config,
                         text_embeddings)
        options = PipelineOptions.for_variant(
            trainer_config.variant, text_embeddings, model_config, sampler_config.window)
        report = evaluate(model, eval_ds, options)
        rows.append({"ratio": f"{pos}:{neu}:{neg}", "report": report})
    return rows
