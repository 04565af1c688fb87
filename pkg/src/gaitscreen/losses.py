"""Training objectives: 3-class cross-entropy, borderline binary
cross-entropy, all-valid-triplets margin loss, and their unweighted sum.

The two cross-entropies are fused tape ops with log-space-stable forwards and
analytic backwards (softmax minus one-hot, sigmoid minus target). The triplet
term is composed from primitives over the pairwise Euclidean distance matrix;
squared distances are floored at 1e-12 before the square root, which keeps
coincident points finite and blocks their (undefined) gradient.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .datasynth import LABEL_INDEX

_NEUTRAL = LABEL_INDEX["neutral"]
_DIST_FLOOR = 1e-12


@dataclass(frozen=True)
class TripletConfig:
    margin: float = 0.2

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError(f"triplet margin must be > 0, got {self.margin}")


@dataclass
class BatchLabels:
    """Per-sample 3-class index, borderline flag and subject id."""

    class3: np.ndarray
    borderline: np.ndarray
    subject_ids: list

    def __post_init__(self):
        self.class3 = np.asarray(self.class3, dtype=np.int64)
        self.borderline = np.asarray(self.borderline, dtype=bool)
        if not np.array_equal(self.borderline, self.class3 == _NEUTRAL):
            raise ValueError("borderline flags do not match the neutral class labels")

    @classmethod
    def from_class3(cls, class3, subject_ids=None):
        class3 = np.asarray(class3, dtype=np.int64)
        ids = subject_ids if subject_ids is not None else [str(i) for i in range(len(class3))]
        return cls(class3=class3, borderline=class3 == _NEUTRAL, subject_ids=ids)


def cross_entropy(logits: Tensor, class3) -> Tensor:
    """Batch-mean negative log-likelihood under a stable log-softmax."""
    labels = np.asarray(class3, dtype=np.int64)
    n = logits.data.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(n), labels]
    out = Tensor(np.asarray((lse - picked).mean()))

    def backward():
        if logits.requires_grad:
            probs = np.exp(shifted - lse[:, None])
            probs[np.arange(n), labels] -= 1.0
            ag._accum(logits, out.grad * probs / n)

    return ag._trace(out, backward, logits)


def binary_cross_entropy(logit: Tensor, flags) -> Tensor:
    """Batch-mean sigmoid cross-entropy computed in logit space."""
    y = np.asarray(flags, dtype=np.float64).reshape(-1)
    x = logit.data.reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"{x.size} logits vs {y.size} flags")
    per = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    out = Tensor(np.asarray(per.mean()))

    def backward():
        if logit.requires_grad:
            sig = 1.0 / (1.0 + np.exp(-x))
            g = (sig - y) / y.size
            ag._accum(logit, out.grad * g.reshape(logit.data.shape))

    return ag._trace(out, backward, logit)


def _valid_triplets(labels):
    n = len(labels)
    anchors, positives, negatives = [], [], []
    for a in range(n):
        for p in range(n):
            if p == a or labels[p] != labels[a]:
                continue
            for g in range(n):
                if labels[g] != labels[a]:
                    anchors.append(a)
                    positives.append(p)
                    negatives.append(g)
    return np.asarray(anchors), np.asarray(positives), np.asarray(negatives)


def triplet_loss(features: Tensor, class3, config: TripletConfig = TripletConfig()) -> Tensor:
    """Mean hinge over every (anchor, positive, negative) with y_a = y_p != y_n."""
    labels = np.asarray(class3, dtype=np.int64)
    anchors, positives, negatives = _valid_triplets(labels)
    if anchors.size == 0:
        warnings.warn("no valid triplets in batch; triplet loss is 0")
        return Tensor(np.asarray(0.0))
    sq = ag.reduce_sum(ag.mul(features, features), axis=1)
    gram = ag.matmul(features, ag.transpose(features, (1, 0)))
    n = features.data.shape[0]
    d2 = ag.reshape(sq, (n, 1)) + ag.reshape(sq, (1, n)) - ag.scale(gram, 2.0)
    dist = ag.sqrt(ag.clamp_min(d2, _DIST_FLOOR))
    d_ap = ag.take_pairs(dist, anchors, positives)
    d_an = ag.take_pairs(dist, anchors, negatives)
    return ag.reduce_mean(ag.relu(d_ap - d_an + config.margin))


def total_loss(outputs, labels: BatchLabels, config: TripletConfig = TripletConfig(),
               weights=(1.0, 1.0, 1.0), include_binary: bool = True):
    """Weighted sum (default unit weights) plus per-component breakdown."""
    tri = triplet_loss(outputs.metric_feature, labels.class3, config)
    ce = cross_entropy(outputs.logits3, labels.class3)
    parts = {"triplet": tri.item(), "ce": ce.item()}
    total = ag.scale(tri, weights[0]) + ag.scale(ce, weights[1])
    if include_binary:
        bce = binary_cross_entropy(outputs.logits_borderline, labels.borderline)
        parts["binary_ce"] = bce.item()
        total = total + ag.scale(bce, weights[2])
    else:
        parts["binary_ce"] = 0.0
    parts["total"] = total.item()
    return total, parts
