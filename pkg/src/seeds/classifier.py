"""Softmax classifier heads, head merging, and seen/unseen evaluation.

Scores here are per-feature top-1 classification accuracies (in percent),
not detection metrics; every emitted report says so in its header.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FeatureBank, FeatureDataset
from .nn import Param
from .optim import Adam
from .rng import RngStream

REPORT_HEADER = ("scores are per-feature top-1 classification accuracies (%), "
                 "not detection mAP/Recall")

LOG_CLAMP = 1e-12


@dataclass
class ClassifierHead:
    """Linear softmax head over a fixed, ordered class list."""

    class_ids: tuple[str, ...]
    weights: np.ndarray  # (C, d)
    bias: np.ndarray  # (C,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.shape[0] != len(self.class_ids):
            raise ValueError(f"{self.weights.shape[0]} weight rows for {len(self.class_ids)} classes")
        if self.bias.shape != (len(self.class_ids),):
            raise ValueError(f"bias shape {self.bias.shape} does not match class count")

    @property
    def dim(self) -> int:
        return int(self.weights.shape[1])

    def logits(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1] != self.dim:
            raise ValueError(f"features have width {x.shape[1]}, head expects {self.dim}")
        return x @ self.weights.T + self.bias

    def predict(self, x: np.ndarray) -> list[str]:
        return [self.class_ids[i] for i in np.argmax(self.logits(x), axis=1)]


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs: np.ndarray, label_idx: np.ndarray) -> float:
    picked = probs[np.arange(len(label_idx)), label_idx]
    return float(-np.mean(np.log(np.maximum(picked, LOG_CLAMP))))


def label_indices(labels, class_ids) -> np.ndarray:
    index = {cid: i for i, cid in enumerate(class_ids)}
    try:
        return np.array([index[lab] for lab in labels], dtype=np.intp)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]!r} is not in the head's class set") from None


def train_softmax_head(features: np.ndarray, labels, class_ids, lr: float = 0.05,
                       max_epochs: int = 200, tol: float = 1e-5, seed: int = 0) -> ClassifierHead:
    """Full-batch Adam on cross-entropy until max_epochs or loss delta < tol."""
    features = np.asarray(features, dtype=np.float64)
    class_ids = tuple(class_ids)
    if len(class_ids) < 2:
        raise ValueError(f"need at least 2 classes to train a head, got {len(class_ids)}")
    y = label_indices(labels, class_ids)
    n, d = features.shape
    rng = RngStream(seed)
    w = Param("head.w", rng.normal((len(class_ids), d)) * 0.01)
    b = Param("head.b", np.zeros(len(class_ids)))
    opt = Adam([w, b], lr=lr, weight_decay=0.0)
    onehot = np.zeros((n, len(class_ids)))
    onehot[np.arange(n), y] = 1.0

    prev = np.inf
    for _ in range(max_epochs):
        probs = softmax(features @ w.value.T + b.value)
        loss = cross_entropy(probs, y)
        dlogits = (probs - onehot) / n
        w.grad[...] = dlogits.T @ features
        b.grad[...] = dlogits.sum(axis=0)
        opt.step()
        if abs(prev - loss) < tol:
            break
        prev = loss
    return ClassifierHead(class_ids, w.value, b.value)


def train_seen_classifier(seen_train: FeatureDataset, lr: float = 0.05,
                          max_epochs: int = 200, seed: int = 0) -> ClassifierHead:
    """The frozen seen-class head: trained on real seen features, reused for alignment."""
    if seen_train.split != "seen-train":
        raise ValueError(f"expected the seen-train split, got {seen_train.split!r}")
    class_ids = seen_train.class_ids
    if len(class_ids) < 2:
        raise ValueError("seen classifier needs at least two seen classes")
    return train_softmax_head(seen_train.features, seen_train.labels, class_ids,
                              lr=lr, max_epochs=max_epochs, seed=seed)


def train_unseen_classifier(bank: FeatureBank, lr: float = 0.05, max_epochs: int = 200,
                            seed: int = 0) -> ClassifierHead:
    """Unseen head trained on synthesized features only; requires exact class balance."""
    counts = bank.per_class_counts
    if len(counts) < 2:
        raise ValueError("unseen classifier needs at least two unseen classes")
    if len(set(counts.values())) != 1:
        raise ValueError(f"unseen classes are imbalanced: {counts}")
    feats, labels = bank.flatten()
    return train_softmax_head(feats, labels, bank.class_ids, lr=lr, max_epochs=max_epochs, seed=seed)


def merge_heads(seen_head: ClassifierHead, unseen_head: ClassifierHead) -> ClassifierHead:
    """Stack the two heads; seen rows are preserved bit-exactly."""
    overlap = set(seen_head.class_ids) & set(unseen_head.class_ids)
    if overlap:
        raise ValueError(f"seen and unseen heads share classes: {sorted(overlap)}")
    if seen_head.dim != unseen_head.dim:
        raise ValueError(f"head widths differ: seen {seen_head.dim} vs unseen {unseen_head.dim}")
    return ClassifierHead(
        seen_head.class_ids + unseen_head.class_ids,
        np.vstack([seen_head.weights, unseen_head.weights]),
        np.concatenate([seen_head.bias, unseen_head.bias]),
    )


def harmonic_mean(seen_score: float, unseen_score: float) -> float:
    """2su/(s+u); defined as 0 when both scores are 0."""
    if seen_score < 0 or unseen_score < 0:
        raise ValueError(f"scores must be non-negative, got ({seen_score}, {unseen_score})")
    total = seen_score + unseen_score
    if total == 0:
        return 0.0
    return 2.0 * seen_score * unseen_score / total


def accuracy(head: ClassifierHead, dataset: FeatureDataset) -> float:
    """Top-1 accuracy in percent against the head's full label space."""
    if len(dataset) == 0:
        return 0.0
    predicted = head.predict(dataset.features)
    hits = sum(1 for p, t in zip(predicted, dataset.labels) if p == t)
    return 100.0 * hits / len(dataset)


@dataclass
class EvalReport:
    """Zero-shot and generalized evaluation scores, all in [0, 100] percent."""

    zsd_unseen: float
    gzsd_seen: float
    gzsd_unseen: float
    hm: float

    FIELDS = ("zsd_unseen", "gzsd_seen", "gzsd_unseen", "hm")

    def to_text(self) -> str:
        lines = [f"# {REPORT_HEADER}"]
        lines += [f"{name}={getattr(self, name):.6f}" for name in self.FIELDS]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        header = ",".join(self.FIELDS)
        row = ",".join(f"{getattr(self, name):.6f}" for name in self.FIELDS)
        return f"# {REPORT_HEADER}\n{header}\n{row}\n"


def merge_and_evaluate(seen_head: ClassifierHead, unseen_head: ClassifierHead | None,
                       seen_test: FeatureDataset, unseen_test: FeatureDataset) -> EvalReport:
    """Score the merged head: ZSD against unseen labels only, GZSD against all labels."""
    if unseen_head is None:
        return EvalReport(0.0, accuracy(seen_head, seen_test), 0.0, 0.0)
    merged = merge_heads(seen_head, unseen_head)
    zsd = accuracy(unseen_head, unseen_test)
    gz_seen = accuracy(merged, seen_test)
    gz_unseen = accuracy(merged, unseen_test)
    return EvalReport(zsd, gz_seen, gz_unseen, harmonic_mean(gz_seen, gz_unseen))
