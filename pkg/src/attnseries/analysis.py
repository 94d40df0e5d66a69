"""Evaluation metrics, input-gradient attribution, attention summaries and embedding PCA."""

from __future__ import annotations

import csv
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tape, Tensor, backward, softmax
from .errors import ConfigurationError, ContractError, DimensionError, UnsupportedOperation
from .models import Model, forward, has_attention


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted class

    @classmethod
    def from_predictions(cls, preds, labels, num_classes=None):
        preds = np.asarray(preds, dtype=np.int64).ravel()
        labels = np.asarray(labels, dtype=np.int64).ravel()
        if preds.size == 0:
            raise ContractError("metrics need at least one prediction")
        if preds.shape != labels.shape:
            raise DimensionError(f"{preds.size} predictions for {labels.size} labels")
        if num_classes is None:
            num_classes = int(max(preds.max(), labels.max())) + 1
        for name, arr in (("labels", labels), ("predictions", preds)):
            if arr.min() < 0 or arr.max() >= num_classes:
                raise ConfigurationError(f"{name} must lie in [0, {num_classes})")
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(counts, (labels, preds), 1)
        return cls(counts)

    @property
    def total(self):
        return int(self.counts.sum())


@dataclass
class MetricsReport:
    accuracy: float
    kappa: float
    f1: np.ndarray
    macro_f1: float
    confusion: ConfusionMatrix

    def as_dict(self):
        return {"accuracy": self.accuracy, "kappa": self.kappa, "macro_f1": self.macro_f1,
                "f1": [float(v) for v in self.f1]}


def cohen_kappa(counts) -> float:
    """(p_o - p_e) / (1 - p_e), evaluated on integer counts so p_o = p_e gives exactly 0.

    A degenerate table with p_e = 1 (one class everywhere) carries no information
    beyond chance and scores 0.
    """
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    trace = int(np.trace(counts))
    chance = sum(int(r) * int(c) for r, c in zip(counts.sum(axis=1), counts.sum(axis=0)))
    den = total * total - chance
    if den == 0:
        return 0.0
    return (total * trace - chance) / den


def metrics(preds, labels, num_classes: Optional[int] = None) -> MetricsReport:
    cm = ConfusionMatrix.from_predictions(preds, labels, num_classes)
    c = cm.counts
    tp = np.diag(c).astype(float)
    pred_tot = c.sum(axis=0).astype(float)
    true_tot = c.sum(axis=1).astype(float)
    # f1 = 2PR/(P+R) = 2 tp / (predicted + true); zero when the class never occurs
    denom = pred_tot + true_tot
    f1 = np.divide(2.0 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return MetricsReport(
        accuracy=float(np.trace(c)) / cm.total,
        kappa=cohen_kappa(c),
        f1=f1,
        macro_f1=float(f1.mean()),
        confusion=cm,
    )


def predict_logits(model: Model, x, batch_size: int = 256) -> np.ndarray:
    """Eval-mode logits for ``x`` [N, T, D] without recording a tape."""
    x = np.asarray(x, dtype=float)
    out = [forward(model, x[i:i + batch_size], "eval").logits.data
           for i in range(0, len(x), batch_size)]
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.spec.num_classes))


# ---------------------------------------------------------------- attribution

@dataclass
class AttributionMap:
    gradients: np.ndarray  # same shape as the input series
    predicted: np.ndarray
    score: np.ndarray


@contextmanager
def frozen(model: Model):
    """Temporarily stop parameters from collecting gradients."""
    params = model.parameters()
    for p in params:
        p.requires_grad = False
    try:
        yield model
    finally:
        for p in params:
            p.requires_grad = True


def input_gradients(model: Model, x) -> AttributionMap:
    """Gradient of the highest softmax probability y* with respect to the input.

    Accepts one series [T, D] or a batch [N, T, D]; samples are independent in
    eval mode, so summing y* over the batch yields per-sample gradients.
    """
    xa = np.array(x, dtype=float)
    xt = Tensor(xa, requires_grad=True)
    with frozen(model), Tape() as tape:
        probs = softmax(forward(model, xt, "eval").logits, axis=-1)
        winner = np.argmax(probs.data, axis=-1)
        mask = np.zeros(probs.shape)
        if probs.ndim == 1:
            mask[winner] = 1.0
        else:
            mask[np.arange(len(winner)), winner] = 1.0
        score = (probs * Tensor(mask)).sum()
        backward(score, tape)
    return AttributionMap(xt.grad, winner, np.max(probs.data, axis=-1))


# ----------------------------------------------------------------- attention

@dataclass
class AttentionSummary:
    matrices: list  # one [N, T, T] (or [N, T] for soft attention) array per (layer, head)
    keys: list  # (layer, head) per entry
    mean_scores: list  # alpha-bar per entry, [N, T]


def attention_summary(model: Model, x) -> AttentionSummary:
    if not has_attention(model):
        raise UnsupportedOperation("architecture has no attention")
    out = forward(model, np.asarray(x, dtype=float), "eval")
    if model.spec.architecture == "softattn_gru":
        alpha = out.attention[0]
        return AttentionSummary([alpha], [(1, 1)], [alpha])
    heads = model.spec.num_heads
    keys = [(i // heads + 1, i % heads + 1) for i in range(len(out.attention))]
    # alpha-bar_t: mean over query rows of column t
    means = [a.mean(axis=-2) for a in out.attention]
    return AttentionSummary(list(out.attention), keys, means)


# ---------------------------------------------------------------- embeddings

@dataclass
class EmbeddingSet:
    features: np.ndarray  # [n, D_h]
    labels: np.ndarray
    layer_index: int


def extract_embeddings(model: Model, x, labels, layer_index: int, batch_size: int = 256) -> EmbeddingSet:
    """Hidden features after block ``layer_index``, averaged over time."""
    names = model.hidden_names
    if not 0 <= layer_index < len(names):
        raise ConfigurationError(f"layer_index {layer_index} outside [0, {len(names)}) for {names}")
    x = np.asarray(x, dtype=float)
    chunks = []
    for i in range(0, len(x), batch_size):
        h = forward(model, x[i:i + batch_size], "eval").hidden[layer_index]
        chunks.append(h.mean(axis=-2))
    feats = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, 0))
    return EmbeddingSet(feats, np.asarray(labels), layer_index)


def jacobi_eigh(a, tol: float = 1e-13, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues descending, eigenvectors as columns).
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise DimensionError(f"expected a square matrix, got {a.shape}")
    v = np.eye(n)
    scale = max(np.abs(a).max(), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], v[:, order]


@dataclass
class PCAResult:
    points: np.ndarray
    components: np.ndarray  # [k, D], orthonormal rows
    explained_ratio: np.ndarray
    eigenvalues: np.ndarray
    mean: np.ndarray

    def transform(self, feats):
        return (np.asarray(feats, dtype=float) - self.mean) @ self.components.T


def pca(embeddings, k: int = 2) -> PCAResult:
    feats = embeddings.features if isinstance(embeddings, EmbeddingSet) else np.asarray(embeddings, float)
    n, d = feats.shape
    if n < 2:
        raise DimensionError("PCA needs at least two points")
    if not 1 <= k <= d:
        raise ConfigurationError(f"k={k} must lie in [1, {d}]")
    mean = feats.mean(axis=0)
    centred = feats - mean
    cov = centred.T @ centred / (n - 1)
    vals, vecs = jacobi_eigh(cov)
    vals = np.maximum(vals, 0.0)
    comps = vecs[:, :k].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    total = vals.sum()
    ratio = vals[:k] / total if total > 0 else np.zeros(k)
    return PCAResult(centred @ comps.T, comps, ratio, vals, mean)


def nearest_neighbor_accuracy(ref_points, ref_labels, points, labels) -> float:
    d = ((points[:, None, :] - ref_points[None, :, :]) ** 2).sum(axis=-1)
    pred = np.asarray(ref_labels)[np.argmin(d, axis=1)]
    return float(np.mean(pred == np.asarray(labels)))


def leave_one_out_accuracy(points, labels) -> float:
    """1-NN accuracy where each point is classified by the others."""
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        raise DimensionError("leave-one-out needs at least two points")
    d = ((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=-1)
    np.fill_diagonal(d, np.inf)
    labels = np.asarray(labels)
    return float(np.mean(labels[np.argmin(d, axis=1)] == labels))


# -------------------------------------------------------------------- files

def write_confusion_csv(cm: ConfusionMatrix, path, class_names: Optional[Sequence[str]] = None):
    names = list(class_names) if class_names else [str(i) for i in range(len(cm.counts))]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + names)
        for name, row in zip(names, cm.counts):
            w.writerow([name] + [int(v) for v in row])


def write_attribution_csv(att: AttributionMap, path, sample_ids=None, labels=None):
    """Long format: one row per (sample, time step, band)."""
    grads = att.gradients if att.gradients.ndim == 3 else att.gradients[None]
    pred = np.atleast_1d(att.predicted)
    ids = range(len(grads)) if sample_ids is None else sample_ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "label", "predicted", "t_index", "band", "gradient"])
        for k, (sid, g) in enumerate(zip(ids, grads)):
            lab = "" if labels is None else int(labels[k])
            for t in range(g.shape[0]):
                for b in range(g.shape[1]):
                    w.writerow([sid, lab, int(pred[k]), t, b + 1, repr(float(g[t, b]))])


def write_attention_csv(summary: AttentionSummary, path, sample_ids=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "layer", "head", "t_index", "mean_score"])
        for (layer, head), scores in zip(summary.keys, summary.mean_scores):
            scores = np.atleast_2d(scores)
            ids = range(len(scores)) if sample_ids is None else sample_ids
            for sid, row in zip(ids, scores):
                for t, v in enumerate(row):
                    w.writerow([sid, layer, head, t, repr(float(v))])


def write_embeddings_csv(points, labels, path, layer_index: int, sample_ids=None):
    points = np.asarray(points)
    ids = range(len(points)) if sample_ids is None else sample_ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "class", "layer"] + [f"pc{i + 1}" for i in range(points.shape[1])])
        for sid, lab, row in zip(ids, labels, points):
            w.writerow([sid, int(lab), layer_index] + [repr(float(v)) for v in row])
