"""Segmentation and routing metrics."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import BadShape, LabelOutOfRange

HIST_BINS = 20


def confusion_matrix(pred: Sequence[np.ndarray], gt: Sequence[np.ndarray], K: int) -> np.ndarray:
    """Global K x K confusion matrix; rows are ground truth, columns predictions."""
    cm = np.zeros((K, K), dtype=np.int64)
    if len(pred) != len(gt):
        raise BadShape(f"{len(pred)} predictions for {len(gt)} ground-truth maps")
    for p, g in zip(pred, gt):
        p = np.asarray(p, dtype=np.int64)
        g = np.asarray(g, dtype=np.int64)
        if p.shape != g.shape:
            raise BadShape(f"prediction shape {p.shape} != ground truth shape {g.shape}")
        for a in (p, g):
            if a.size and (a.min() < 0 or a.max() >= K):
                raise LabelOutOfRange(f"labels must lie in [0, {K})")
        cm += np.bincount(g.ravel() * K + p.ravel(), minlength=K * K).reshape(K, K)
    return cm


def miou(pred: Sequence[np.ndarray], gt: Sequence[np.ndarray], K: int) -> float:
    """Mean IoU over classes that occur in the ground truth or the predictions."""
    cm = confusion_matrix(pred, gt, K)
    inter = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    present = union > 0
    if not present.any():
        return 0.0
    return float(np.mean(inter[present] / union[present]))


def factor_histograms(lambdas: np.ndarray, bins: int = HIST_BINS) -> np.ndarray:
    """Counts of each factor index over ``bins`` equal-width bins on [0, 1].

    ``lambdas`` is (n_samples, n_domains); the result is (n_domains, bins).
    A factor of exactly 1 lands in the last bin.
    """
    lambdas = np.atleast_2d(np.asarray(lambdas, dtype=np.float64))
    idx = np.clip(np.floor(lambdas * bins).astype(np.int64), 0, bins - 1)
    out = np.zeros((lambdas.shape[1], bins), dtype=np.int64)
    for j in range(lambdas.shape[1]):
        out[j] = np.bincount(idx[:, j], minlength=bins)
    return out


def histogram_entropy(hist: np.ndarray) -> float:
    """Shannon entropy (nats) of the pooled bin proportions."""
    counts = np.asarray(hist, dtype=np.float64).sum(axis=0) if np.ndim(hist) == 2 else np.asarray(hist, float)
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())
