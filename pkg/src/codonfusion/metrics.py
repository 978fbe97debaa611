"""Evaluation metrics: Spearman rank correlation and classification accuracy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["MetricsReport", "spearman", "accuracy", "average_ranks"]


@dataclass
class MetricsReport:
    metric: str
    value: float
    sample_count: int
    split: str

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "value": self.value,
            "sample_count": self.sample_count,
            "split": self.split,
        }


def average_ranks(values) -> np.ndarray:
    """Fractional ranks starting at 1; tied values share their mean rank."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(preds, targets) -> float:
    """Pearson correlation of average ranks; ties receive their mean rank."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape or preds.ndim != 1:
        raise ValueError(f"spearman needs two equal-length vectors, got {preds.shape} and {targets.shape}")
    if preds.size < 2:
        raise ValueError("spearman needs at least 2 samples")
    rp = average_ranks(preds)
    rt = average_ranks(targets)
    rp_c = rp - rp.mean()
    rt_c = rt - rt.mean()
    denom = np.sqrt((rp_c * rp_c).sum() * (rt_c * rt_c).sum())
    if denom == 0.0:
        raise ValueError("undefined correlation: zero rank variance")
    return float((rp_c * rt_c).sum() / denom)


def accuracy(pred_classes, target_classes) -> float:
    pred_classes = np.asarray(pred_classes)
    target_classes = np.asarray(target_classes)
    if pred_classes.shape != target_classes.shape or pred_classes.ndim != 1:
        raise ValueError(
            f"accuracy needs two equal-length vectors, got {pred_classes.shape} and {target_classes.shape}"
        )
    if pred_classes.size == 0:
        raise ValueError("accuracy needs at least 1 sample")
    return float(np.mean(pred_classes == target_classes))
