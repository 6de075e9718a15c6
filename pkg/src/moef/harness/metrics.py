"""Ranking and drift metrics."""
from __future__ import annotations

from typing import Optional

import numpy as np

from moef import _kernels
from moef.errors import ContractError, UndefinedMetricError


def auc(labels, scores) -> float:
    """Area under the ROC curve as (wins + ties / 2) / (P * N) over positive/negative pairs."""
    labels = np.asarray(labels).reshape(-1)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if labels.shape != scores.shape:
        raise ContractError(f"{labels.size} labels for {scores.size} scores")
    if not np.isin(labels, (0, 1)).all():
        raise ContractError("labels must be 0 or 1")
    if np.isnan(scores).any():
        raise ContractError("scores contain NaN")
    wins, ties, n_pos, n_neg = _kernels.auc_pair_counts(labels.astype(np.int8), scores)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"AUC needs both classes, got {n_pos} positives and {n_neg} negatives")
    return (wins + 0.5 * ties) / (n_pos * n_neg)


def auc_or_none(labels, scores) -> Optional[float]:
    try:
        return auc(labels, scores)
    except UndefinedMetricError:
        return None


def category_entropy(categories) -> float:
    """Shannon entropy (nats) of the category shares in a click log."""
    categories = np.asarray(categories).reshape(-1)
    if categories.size == 0:
        raise ContractError("category entropy of an empty log")
    _, counts = np.unique(categories, return_counts=True)
    p = counts / counts.sum()
    return float(-np.sum(p * np.log(p)))
