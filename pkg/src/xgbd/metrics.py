"""Detection metrics: accuracy, rank AUC, isolation precision."""

from __future__ import annotations

import numpy as np


def _as_bool(truth) -> np.ndarray:
    return np.asarray(truth, dtype=bool)


def detection_accuracy(flags, truth) -> float:
    """Fraction of samples whose flag matches the ground truth: (TP + TN) / n."""
    flags = _as_bool(flags)
    truth = _as_bool(truth)
    if flags.shape != truth.shape:
        raise ValueError(f"length mismatch: {flags.shape} vs {truth.shape}")
    if flags.size == 0:
        raise ValueError("no samples")
    return float(np.mean(flags == truth))


def roc_auc(scores, truth) -> float:
    """Probability a random positive sample outscores a random negative one.

    Mann-Whitney formulation with average ranks, so ties count one half.
    Requires both classes to be present.
    """
    scores = np.asarray(scores, dtype=float)
    truth = _as_bool(truth)
    if scores.shape != truth.shape:
        raise ValueError(f"length mismatch: {scores.shape} vs {truth.shape}")
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both a positive and a negative sample")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average of ranks i+1 .. j+1
        i = j + 1
    rank_sum_pos = float(ranks[truth].sum())
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def isolation_precision(flags, truth) -> float | None:
    """TP / (TP + FP) among flagged samples; None when nothing was flagged."""
    flags = _as_bool(flags)
    truth = _as_bool(truth)
    if flags.shape != truth.shape:
        raise ValueError(f"length mismatch: {flags.shape} vs {truth.shape}")
    n_flagged = int(flags.sum())
    if n_flagged == 0:
        return None
    return float(np.sum(flags & truth) / n_flagged)
