# evaluation/metrics.py
import numpy as np
from scipy.stats import rankdata

from core.exceptions import DimensionError, ValidationError


def auc(scores, positives):
    """
    Rank-sum AUC: the chance a random positive scores above a random
    negative, ties counting one half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives).astype(bool)
    if scores.shape != positives.shape or scores.ndim != 1:
        raise DimensionError(f"{scores.size} scores for {positives.size} labels")
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC needs both positive and negative samples")
    ranks = rankdata(scores)
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def macro_auc(probabilities, labels):
    """One-vs-rest AUC per class present in ``labels``, averaged."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    present = [c for c in range(probabilities.shape[1]) if 0 < np.sum(labels == c) < labels.size]
    if not present:
        raise ValidationError("macro AUC needs at least two classes in the labels")
    return float(np.mean([auc(probabilities[:, c], labels == c) for c in present]))


def classification_auc(probabilities, labels, positive_class=0):
    """Binary AUC on the positive-class column; macro one-vs-rest beyond two classes."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if probabilities.shape[1] > 2:
        return macro_auc(probabilities, labels)
    return auc(probabilities[:, positive_class], np.asarray(labels) == positive_class)


def f1(predictions, labels, positive_class=0):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise DimensionError(f"{predictions.size} predictions for {labels.size} labels")
    if predictions.size == 0:
        raise ValidationError("F1 of an empty set")
    predicted = predictions == positive_class
    actual = labels == positive_class
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)
