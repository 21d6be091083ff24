# classifier/dtw.py
"""
1-nearest-neighbour classification under dynamic time warping.

Local cost is the Euclidean distance between steps; the step pattern is
symmetric (match, insertion, deletion all cost the local distance once) and
there is no warping band.
"""
import numpy as np
import structlog
from scipy.spatial.distance import cdist

from core.exceptions import DimensionError, ValidationError
from pipeline.datasets import Dataset

logger = structlog.get_logger("cropwatch.evaluation")


def _as_steps(sequence):
    array = getattr(sequence, 'steps', sequence)
    array = np.asarray(array, dtype=np.float64)
    if array.ndim == 1:
        array = array[:, None]
    return array


def _accumulate(local):
    """Cumulative DTW cost for local costs shaped T1 x T2 (x N, batched over a trailing axis)."""
    rows, cols = local.shape[:2]
    acc = np.full((rows + 1, cols + 1) + local.shape[2:], np.inf)
    acc[0, 0] = 0.0
    for i in range(1, rows + 1):
        for j in range(1, cols + 1):
            best = np.minimum(np.minimum(acc[i - 1, j], acc[i, j - 1]), acc[i - 1, j - 1])
            acc[i, j] = local[i - 1, j - 1] + best
    return acc[rows, cols]


def dtw_distance(a, b):
    a, b = _as_steps(a), _as_steps(b)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"DTW needs equal step dimensions, got {a.shape[1]} and {b.shape[1]}")
    if a.shape[0] < 1 or b.shape[0] < 1:
        raise ValidationError("DTW needs non-empty sequences")
    return float(_accumulate(cdist(a, b)))


def dtw_to_references(query, references):
    """Distances from one T1 x D query to every reference in an N x T2 x D stack."""
    query = _as_steps(query)
    references = np.asarray(references, dtype=np.float64)
    count, length, dim = references.shape
    if dim != query.shape[1]:
        raise DimensionError(f"DTW needs equal step dimensions, got {query.shape[1]} and {dim}")
    local = cdist(query, references.reshape(count * length, dim)).reshape(query.shape[0], count, length)
    return _accumulate(np.ascontiguousarray(np.transpose(local, (0, 2, 1))))


def _nearest(distances, pixel_ids):
    """Index of the smallest distance; ties go to the lowest pixel_id."""
    best = distances.min()
    tied = np.flatnonzero(distances == best)
    return min(tied, key=lambda index: pixel_ids[index])


def knn_dtw_classify(train_set: Dataset, query):
    if len(train_set) == 0:
        raise ValidationError("1-NN needs a non-empty training set")
    distances = dtw_to_references(query, train_set.features)
    return int(train_set.labels[_nearest(distances, train_set.pixel_ids)])


def knn_dtw_predict(train_set: Dataset, queries):
    """
    (labels, class scores) for every query. Scores are a softmax over the
    negated nearest distance per class, so they rank like the 1-NN margin.
    """
    if len(train_set) == 0:
        raise ValidationError("1-NN needs a non-empty training set")
    features = queries.features if isinstance(queries, Dataset) else np.asarray(queries, dtype=np.float64)
    classes = len(train_set.class_names)
    labels = np.zeros(features.shape[0], dtype=np.int64)
    scores = np.zeros((features.shape[0], classes))
    for row, query in enumerate(features):
        distances = dtw_to_references(query, train_set.features)
        labels[row] = train_set.labels[_nearest(distances, train_set.pixel_ids)]
        per_class = np.array([
            distances[train_set.labels == c].min() if np.any(train_set.labels == c) else np.inf
            for c in range(classes)
        ])
        logits = -(per_class - per_class.min())
        weights = np.exp(logits)
        scores[row] = weights / weights.sum()
    logger.info(f"Classified {features.shape[0]} queries against {len(train_set)} references with 1-NN DTW")
    return labels, scores
