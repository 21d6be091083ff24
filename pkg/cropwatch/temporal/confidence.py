# temporal/confidence.py
"""
Confidence progression: how sure the trained model is about each class
given only the data seen so far.

Row t of a curve classifies the first t steps; attention is re-normalised
over that prefix. The LSTM is causal, so one encoding pass serves every
prefix.
"""
from dataclasses import dataclass

import numpy as np
import pandas as pd
import structlog

from classifier.attention import classify
from classifier.bundle import ModelBundle
from classifier.training import INFERENCE_CHUNK, as_features, hidden_states, pool, require_trained
from core.exceptions import DimensionError, ValidationError
from pipeline.datasets import Dataset
from pipeline.sequences import WindowedSequence
from tensors.tensor import no_grad, take

logger = structlog.get_logger("cropwatch.evaluation")

DEFAULT_THRESHOLD = 0.8
DEFAULT_PATIENCE = 2


@dataclass(frozen=True)
class ConfidenceCurve:
    per_step: np.ndarray
    class_names: tuple

    def __post_init__(self):
        per_step = np.asarray(self.per_step, dtype=np.float64)
        if per_step.ndim != 2 or per_step.shape[1] != len(self.class_names):
            raise DimensionError(
                f"confidence curve must be T x {len(self.class_names)}, got {list(per_step.shape)}"
            )
        if np.any(per_step < 0) or not np.allclose(per_step.sum(axis=1), 1.0, atol=1e-9):
            raise ValidationError("every confidence row must be a probability distribution")
        object.__setattr__(self, 'per_step', per_step)
        object.__setattr__(self, 'class_names', tuple(self.class_names))

    def __len__(self):
        return self.per_step.shape[0]

    def class_index(self, class_):
        return class_index(self.class_names, class_)

    def of_class(self, class_):
        return self.per_step[:, self.class_index(class_)]


@dataclass(frozen=True)
class CohortCurve:
    """Per-step mean and population std of the true-class confidence."""
    class_name: str
    mean: np.ndarray
    std: np.ndarray
    size: int


def class_index(class_names, class_):
    if isinstance(class_, (int, np.integer)) and not isinstance(class_, bool):
        if 0 <= class_ < len(class_names):
            return int(class_)
    elif class_ in class_names:
        return class_names.index(class_)
    raise ValidationError(f"unknown class {class_!r}, expected one of {list(class_names)}")


def prefix_confidences(model: ModelBundle, hiddens):
    """(..., T, C) class distributions from hidden states (..., T, H)."""
    length = hiddens.shape[-2]
    rows = []
    for t in range(1, length + 1):
        prefix = hiddens if t == length else take(hiddens, (Ellipsis, slice(0, t), slice(None)))
        context, _ = pool(model, prefix)
        rows.append(classify(context, model.head).data)
    return np.stack(rows, axis=-2)


def confidence_progression(model: ModelBundle, seq) -> ConfidenceCurve:
    require_trained(model)
    steps = seq.steps if isinstance(seq, WindowedSequence) else np.asarray(seq, dtype=np.float64)
    with no_grad():
        return ConfidenceCurve(prefix_confidences(model, hidden_states(model, steps)), model.class_names)


def confidence_curves(model: ModelBundle, data):
    """N x T x C prefix confidences for every pixel of a Dataset (or N x T x D array)."""
    require_trained(model)
    features = as_features(data)
    chunks = []
    with no_grad():
        for start in range(0, features.shape[0], INFERENCE_CHUNK):
            chunks.append(prefix_confidences(model, hidden_states(model, features[start:start + INFERENCE_CHUNK])))
    if not chunks:
        return np.zeros((0,) + features.shape[1:2] + (model.num_classes,))
    return np.concatenate(chunks, axis=0)


def earliest_detection(curve: ConfidenceCurve, class_, threshold=DEFAULT_THRESHOLD, patience=DEFAULT_PATIENCE):
    """
    First step (1-based) from which ``class_`` holds at least ``threshold``
    confidence for ``patience`` consecutive steps; None if it never does.
    """
    if not 0.0 < threshold < 1.0:
        raise ValidationError(f"threshold must lie in (0, 1), got {threshold}")
    if patience < 1:
        raise ValidationError(f"patience must be at least 1, got {patience}")
    return _first_run(curve.of_class(class_) >= threshold, patience)


def _first_run(hits, patience):
    run = 0
    for index, hit in enumerate(hits):
        run = run + 1 if hit else 0
        if run >= patience:
            return index - patience + 2
    return None


def cohort_statistics(curves, class_) -> CohortCurve:
    """Mean/std of one class's confidence over a list of curves (or an N x T x C array)."""
    if isinstance(curves, np.ndarray):
        stacked, class_names = curves, None
    else:
        curves = list(curves)
        if not curves:
            raise ValidationError("cohort is empty")
        stacked = np.stack([curve.per_step for curve in curves])
        class_names = curves[0].class_names
    if stacked.shape[0] == 0:
        raise ValidationError("cohort is empty")
    if class_names is None:
        index, name = int(class_), str(class_)
    else:
        index = class_index(class_names, class_)
        name = class_names[index]
    values = stacked[:, :, index]
    return CohortCurve(name, values.mean(axis=0), values.std(axis=0), values.shape[0])


def cohort_confidence(model: ModelBundle, dataset: Dataset, class_) -> CohortCurve:
    """Cohort curve of the pixels labeled ``class_``, tracking their own class."""
    label = class_index(dataset.class_names, class_)
    cohort = dataset.of_class(label)
    if len(cohort) == 0:
        raise ValidationError(f"no pixels of class '{dataset.class_names[label]}' in the dataset")
    curve = cohort_statistics(confidence_curves(model, cohort), label)
    return CohortCurve(dataset.class_names[label], curve.mean, curve.std, curve.size)


def pixel_detections(model: ModelBundle, dataset: Dataset, threshold=DEFAULT_THRESHOLD, patience=DEFAULT_PATIENCE):
    """One row per pixel: its true class and the step its class is first detected (empty if never)."""
    if not 0.0 < threshold < 1.0:
        raise ValidationError(f"threshold must lie in (0, 1), got {threshold}")
    if patience < 1:
        raise ValidationError(f"patience must be at least 1, got {patience}")
    curves = confidence_curves(model, dataset)
    rows = []
    for pixel, curve in zip(dataset.pixels, curves):
        step = _first_run(curve[:, pixel.label] >= threshold, patience)
        rows.append({'pixel_id': pixel.pixel_id, 'class': dataset.class_names[pixel.label], 'earliest_step': step})
    frame = pd.DataFrame(rows, columns=['pixel_id', 'class', 'earliest_step'])
    frame['earliest_step'] = frame['earliest_step'].astype('Int64')
    return frame


def detection_summary(model: ModelBundle, dataset: Dataset, threshold=DEFAULT_THRESHOLD, patience=DEFAULT_PATIENCE):
    """Per class: cohort size, pixels detected, mean earliest step among those detected."""
    detections = pixel_detections(model, dataset, threshold, patience)
    rows = []
    for name in dataset.class_names:
        cohort = detections[detections['class'] == name]
        found = cohort['earliest_step'].dropna()
        rows.append({
            'class': name,
            'pixels': int(len(cohort)),
            'detected': int(len(found)),
            'mean_step': round(float(found.mean()), 4) if len(found) else None,
        })
    logger.info("Early detection summary", threshold=threshold, patience=patience, classes=len(rows))
    return pd.DataFrame(rows, columns=['class', 'pixels', 'detected', 'mean_step'])


def confidence_frame(cohorts) -> pd.DataFrame:
    """Long table (step, class, mean, std) with 1-based steps."""
    rows = [
        {'step': step + 1, 'class': cohort.class_name, 'mean': float(mean), 'std': float(std)}
        for cohort in cohorts
        for step, (mean, std) in enumerate(zip(cohort.mean, cohort.std))
    ]
    return pd.DataFrame(rows, columns=['step', 'class', 'mean', 'std'])
