# pipeline/datasets.py
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import pandas as pd
import structlog

from core.artifacts import atomic_write_text
from core.digests import fnv1a_64
from core.exceptions import ValidationError
from core.rng import make_rng

from .sequences import SpectralSequence, WindowedSequence, window_sequence

logger = structlog.get_logger("cropwatch.data")

CSV_COLUMNS = ['pixel_id', 'label', 'composite_index', 'band_index', 'value']


@dataclass(frozen=True, eq=False)
class DatasetPixel:
    pixel_id: str
    label: int
    windowed: WindowedSequence
    raw: SpectralSequence = None


@dataclass(frozen=True, eq=False)
class Dataset:
    pixels: tuple
    class_names: tuple
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, 'pixels', tuple(self.pixels))
        object.__setattr__(self, 'class_names', tuple(self.class_names))
        if not self.class_names:
            raise ValidationError("dataset needs at least one class name")
        shapes = {p.windowed.steps.shape for p in self.pixels}
        if len(shapes) > 1:
            raise ValidationError(f"pixels disagree on (T, D): {sorted(shapes)}")
        seen = set()
        for pixel in self.pixels:
            if not 0 <= pixel.label < len(self.class_names):
                raise ValidationError(f"pixel {pixel.pixel_id}: label {pixel.label} outside class_names")
            if pixel.pixel_id in seen:
                raise ValidationError(f"duplicate pixel_id {pixel.pixel_id}")
            seen.add(pixel.pixel_id)

    def __len__(self):
        return len(self.pixels)

    @classmethod
    def from_records(cls, records, class_names, window_composites=4, stride_composites=1, provenance=None):
        """Window raw records (anything with pixel_id, class_label, sequence)."""
        pixels = [
            DatasetPixel(
                pixel_id=record.pixel_id,
                label=record.class_label,
                windowed=window_sequence(record.sequence, window_composites, stride_composites),
                raw=record.sequence,
            )
            for record in records
        ]
        return cls(pixels, class_names, dict(provenance or {}))

    @property
    def shape(self):
        """(T, D) shared by every pixel."""
        if not self.pixels:
            return (0, 0)
        return self.pixels[0].windowed.steps.shape

    @cached_property
    def features(self):
        if not self.pixels:
            return np.zeros((0,) + tuple(self.shape))
        return np.stack([p.windowed.steps for p in self.pixels])

    @cached_property
    def labels(self):
        return np.array([p.label for p in self.pixels], dtype=np.int64)

    @property
    def pixel_ids(self):
        return [p.pixel_id for p in self.pixels]

    def subset(self, indices, provenance=None):
        return Dataset([self.pixels[i] for i in indices], self.class_names, provenance or dict(self.provenance))

    def of_class(self, label):
        return self.subset([i for i, p in enumerate(self.pixels) if p.label == label])

    def class_counts(self):
        return {name: int(np.sum(self.labels == index)) for index, name in enumerate(self.class_names)}

    @cached_property
    def digest(self):
        return dataset_digest(self)


def dataset_digest(dataset: Dataset) -> str:
    """FNV-1a over ids, label names and values (raw when present)."""
    chunks = []
    for pixel in dataset.pixels:
        values = pixel.raw.values if pixel.raw is not None else pixel.windowed.steps
        chunks.append(pixel.pixel_id.encode('utf-8') + b'\0')
        chunks.append(dataset.class_names[pixel.label].encode('utf-8') + b'\0')
        chunks.append(np.ascontiguousarray(values, dtype='>f8').tobytes())
    return fnv1a_64(b''.join(chunks))


def meta_path(path):
    path = Path(path)
    return path.with_name(path.stem + '.meta.json')


# -------------------------------------------------------------------
# PERSISTENCE
# -------------------------------------------------------------------

def dataset_frame(dataset: Dataset) -> pd.DataFrame:
    rows = []
    for pixel in dataset.pixels:
        if pixel.raw is None:
            raise ValidationError(f"pixel {pixel.pixel_id} has no raw composites to save")
        length, bands = pixel.raw.values.shape
        composite, band = np.meshgrid(np.arange(length), np.arange(bands), indexing='ij')
        rows.append(pd.DataFrame({
            'pixel_id': pixel.pixel_id,
            'label': dataset.class_names[pixel.label],
            'composite_index': composite.reshape(-1),
            'band_index': band.reshape(-1),
            'value': pixel.raw.values.reshape(-1),
        }))
    if not rows:
        return pd.DataFrame(columns=CSV_COLUMNS)
    return pd.concat(rows, ignore_index=True)[CSV_COLUMNS]


def save_dataset(dataset: Dataset, path):
    """Long-format CSV plus a ``.meta.json`` sidecar holding class order."""
    path = Path(path)
    text = dataset_frame(dataset).to_csv(index=False, float_format='%.17g', lineterminator='\n')
    atomic_write_text(path, text)
    periods = {p.raw.composite_period_days for p in dataset.pixels if p.raw is not None}
    meta = {
        'class_names': list(dataset.class_names),
        'composite_period_days': periods.pop() if len(periods) == 1 else 8,
        'provenance': dataset.provenance,
    }
    atomic_write_text(meta_path(path), json.dumps(meta, sort_keys=True, indent=2) + "\n")
    logger.info(f"Saved {len(dataset)} pixels to {path}")
    return path


def _fail_rows(frame, mask, message):
    if mask.any():
        first = frame.index[mask.to_numpy()][0]
        line = int(first) + 2
        raise ValidationError(f"line {line}: {message(frame.loc[first])}")


def load_dataset(path, class_names=None, window_composites=4, stride_composites=1):
    path = Path(path)
    try:
        frame = pd.read_csv(
            path, dtype={'pixel_id': str, 'label': str},
            keep_default_na=False, float_precision='round_trip',
        )
    except pd.errors.EmptyDataError:
        raise ValidationError(f"{path}: empty file, header required")
    except pd.errors.ParserError as exc:
        raise ValidationError(f"{path}: malformed CSV ({exc})")

    if list(frame.columns) != CSV_COLUMNS:
        raise ValidationError(f"{path}: header must be {','.join(CSV_COLUMNS)}, got {','.join(map(str, frame.columns))}")

    meta = {}
    if meta_path(path).exists():
        meta = json.loads(meta_path(path).read_text())
    if class_names is None:
        class_names = meta.get('class_names') or list(dict.fromkeys(frame['label']))
    class_names = tuple(class_names)
    period = int(meta.get('composite_period_days', 8))

    for column in ('composite_index', 'band_index', 'value'):
        frame[column] = pd.to_numeric(frame[column], errors='coerce')
        _fail_rows(frame, frame[column].isna(), lambda row, c=column: f"{c} is not a number")
    _fail_rows(
        frame, (frame['value'] < 0) | (frame['value'] > 1),
        lambda row: f"value out of [0,1] ({row['value']})",
    )
    for column in ('composite_index', 'band_index'):
        bad = (frame[column] < 0) | (frame[column] != np.floor(frame[column]))
        _fail_rows(frame, bad, lambda row, c=column: f"{c} must be a non-negative integer")
    known = set(class_names)
    _fail_rows(frame, ~frame['label'].isin(known), lambda row: f"unknown class label '{row['label']}'")

    label_index = {name: i for i, name in enumerate(class_names)}
    records = []
    lengths = {}
    band_counts = {}
    for pixel_id, group in frame.groupby('pixel_id', sort=False):
        labels = group['label'].unique()
        if len(labels) != 1:
            raise ValidationError(f"pixel {pixel_id}: rows carry several labels {sorted(labels)}")
        composite = group['composite_index'].to_numpy(dtype=np.int64)
        band = group['band_index'].to_numpy(dtype=np.int64)
        length, bands = int(composite.max()) + 1, int(band.max()) + 1
        values = np.full((length, bands), np.nan)
        values[composite, band] = group['value'].to_numpy(dtype=np.float64)
        if len(group) != length * bands or np.isnan(values).any():
            first_line = int(group.index[0]) + 2
            raise ValidationError(
                f"line {first_line}: pixel {pixel_id} does not cover a full {length} x {bands} grid exactly once"
            )
        lengths.setdefault(length, pixel_id)
        band_counts.setdefault(bands, pixel_id)
        records.append((pixel_id, label_index[labels[0]], SpectralSequence(values, period)))

    if len(lengths) > 1:
        detail = ", ".join(f"T_raw={n} (pixel {pid})" for n, pid in sorted(lengths.items()))
        raise ValidationError(f"{path}: inconsistent sequence lengths: {detail}")
    if len(band_counts) > 1:
        detail = ", ".join(f"B={n} (pixel {pid})" for n, pid in sorted(band_counts.items()))
        raise ValidationError(f"{path}: inconsistent band counts: {detail}")

    pixels = [
        DatasetPixel(pid, label, window_sequence(raw, window_composites, stride_composites), raw)
        for pid, label, raw in records
    ]
    provenance = dict(meta.get('provenance', {}))
    provenance['source'] = path.name
    logger.info(f"Loaded {len(pixels)} pixels from {path}")
    return Dataset(pixels, class_names, provenance)


# -------------------------------------------------------------------
# SPLITS & SLICES
# -------------------------------------------------------------------

def split(dataset: Dataset, fractions, seed):
    """Stratified, seeded partition into ``len(fractions)`` datasets."""
    fractions = [float(f) for f in fractions]
    if not fractions or any(f <= 0 for f in fractions) or sum(fractions) > 1.0 + 1e-12:
        raise ValidationError(f"fractions must be positive and sum to at most 1, got {fractions}")
    parts = [[] for _ in fractions]
    cumulative = np.cumsum([0.0] + fractions)
    for label, name in enumerate(dataset.class_names):
        members = np.flatnonzero(dataset.labels == label)
        if members.size == 0:
            continue
        if members.size < len(fractions):
            raise ValidationError(
                f"class '{name}' has {members.size} pixels, fewer than the {len(fractions)} split parts"
            )
        order = members[make_rng(seed, 'split', name).permutation(members.size)]
        bounds = np.floor(cumulative * members.size + 0.5).astype(int)
        for k in range(len(fractions)):
            parts[k].extend(order[bounds[k]:bounds[k + 1]].tolist())
    return tuple(
        dataset.subset(sorted(indices), provenance={**dataset.provenance, 'split': f"{k}/{len(fractions)}", 'split_seed': seed})
        for k, indices in enumerate(parts)
    )


def slice_steps(dataset: Dataset, interval) -> Dataset:
    """Keep only windowed steps ``interval[0]..interval[1]`` (inclusive)."""
    start, end = int(interval[0]), int(interval[1])
    steps = dataset.shape[0]
    if end < start:
        raise ValidationError(f"empty step interval [{start}, {end}]")
    if start < 0 or end >= steps:
        raise ValidationError(f"step interval [{start}, {end}] outside [0, {steps})")
    pixels = [
        DatasetPixel(
            p.pixel_id, p.label,
            WindowedSequence(p.windowed.steps[start:end + 1], p.windowed.window_composites, p.windowed.stride_composites),
        )
        for p in dataset.pixels
    ]
    return Dataset(pixels, dataset.class_names, {**dataset.provenance, 'steps': [start, end]})
