# temporal/covercrops.py
"""
Rule-based cover-crop detection from a pixel's yearly NDVI series.

A field is cover cropped when it peaks during the growing season like a
primary crop and is green again in the last composites of the year.
Fields that never drop below ``evergreen_min`` (alfalfa, pasture) are
evergreen and never count as cover cropped.
"""
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
import structlog

from core.exceptions import DimensionError, ValidationError
from pipeline.datasets import Dataset
from pipeline.sequences import ndvi_series

logger = structlog.get_logger("cropwatch.evaluation")

PRIMARY_ONLY = 'primary_only'
COVER_CROPPED = 'cover_cropped'
EVERGREEN = 'evergreen'
DETECTION_LABELS = (PRIMARY_ONLY, COVER_CROPPED, EVERGREEN)
TOTAL_ROW = 'Total'
TABLE_COLUMNS = ['class', 'total_area', 'cover_crop_percent', 'cover_crop_area']


@dataclass(frozen=True)
class CoverCropRule:
    harvest_step: int = 34
    post_window: int = 5
    green_threshold: float = 0.35
    evergreen_min: float = 0.55
    growing_season_range: tuple = (15, 32)
    require_dip: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'growing_season_range', tuple(int(v) for v in self.growing_season_range))

    def validate(self, length=None):
        if not 0.0 < self.green_threshold < self.evergreen_min < 1.0:
            raise ValidationError("thresholds must satisfy 0 < green_threshold < evergreen_min < 1")
        if self.post_window < 1 or self.harvest_step < 0:
            raise ValidationError("post_window must be positive and harvest_step non-negative")
        first, last = self.growing_season_range
        if not 0 <= first <= last:
            raise ValidationError(f"growing_season_range {list(self.growing_season_range)} is not an interval")
        if length is not None:
            if self.harvest_step + self.post_window > length or last >= length:
                raise DimensionError(
                    f"series of {length} composites is too short for harvest_step {self.harvest_step}, "
                    f"post_window {self.post_window} and growing season {list(self.growing_season_range)}"
                )
        return self

    def to_dict(self):
        return {**asdict(self), 'growing_season_range': list(self.growing_season_range)}


def detect_cover_crop(ndvi, rule: CoverCropRule = None):
    """Exactly one of primary_only / cover_cropped / evergreen for an NDVI series."""
    rule = rule or CoverCropRule()
    ndvi = np.asarray(ndvi, dtype=np.float64)
    if ndvi.ndim != 1:
        raise DimensionError(f"expected a 1-D NDVI series, got shape {list(ndvi.shape)}")
    rule.validate(ndvi.size)
    first, last = rule.growing_season_range
    season = ndvi[first:last + 1]
    post = ndvi[ndvi.size - rule.post_window:]
    if min(season.min(), post.min()) >= rule.evergreen_min:
        return EVERGREEN
    green_again = post.mean() >= rule.green_threshold
    peaked = season.max() >= rule.evergreen_min
    dipped = ndvi[rule.harvest_step] < rule.green_threshold if rule.require_dip else True
    if green_again and peaked and dipped:
        return COVER_CROPPED
    return PRIMARY_ONLY


def detect_dataset(dataset: Dataset, rule: CoverCropRule = None):
    """Per-pixel detections from the raw composites; needs a dataset that kept its raw sequences."""
    rule = rule or CoverCropRule()
    rows = []
    for pixel in dataset.pixels:
        if pixel.raw is None:
            raise ValidationError(f"pixel {pixel.pixel_id} has no raw composites to compute NDVI from")
        rows.append({
            'pixel_id': pixel.pixel_id,
            'class': dataset.class_names[pixel.label],
            'detection': detect_cover_crop(ndvi_series(pixel.raw), rule),
        })
    frame = pd.DataFrame(rows, columns=['pixel_id', 'class', 'detection'])
    logger.info("Cover-crop detection done", pixels=len(frame), **frame['detection'].value_counts().to_dict())
    return frame


@dataclass(frozen=True)
class CoverCropRow:
    class_name: str
    total_area: float
    cover_crop_area: float

    @property
    def percent(self):
        return round(100.0 * self.cover_crop_area / self.total_area, 2) if self.total_area else 0.0


def cover_crop_table(labels, detections, areas=None):
    """
    Per-class total area, cover-cropped area and percentage (2 decimals),
    classes in first-seen order, then a grand total row.
    """
    labels = list(labels)
    detections = list(detections)
    areas = [1.0] * len(labels) if areas is None else [float(a) for a in areas]
    if not len(labels) == len(detections) == len(areas):
        raise DimensionError(f"{len(labels)} labels, {len(detections)} detections, {len(areas)} areas")
    unknown = sorted(set(detections) - set(DETECTION_LABELS))
    if unknown:
        raise ValidationError(f"unknown detection labels {unknown}")
    totals, covered = {}, {}
    for label, detection, area in zip(labels, detections, areas):
        if area < 0:
            raise ValidationError(f"negative area {area}")
        totals[label] = totals.get(label, 0.0) + area
        covered[label] = covered.get(label, 0.0) + (area if detection == COVER_CROPPED else 0.0)
    rows = [CoverCropRow(label, totals[label], covered[label]) for label in totals]
    rows.append(CoverCropRow(TOTAL_ROW, sum(totals.values()), sum(covered.values())))
    return rows


def cover_crop_table_frame(rows) -> pd.DataFrame:
    return pd.DataFrame(
        [[row.class_name, row.total_area, row.percent, row.cover_crop_area] for row in rows],
        columns=TABLE_COLUMNS,
    )


def _area(value):
    return f"{value:.0f}" if float(value).is_integer() else f"{value:.2f}"


def format_cover_crop_table(rows):
    """Aligned text: class, total area, cover-crop %, cover-crop area."""
    frame = pd.DataFrame({
        'Crop': [row.class_name for row in rows],
        'Total area': [_area(row.total_area) for row in rows],
        'Cover crop (%)': [f"{row.percent:.2f}" for row in rows],
        'Cover crop area': [_area(row.cover_crop_area) for row in rows],
    })
    return frame.to_string(index=False)
