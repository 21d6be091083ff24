# pipeline/sequences.py
from dataclasses import dataclass

import numpy as np

from core.exceptions import ValidationError

NIR_BAND = 0
RED_BAND = 1


@dataclass(frozen=True)
class SpectralSequence:
    """One pixel's raw composites: ``values`` is T_raw x B reflectance."""
    values: np.ndarray
    composite_period_days: int = 8

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] < 1 or values.shape[0] < 1:
            raise ValidationError(f"spectral sequence must be T_raw x B with B >= 1, got {list(values.shape)}")
        if self.composite_period_days < 1:
            raise ValidationError("composite_period_days must be positive")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @property
    def length(self):
        return self.values.shape[0]

    @property
    def bands(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class WindowedSequence:
    """Model input: ``steps`` is T x D, D = window_composites x B."""
    steps: np.ndarray
    window_composites: int = 4
    stride_composites: int = 1

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=np.float64)
        if steps.ndim != 2:
            raise ValidationError(f"windowed sequence must be T x D, got {list(steps.shape)}")
        steps.setflags(write=False)
        object.__setattr__(self, 'steps', steps)

    @property
    def length(self):
        return self.steps.shape[0]

    @property
    def dim(self):
        return self.steps.shape[1]

    def prefix(self, length):
        return WindowedSequence(self.steps[:length], self.window_composites, self.stride_composites)


def window_sequence(raw: SpectralSequence, window_composites=4, stride_composites=1) -> WindowedSequence:
    """
    Concatenate ``window_composites`` consecutive composites into one step,
    sliding by ``stride_composites``. Composite order first, band order
    second; no padding at the year edges.
    """
    if window_composites < 1 or stride_composites < 1:
        raise ValidationError("window and stride must be at least one composite")
    length, bands = raw.values.shape
    if length < window_composites:
        raise ValidationError(
            f"window of {window_composites} composites is larger than the sequence ({length})"
        )
    count = (length - window_composites) // stride_composites + 1
    starts = np.arange(count) * stride_composites
    index = starts[:, None] + np.arange(window_composites)[None, :]
    steps = raw.values[index].reshape(count, window_composites * bands)
    return WindowedSequence(steps, window_composites, stride_composites)


def ndvi_from_bands(values):
    """(NIR - red) / (NIR + red) from the band proxies; 0 where both are 0."""
    values = np.asarray(values, dtype=np.float64)
    nir = values[..., NIR_BAND]
    red = values[..., RED_BAND]
    total = nir + red
    with np.errstate(invalid='ignore', divide='ignore'):
        ndvi = np.where(total > 0, (nir - red) / np.where(total > 0, total, 1.0), 0.0)
    return ndvi


def ndvi_series(raw: SpectralSequence):
    if raw.bands < 2:
        raise ValidationError("NDVI needs at least the NIR and red proxy bands")
    return ndvi_from_bands(raw.values)


def composites_to_steps(first, last, window_composites=4, stride_composites=1, steps=None):
    """Inclusive step interval whose windows overlap composites [first, last]."""
    low = max(0, -(-(first - window_composites + 1) // stride_composites))
    high = last // stride_composites
    if steps is not None:
        high = min(high, steps - 1)
    return low, high
