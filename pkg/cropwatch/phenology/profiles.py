# phenology/profiles.py
"""
Crop templates and season scenarios for the synthetic generator.

Band affine maps are conventions: band 0 is the near-infrared proxy and band
1 the red proxy, chosen so that (b0 - b1) / (b0 + b1) reproduces NDVI
exactly; bands 2-6 only add plausible, NDVI-correlated context.
"""
from dataclasses import asdict, dataclass, replace
from datetime import date, timedelta

import numpy as np

from core.exceptions import ValidationError

CROP_CLASSES = ('corn', 'soybean', 'sugarbeet', 'alfalfa', 'corn_cover', 'soybean_cover')

# (offset, slope) per band: reflectance = offset + slope * ndvi
BAND_AFFINE = (
    (0.30, 0.30),    # near-infrared proxy
    (0.30, -0.30),   # red proxy
    (0.08, -0.04),   # blue
    (0.10, 0.04),    # green
    (0.30, -0.10),   # shortwave infrared 1
    (0.25, -0.12),   # shortwave infrared 2
    (0.28, 0.22),    # near-infrared 2
)
MAX_BANDS = len(BAND_AFFINE)


@dataclass(frozen=True)
class CropProfile:
    class_name: str
    baseline_ndvi: float
    peak_ndvi: float
    greenup_day: float
    senescence_day: float
    greenup_rate: float
    senescence_rate: float
    post_harvest_green: bool = False
    evergreen: bool = False
    primary_class: str = None
    cover_greenup_day: float = None
    cover_peak_ndvi: float = None
    cover_rate: float = 0.12

    def validate(self):
        if self.class_name not in CROP_CLASSES:
            raise ValidationError(f"unknown crop class '{self.class_name}', expected one of {CROP_CLASSES}")
        if not 0.0 <= self.baseline_ndvi <= 0.3:
            raise ValidationError(f"{self.class_name}: baseline_ndvi {self.baseline_ndvi} outside [0, 0.3]")
        if not 0.6 <= self.peak_ndvi <= 0.95:
            raise ValidationError(f"{self.class_name}: peak_ndvi {self.peak_ndvi} outside [0.6, 0.95]")
        if self.baseline_ndvi >= self.peak_ndvi:
            raise ValidationError(f"{self.class_name}: baseline_ndvi must be below peak_ndvi")
        if self.greenup_day >= self.senescence_day:
            raise ValidationError(f"{self.class_name}: greenup_day must precede senescence_day")
        if self.greenup_rate <= 0 or self.senescence_rate <= 0:
            raise ValidationError(f"{self.class_name}: rates must be positive")
        if self.post_harvest_green:
            if self.cover_greenup_day is None or self.cover_peak_ndvi is None:
                raise ValidationError(f"{self.class_name}: cover crop needs cover_greenup_day and cover_peak_ndvi")
            if self.cover_greenup_day <= self.senescence_day:
                raise ValidationError(f"{self.class_name}: cover crop must green up after senescence")
        return self

    @property
    def primary(self):
        return self.primary_class or self.class_name

    def shifted(self, days):
        return replace(
            self,
            greenup_day=self.greenup_day + days,
            senescence_day=self.senescence_day + days,
            cover_greenup_day=None if self.cover_greenup_day is None else self.cover_greenup_day + days,
        )

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SeasonScenario:
    name: str = 'in_domain'
    planting_shift_days: int = 0
    noise_sigma: float = 0.02
    cloud_drop_prob: float = 0.0
    composites_per_year: int = 46
    bands: int = 7
    composite_period_days: int = 8

    def validate(self):
        if abs(self.planting_shift_days) >= 60:
            raise ValidationError(f"planting_shift_days {self.planting_shift_days} must satisfy |shift| < 60")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be non-negative")
        if not 0.0 <= self.cloud_drop_prob < 1.0:
            raise ValidationError("cloud_drop_prob must lie in [0, 1)")
        if self.composites_per_year < 1:
            raise ValidationError("composites_per_year must be positive")
        if not 2 <= self.bands <= MAX_BANDS:
            raise ValidationError(f"bands must lie in [2, {MAX_BANDS}] (NIR and red proxies are required)")
        if composite_day(self.composites_per_year - 1, self.composite_period_days) > 366:
            raise ValidationError("composites run past the end of the year")
        return self

    def days(self):
        return composite_day(np.arange(self.composites_per_year), self.composite_period_days)

    def to_dict(self):
        return asdict(self)


def composite_day(index, period=8):
    """Day-of-year a composite starts on (composite 0 starts on day 1)."""
    return 1 + period * np.asarray(index) if np.ndim(index) else 1 + period * int(index)


def format_interval_dates(interval, window_composites=4, stride_composites=1, period=8, year=2016):
    """Calendar span covered by windowed steps ``interval`` (inclusive), e.g. 'Jun 09 - Jul 11'."""
    first, last = interval
    start_day = composite_day(first * stride_composites, period)
    end_day = composite_day(last * stride_composites + window_composites - 1, period) + period - 1
    origin = date(year, 1, 1)
    start = origin + timedelta(days=int(start_day) - 1)
    end = origin + timedelta(days=min(int(end_day), 365) - 1)
    return f"{start:%b %d} - {end:%b %d}"


# --- Default class templates ---
# corn greens up 10 days earlier and faster than soybean, and soybean
# senesces a week before corn. Sugarbeet greens up like soybean and stays
# green about 30 days past corn, so it separates only late in the season.
CORN = CropProfile('corn', 0.15, 0.85, 160, 255, 0.15, 0.10)
SOYBEAN = CropProfile('soybean', 0.15, 0.85, 170, 248, 0.10, 0.10)
SUGARBEET = CropProfile('sugarbeet', 0.15, 0.85, 170, 285, 0.10, 0.08)
ALFALFA = CropProfile('alfalfa', 0.25, 0.80, 105, 300, 0.10, 0.05, evergreen=True)
CORN_COVER = replace(
    CORN, class_name='corn_cover', post_harvest_green=True, primary_class='corn',
    cover_greenup_day=285, cover_peak_ndvi=0.55,
)
SOYBEAN_COVER = replace(
    SOYBEAN, class_name='soybean_cover', post_harvest_green=True, primary_class='soybean',
    cover_greenup_day=285, cover_peak_ndvi=0.55,
)

DEFAULT_TEMPLATES = {
    profile.class_name: profile
    for profile in (CORN, SOYBEAN, SUGARBEET, ALFALFA, CORN_COVER, SOYBEAN_COVER)
}

DEFAULT_SCENARIOS = (
    SeasonScenario('in_domain', 0),
    SeasonScenario('shift_8', 8),
    SeasonScenario('shift_16', 16),
)

DEFAULT_CLASS_MIX = {'corn': 500, 'soybean': 500}
COVER_CROP_MIX = {'corn': 60, 'soybean': 60, 'corn_cover': 60, 'soybean_cover': 60, 'alfalfa': 60}
SUGARBEET_MIX = {'corn': 300, 'soybean': 300, 'sugarbeet': 300}
