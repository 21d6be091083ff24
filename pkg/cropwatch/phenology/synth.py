# phenology/synth.py
from dataclasses import dataclass, replace

import numpy as np
import structlog
from scipy.special import expit

from core.exceptions import ValidationError
from core.rng import derive_seed, make_rng
from pipeline.datasets import Dataset
from pipeline.sequences import SpectralSequence

from .profiles import BAND_AFFINE, DEFAULT_TEMPLATES, CropProfile, SeasonScenario, composite_day

logger = structlog.get_logger("cropwatch.data")

RATE_JITTER = 0.10
DAY_JITTER = 4.0
CLOUD_REFLECTANCE = (0.0, 0.12)


@dataclass(frozen=True)
class LabeledPixel:
    pixel_id: str
    class_label: int
    sequence: SpectralSequence
    scenario_tag: str


def ndvi_curve(days, profile: CropProfile):
    """Vectorised double-logistic NDVI, clamped to [0, 1]."""
    profile.validate()
    days = np.asarray(days, dtype=np.float64)
    if np.any(days < 1) or np.any(days > 366):
        raise ValidationError("day of year must lie in [1, 366]")
    amplitude = profile.peak_ndvi - profile.baseline_ndvi
    rise = expit(profile.greenup_rate * (days - profile.greenup_day))
    fall = 0.0 if profile.evergreen else expit(profile.senescence_rate * (days - profile.senescence_day))
    ndvi = profile.baseline_ndvi + amplitude * (rise - fall)
    if profile.post_harvest_green:
        cover = expit(profile.cover_rate * (days - profile.cover_greenup_day))
        ndvi = ndvi + (profile.cover_peak_ndvi - profile.baseline_ndvi) * cover
    return np.clip(ndvi, 0.0, 1.0)


def double_logistic_ndvi(day, profile: CropProfile) -> float:
    return float(ndvi_curve(day, profile))


def band_expand(ndvi, rng, noise_sigma=0.0, bands=7):
    """Per-band affine map of NDVI plus independent Gaussian noise, clipped to [0, 1]."""
    ndvi = np.asarray(ndvi, dtype=np.float64)
    offsets = np.array([a for a, _ in BAND_AFFINE[:bands]])
    slopes = np.array([b for _, b in BAND_AFFINE[:bands]])
    values = offsets + slopes * ndvi[..., None]
    if noise_sigma > 0:
        values = values + rng.normal(0.0, noise_sigma, size=values.shape)
    return np.clip(values, 0.0, 1.0)


def synth_pixel(profile: CropProfile, scenario: SeasonScenario, seed, pixel_id=None, class_label=0) -> LabeledPixel:
    """One labelled pixel; composites are independently swapped for cloud samples."""
    profile.validate()
    scenario.validate()
    rng = make_rng(seed, 'pixel')
    curve = ndvi_curve(scenario.days(), profile.shifted(scenario.planting_shift_days))
    values = band_expand(curve, rng, scenario.noise_sigma, scenario.bands)
    if scenario.cloud_drop_prob > 0:
        cloudy = rng.random(scenario.composites_per_year) < scenario.cloud_drop_prob
        if cloudy.any():
            values[cloudy] = rng.uniform(*CLOUD_REFLECTANCE, size=(int(cloudy.sum()), scenario.bands))
    return LabeledPixel(
        pixel_id=pixel_id or f"{scenario.name}-{seed:016x}",
        class_label=class_label,
        sequence=SpectralSequence(values, scenario.composite_period_days),
        scenario_tag=scenario.name,
    )


def jitter_profile(profile: CropProfile, rng) -> CropProfile:
    """+-10% on rates, +-4 days on dates (uniform)."""
    def rate(value):
        return value * rng.uniform(1.0 - RATE_JITTER, 1.0 + RATE_JITTER)

    def day(value):
        return None if value is None else value + rng.uniform(-DAY_JITTER, DAY_JITTER)

    return replace(
        profile,
        greenup_day=day(profile.greenup_day),
        senescence_day=day(profile.senescence_day),
        greenup_rate=rate(profile.greenup_rate),
        senescence_rate=rate(profile.senescence_rate),
        cover_greenup_day=day(profile.cover_greenup_day),
        cover_rate=rate(profile.cover_rate),
    )


def synth_dataset(class_mix, scenario: SeasonScenario, seed, templates=None, class_names=None):
    """
    Jittered pixels for every class in ``class_mix`` (name -> count),
    shuffled deterministically by ``seed``. Labels index ``class_names``
    (default: the mix order).
    """
    if not class_mix:
        raise ValidationError("class mix is empty")
    templates = templates or DEFAULT_TEMPLATES
    class_names = list(class_names or class_mix.keys())
    plan = []
    for name, count in class_mix.items():
        if name not in templates:
            raise ValidationError(f"no template for class '{name}'")
        if name not in class_names:
            raise ValidationError(f"class '{name}' is not in class_names {class_names}")
        if int(count) < 1:
            raise ValidationError(f"class '{name}' needs a positive count, got {count}")
        plan.extend([name] * int(count))

    order = make_rng(seed, 'shuffle', scenario.name).permutation(len(plan))
    pixels = []
    for position, index in enumerate(order):
        name = plan[index]
        pixel_seed = derive_seed(seed, scenario.name, int(index))
        profile = jitter_profile(templates[name], make_rng(pixel_seed, 'jitter'))
        pixels.append(synth_pixel(
            profile, scenario, pixel_seed,
            pixel_id=f"{scenario.name}-{position:06d}",
            class_label=class_names.index(name),
        ))
    logger.info(f"Generated {len(pixels)} pixels for scenario {scenario.name}")
    return pixels


def divergence_window(profile_a: CropProfile, profile_b: CropProfile, min_gap=0.05, composites=46, period=8):
    """
    Longest run of composites where the noiseless curves differ by more
    than ``min_gap`` NDVI, as an inclusive (first, last) pair, or None.
    """
    days = composite_day(np.arange(composites), period)
    gap = np.abs(ndvi_curve(days, profile_a) - ndvi_curve(days, profile_b)) > min_gap
    best, start = None, None
    for index, flag in enumerate(list(gap) + [False]):
        if flag and start is None:
            start = index
        elif not flag and start is not None:
            if best is None or index - start > best[1] - best[0] + 1:
                best = (start, index - 1)
            start = None
    return best


def distribute_count(class_mix, count):
    """
    Spread ``count`` pixels over the classes of ``class_mix`` as evenly as
    possible, remainder to earlier classes. Classes left with none drop out.
    """
    names = list(class_mix)
    if not names:
        raise ValidationError("class mix is empty")
    if int(count) < 1:
        raise ValidationError(f"count must be positive, got {count}")
    share, remainder = divmod(int(count), len(names))
    counts = {name: share + (1 if index < remainder else 0) for index, name in enumerate(names)}
    return {name: n for name, n in counts.items() if n > 0}


def generate_dataset(class_mix, scenario: SeasonScenario, seed, templates=None, class_names=None,
                     window_composites=4, stride_composites=1):
    """``synth_dataset`` packed into a windowed pipeline Dataset."""
    class_names = list(class_names or class_mix.keys())
    pixels = synth_dataset(class_mix, scenario, seed, templates=templates, class_names=class_names)
    provenance = {'scenario': scenario.to_dict(), 'seed': seed, 'class_mix': dict(class_mix)}
    return Dataset.from_records(pixels, class_names, window_composites, stride_composites, provenance)
