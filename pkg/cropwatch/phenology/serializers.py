# phenology/serializers.py
import json
from dataclasses import replace
from pathlib import Path

from rest_framework import serializers

from core.exceptions import ValidationError
from core.serializers import StrictSerializer, validated

from .profiles import (
    COVER_CROP_MIX, CROP_CLASSES, DEFAULT_CLASS_MIX, DEFAULT_SCENARIOS, DEFAULT_TEMPLATES, MAX_BANDS, SUGARBEET_MIX,
    CropProfile, SeasonScenario,
)
from .synth import distribute_count

MIXES = {'default': DEFAULT_CLASS_MIX, 'covercrop': COVER_CROP_MIX, 'sugarbeet': SUGARBEET_MIX}


class CropProfileSerializer(StrictSerializer):
    class_name = serializers.ChoiceField(choices=CROP_CLASSES)
    baseline_ndvi = serializers.FloatField(min_value=0.0, max_value=0.3)
    peak_ndvi = serializers.FloatField(min_value=0.6, max_value=0.95)
    greenup_day = serializers.FloatField(min_value=1, max_value=366)
    senescence_day = serializers.FloatField(min_value=1, max_value=366)
    greenup_rate = serializers.FloatField(min_value=1e-6)
    senescence_rate = serializers.FloatField(min_value=1e-6)
    post_harvest_green = serializers.BooleanField(default=False)
    evergreen = serializers.BooleanField(default=False)
    primary_class = serializers.ChoiceField(choices=CROP_CLASSES, required=False, allow_null=True, default=None)
    cover_greenup_day = serializers.FloatField(required=False, allow_null=True, default=None)
    cover_peak_ndvi = serializers.FloatField(required=False, allow_null=True, default=None, min_value=0.0, max_value=1.0)
    cover_rate = serializers.FloatField(default=0.12, min_value=1e-6)

    def validate(self, attrs):
        if attrs['baseline_ndvi'] >= attrs['peak_ndvi']:
            raise serializers.ValidationError({"peak_ndvi": ["Must exceed baseline_ndvi."]})
        if attrs['greenup_day'] >= attrs['senescence_day']:
            raise serializers.ValidationError({"senescence_day": ["Must come after greenup_day."]})
        if attrs['post_harvest_green'] and (attrs['cover_greenup_day'] is None or attrs['cover_peak_ndvi'] is None):
            raise serializers.ValidationError(
                {"post_harvest_green": ["Requires cover_greenup_day and cover_peak_ndvi."]}
            )
        return attrs

    def to_profile(self):
        return CropProfile(**self.validated_data)


class SeasonScenarioSerializer(StrictSerializer):
    name = serializers.RegexField(r'^[A-Za-z0-9_.-]+$', max_length=64)
    planting_shift_days = serializers.IntegerField(default=0, min_value=-59, max_value=59)
    noise_sigma = serializers.FloatField(default=0.02, min_value=0.0)
    cloud_drop_prob = serializers.FloatField(default=0.0, min_value=0.0)
    composites_per_year = serializers.IntegerField(default=46, min_value=1)
    bands = serializers.IntegerField(default=7, min_value=2, max_value=MAX_BANDS)
    composite_period_days = serializers.IntegerField(default=8, min_value=1)

    def validate_cloud_drop_prob(self, value):
        if value >= 1.0:
            raise serializers.ValidationError("Must be below 1.")
        return value

    def validate(self, attrs):
        if 1 + attrs['composite_period_days'] * (attrs['composites_per_year'] - 1) > 366:
            raise serializers.ValidationError({"composites_per_year": ["Composites run past the end of the year."]})
        return attrs


def scenario_from_data(data, source="scenario"):
    return SeasonScenario(**validated(SeasonScenarioSerializer, data, source)).validate()


def profile_from_data(data, source="template"):
    return CropProfile(**validated(CropProfileSerializer, data, source)).validate()


def templates_from_data(items, base=None):
    """
    Merge a list of template objects over ``base`` (default templates).
    A template for an existing class replaces it entirely.
    """
    templates = dict(base or DEFAULT_TEMPLATES)
    if not isinstance(items, list):
        raise ValidationError("templates: expected a list of template objects")
    for index, item in enumerate(items):
        profile = profile_from_data(item, source=f"templates[{index}]")
        templates[profile.class_name] = profile
    return templates


def load_templates(path):
    """Read a JSON file holding either a list of templates or ``{"templates": [...]}``."""
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})")
    if isinstance(payload, dict):
        payload = payload.get('templates', [])
    return templates_from_data(payload)


def with_noise(scenario: SeasonScenario, noise_sigma=None, cloud_drop_prob=None):
    changes = {}
    if noise_sigma is not None:
        changes['noise_sigma'] = noise_sigma
    if cloud_drop_prob is not None:
        changes['cloud_drop_prob'] = cloud_drop_prob
    return replace(scenario, **changes).validate()


class GenerateRunSerializer(StrictSerializer):
    mix = serializers.ChoiceField(choices=sorted(MIXES), default='default')
    class_mix = serializers.DictField(child=serializers.IntegerField(min_value=1), required=False, allow_empty=False)
    count = serializers.IntegerField(required=False, min_value=1)
    scenarios = serializers.ListField(child=serializers.DictField(), required=False, allow_empty=False)
    templates = serializers.ListField(child=serializers.DictField(), default=list)
    noise_sigma = serializers.FloatField(required=False, allow_null=True, default=None, min_value=0.0)
    cloud_drop_prob = serializers.FloatField(required=False, allow_null=True, default=None, min_value=0.0)


def generate_plan(values):
    """(class_mix, class_names, scenarios, templates) for a validated generate config."""
    templates = templates_from_data(list(values['templates']))
    mix = dict(values.get('class_mix') or MIXES[values['mix']])
    class_names = list(mix)
    if values.get('count'):
        mix = distribute_count(mix, values['count'])
    scenarios = DEFAULT_SCENARIOS
    if values.get('scenarios'):
        scenarios = tuple(
            scenario_from_data(item, source=f"scenarios[{index}]") for index, item in enumerate(values['scenarios'])
        )
    noise_sigma, cloud_drop_prob = values.get('noise_sigma'), values.get('cloud_drop_prob')
    scenarios = tuple(with_noise(scenario, noise_sigma, cloud_drop_prob) for scenario in scenarios)
    names = [scenario.name for scenario in scenarios]
    if len(set(names)) != len(names):
        raise ValidationError(f"scenario names must be unique, got {names}")
    return mix, class_names, scenarios, templates
