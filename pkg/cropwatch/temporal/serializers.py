# temporal/serializers.py
from rest_framework import serializers

from core.serializers import StrictSerializer, validated
from pipeline.serializers import LayoutSerializer

from .confidence import DEFAULT_PATIENCE, DEFAULT_THRESHOLD
from .covercrops import CoverCropRule


class CoverCropRuleSerializer(StrictSerializer):
    harvest_step = serializers.IntegerField(default=34, min_value=0)
    post_window = serializers.IntegerField(default=5, min_value=1)
    green_threshold = serializers.FloatField(default=0.35)
    evergreen_min = serializers.FloatField(default=0.55)
    growing_season_range = serializers.ListField(
        child=serializers.IntegerField(min_value=0), min_length=2, max_length=2, default=[15, 32],
    )
    require_dip = serializers.BooleanField(default=False)

    def validate_growing_season_range(self, value):
        if value[0] > value[1]:
            raise serializers.ValidationError("First composite must not come after the last.")
        return value

    def validate(self, data):
        if not 0.0 < data['green_threshold'] < data['evergreen_min'] < 1.0:
            raise serializers.ValidationError(
                {"green_threshold": ["Need 0 < green_threshold < evergreen_min < 1."]}
            )
        return data


class EarlyDetectionSerializer(StrictSerializer):
    threshold = serializers.FloatField(default=DEFAULT_THRESHOLD)
    patience = serializers.IntegerField(default=DEFAULT_PATIENCE, min_value=1)

    def validate_threshold(self, value):
        if not 0.0 < value < 1.0:
            raise serializers.ValidationError("Must lie strictly between 0 and 1.")
        return value


def cover_crop_rule_from_data(data, source="covercrops"):
    return CoverCropRule(**validated(CoverCropRuleSerializer, data or {}, source)).validate()


def early_config_from_data(data, source="early"):
    return dict(validated(EarlyDetectionSerializer, data or {}, source))


class EarlyRunSerializer(LayoutSerializer, EarlyDetectionSerializer):
    model = serializers.CharField()
    data = serializers.CharField()


class CoverCropRunSerializer(LayoutSerializer, CoverCropRuleSerializer):
    data = serializers.CharField()
    model = serializers.CharField(required=False, allow_null=True, default=None)
    pixel_area = serializers.FloatField(default=1.0, min_value=0.0)
