# evaluation/serializers.py
from rest_framework import serializers

from adaptation.serializers import adapt_config_from_data
from classifier.serializers import ann_config_from_data, train_config_from_data
from core.serializers import StrictSerializer, validated
from pipeline.serializers import LayoutSerializer

from .reports import DEFAULT_METHODS, METHODS


class EvaluateConfigSerializer(StrictSerializer):
    methods = serializers.ListField(
        child=serializers.ChoiceField(choices=sorted(METHODS)), allow_empty=False, default=list(DEFAULT_METHODS),
    )
    positive_class = serializers.IntegerField(default=0, min_value=0)
    ann = serializers.DictField(default=dict)
    lstm = serializers.DictField(default=dict)
    adapt = serializers.DictField(default=dict)

    def validate_methods(self, value):
        if len(set(value)) != len(value):
            raise serializers.ValidationError("Methods must not repeat.")
        return value


def evaluate_config_from_data(data, source="evaluate"):
    """(methods, positive_class, {'ann': AnnConfig, 'lstm': TrainConfig, 'adapt': AdaptConfig})"""
    values = validated(EvaluateConfigSerializer, data or {}, source)
    configs = {
        'ann': ann_config_from_data(values['ann'], f"{source}.ann"),
        'lstm': train_config_from_data(values['lstm'], f"{source}.lstm"),
        'adapt': adapt_config_from_data(values['adapt'], f"{source}.adapt"),
    }
    return values['methods'], values['positive_class'], configs


class EvaluateRunSerializer(LayoutSerializer, EvaluateConfigSerializer):
    train = serializers.CharField()
    tests = serializers.DictField(child=serializers.CharField(), allow_empty=False)

    def validate_tests(self, value):
        for name in value:
            if not name or any(char in name for char in ',=/'):
                raise serializers.ValidationError(f"Scenario name '{name}' may not be empty or contain ',', '=' or '/'.")
        return value


def evaluation_section(values):
    """The method/config part of a validated evaluate run config."""
    return {key: values[key] for key in EvaluateConfigSerializer().fields}
