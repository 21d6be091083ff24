# adaptation/serializers.py
from rest_framework import serializers

from core.serializers import StrictSerializer, validated
from pipeline.serializers import LayoutSerializer

from .training import AdaptConfig


class AdaptConfigSerializer(StrictSerializer):
    epochs = serializers.IntegerField(default=20, min_value=1)
    batch_size = serializers.IntegerField(default=32, min_value=1)
    mapper_learning_rate = serializers.FloatField(default=1e-3, min_value=1e-12)
    disc_learning_rate = serializers.FloatField(default=1e-3, min_value=1e-12)
    disc_steps = serializers.IntegerField(default=1, min_value=1, max_value=50)
    lambda_att = serializers.FloatField(default=1.0, min_value=0.0)
    residual_dim = serializers.IntegerField(default=8, min_value=1, max_value=256)
    clip_norm = serializers.FloatField(default=5.0, min_value=0.0, allow_null=True)


def adapt_config_from_data(data, source="adapt"):
    return AdaptConfig(**validated(AdaptConfigSerializer, data or {}, source)).validate()


class AdaptRunSerializer(LayoutSerializer, AdaptConfigSerializer):
    model = serializers.CharField()
    source = serializers.CharField()
    target = serializers.CharField()
