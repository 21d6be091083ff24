# classifier/serializers.py
from rest_framework import serializers

from core.serializers import StrictSerializer, validated
from pipeline.serializers import LayoutSerializer

from .ann import AnnConfig
from .bundle import POOLINGS
from .training import TrainConfig


class TrainConfigSerializer(StrictSerializer):
    hidden_dim = serializers.IntegerField(default=32, min_value=1, max_value=1024)
    epochs = serializers.IntegerField(default=30, min_value=1)
    batch_size = serializers.IntegerField(default=32, min_value=1)
    learning_rate = serializers.FloatField(default=1e-3, min_value=1e-12)
    clip_norm = serializers.FloatField(default=5.0, min_value=0.0, allow_null=True)
    pooling = serializers.ChoiceField(choices=POOLINGS, default='attention')
    forget_bias = serializers.FloatField(default=1.0)


class AnnConfigSerializer(StrictSerializer):
    hidden_dim = serializers.IntegerField(default=32, min_value=1, max_value=1024)
    epochs = serializers.IntegerField(default=30, min_value=1)
    batch_size = serializers.IntegerField(default=32, min_value=1)
    learning_rate = serializers.FloatField(default=1e-3, min_value=1e-12)
    clip_norm = serializers.FloatField(default=5.0, min_value=0.0, allow_null=True)


def train_config_from_data(data, source="train"):
    return TrainConfig(**validated(TrainConfigSerializer, data or {}, source)).validate()


def ann_config_from_data(data, source="ann"):
    return AnnConfig(**validated(AnnConfigSerializer, data or {}, source)).validate()


class TrainRunSerializer(LayoutSerializer, TrainConfigSerializer):
    data = serializers.CharField()
