# pipeline/serializers.py
from rest_framework import serializers

from core.serializers import StrictSerializer

from .datasets import load_dataset


class LayoutSerializer(StrictSerializer):
    """Windowing applied when a command loads dataset CSVs."""
    window_composites = serializers.IntegerField(default=4, min_value=1)
    stride_composites = serializers.IntegerField(default=1, min_value=1)


def load_with_layout(path, values, class_names=None):
    return load_dataset(
        path, class_names=class_names,
        window_composites=values['window_composites'], stride_composites=values['stride_composites'],
    )
