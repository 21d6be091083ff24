# core/serializers.py
import json
from dataclasses import fields
from pathlib import Path

from rest_framework import serializers

from core.exceptions import ValidationError


class StrictSerializer(serializers.Serializer):
    """Plain (non-model) serializer that refuses keys it does not declare."""

    def to_internal_value(self, data):
        if not isinstance(data, dict):
            raise serializers.ValidationError({"non_field_errors": ["Expected a JSON object."]})
        unknown = sorted(set(data) - set(self.fields))
        if unknown:
            raise serializers.ValidationError({key: ["Unknown key."] for key in unknown})
        return super().to_internal_value(data)


def flatten_errors(errors, prefix=""):
    """DRF error dict -> ['field.sub: message', ...]"""
    if isinstance(errors, dict):
        lines = []
        for key, value in errors.items():
            label = key if not prefix else f"{prefix}.{key}"
            lines.extend(flatten_errors(value, label))
        return lines
    if isinstance(errors, list):
        lines = []
        for index, value in enumerate(errors):
            if isinstance(value, (dict, list)):
                lines.extend(flatten_errors(value, f"{prefix}[{index}]"))
            else:
                lines.append(f"{prefix}: {value}" if prefix else str(value))
        return lines
    return [f"{prefix}: {errors}" if prefix else str(errors)]


def validated(serializer_class, data, source="config"):
    """Run ``serializer_class`` on ``data``; raise a cropwatch ValidationError listing every problem."""
    serializer = serializer_class(data=data)
    if not serializer.is_valid():
        raise ValidationError(f"{source}: " + "; ".join(flatten_errors(serializer.errors)))
    return serializer.validated_data


def build_config(config_class, values):
    """Instantiate dataclass ``config_class`` from the keys of ``values`` it declares."""
    names = {item.name for item in fields(config_class)}
    return config_class(**{key: value for key, value in values.items() if key in names})


def load_config_file(path):
    """JSON object from ``path``; an absent path means an empty config."""
    if not path:
        return {}
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})")
    if not isinstance(payload, dict):
        raise ValidationError(f"{path}: expected a JSON object at the top level")
    return payload
