# classifier/bundle.py
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from core.artifacts import write_json
from core.digests import digest_json
from core.exceptions import ArtifactVersionError, DimensionError, ValidationError
from tensors.tensor import Tensor, as_tensor, mul, sub

from .attention import AttentionParams, DenseHead
from .lstm import GATES, LstmParams

BUNDLE_FORMAT = 'cropwatch.model'
BUNDLE_VERSION = 1
POOLINGS = ('attention', 'last')
MIN_SCALE = 1e-6


def flat_tensor(tensor):
    return {'shape': list(tensor.shape), 'values': tensor.data.reshape(-1).tolist()}


def unflat_tensor(payload, name, requires_grad=True):
    try:
        values = np.asarray(payload['values'], dtype=np.float64)
        shape = tuple(int(n) for n in payload['shape'])
        return Tensor(values.reshape(shape), requires_grad=requires_grad, name=name)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"parameter '{name}' is malformed: {exc}")


@dataclass(frozen=True)
class FeatureScaler:
    """Per-feature standardisation, statistics pooled over pixels and steps."""
    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        scale = np.asarray(self.scale, dtype=np.float64)
        if mean.ndim != 1 or mean.shape != scale.shape:
            raise DimensionError(
                f"scaler mean {list(mean.shape)} and scale {list(scale.shape)} must be equal-length vectors"
            )
        if np.any(scale <= 0):
            raise ValidationError("scaler scales must be positive")
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'scale', scale)

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, features):
        """Mean and std of every feature of an N x T x D array; flat features keep scale 1."""
        features = np.asarray(features, dtype=np.float64)
        flat = features.reshape(-1, features.shape[-1])
        if flat.shape[0] == 0:
            raise ValidationError("cannot fit a scaler on no data")
        std = flat.std(axis=0)
        return cls(flat.mean(axis=0), np.where(std > MIN_SCALE, std, 1.0))

    @property
    def dim(self):
        return self.mean.size

    def apply(self, x):
        """(x - mean) / scale over the last axis; differentiable in Tensor inputs."""
        x = as_tensor(x)
        if x.shape[-1] != self.dim:
            raise DimensionError(f"input has {x.shape[-1]} features, scaler was fitted on {self.dim}")
        return mul(sub(x, self.mean), 1.0 / self.scale)

    def to_dict(self):
        return {'mean': self.mean.tolist(), 'scale': self.scale.tolist()}

    @classmethod
    def from_dict(cls, payload):
        try:
            return cls(payload['mean'], payload['scale'])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"scaler is malformed: {exc}")


@dataclass
class ModelBundle:
    """
    Everything needed to run LSTM^ATT (or its last-hidden-state variant):
    encoder, attention scorer, classifier head and how they were trained.
    """
    lstm: LstmParams
    attention: AttentionParams
    head: DenseHead
    class_names: tuple
    pooling: str = 'attention'
    config: dict = field(default_factory=dict)
    seed: int = 0
    train_digest: str = ''
    loss_history: list = field(default_factory=list)
    scaler: FeatureScaler = None

    def __post_init__(self):
        self.class_names = tuple(self.class_names)
        if self.scaler is None:
            self.scaler = FeatureScaler.identity(self.lstm.input_dim)
        if self.scaler.dim != self.lstm.input_dim:
            raise DimensionError(f"scaler covers {self.scaler.dim} features, encoder takes {self.lstm.input_dim}")
        if self.pooling not in POOLINGS:
            raise ValidationError(f"pooling must be one of {POOLINGS}, got '{self.pooling}'")
        self.lstm.validate()
        if self.attention.hidden_dim != self.lstm.hidden_dim:
            raise DimensionError(
                f"attention scorer has {self.attention.hidden_dim} units, encoder has {self.lstm.hidden_dim}"
            )
        if self.head.weight.shape[0] != self.lstm.hidden_dim:
            raise DimensionError(f"head expects {self.head.weight.shape[0]} inputs, encoder has {self.lstm.hidden_dim}")
        if self.head.num_classes != len(self.class_names):
            raise DimensionError(f"head has {self.head.num_classes} outputs for {len(self.class_names)} class names")

    @property
    def input_dim(self):
        return self.lstm.input_dim

    @property
    def hidden_dim(self):
        return self.lstm.hidden_dim

    @property
    def num_classes(self):
        return len(self.class_names)

    @property
    def trained(self):
        return bool(self.loss_history)

    def parameters(self):
        return self.lstm.tensors() + self.attention.tensors() + self.head.tensors()

    def frozen(self):
        """Same parameters as constants (no gradients flow into them)."""
        return ModelBundle.from_dict(self.to_dict(), requires_grad=False)

    def to_dict(self):
        return {
            'format': BUNDLE_FORMAT,
            'version': BUNDLE_VERSION,
            'dims': {'input': self.input_dim, 'hidden': self.hidden_dim, 'classes': self.num_classes},
            'class_names': list(self.class_names),
            'pooling': self.pooling,
            'seed': self.seed,
            'train_digest': self.train_digest,
            'config': self.config,
            'loss_history': list(self.loss_history),
            'scaler': self.scaler.to_dict(),
            'lstm': {
                'weights': {gate: flat_tensor(self.lstm.weights[gate]) for gate in GATES},
                'biases': {gate: flat_tensor(self.lstm.biases[gate]) for gate in GATES},
            },
            'attention': {'weight': flat_tensor(self.attention.weight), 'bias': flat_tensor(self.attention.bias)},
            'head': {'weight': flat_tensor(self.head.weight), 'bias': flat_tensor(self.head.bias)},
        }

    @classmethod
    def from_dict(cls, payload, requires_grad=True):
        check_format(payload, BUNDLE_FORMAT, BUNDLE_VERSION)
        try:
            dims = payload['dims']
            lstm = LstmParams(
                int(dims['input']), int(dims['hidden']),
                {g: unflat_tensor(payload['lstm']['weights'][g], f"lstm.w_{g}", requires_grad) for g in GATES},
                {g: unflat_tensor(payload['lstm']['biases'][g], f"lstm.b_{g}", requires_grad) for g in GATES},
            )
            attention = AttentionParams(
                unflat_tensor(payload['attention']['weight'], "attention.w", requires_grad),
                unflat_tensor(payload['attention']['bias'], "attention.b", requires_grad),
            )
            head = DenseHead(
                unflat_tensor(payload['head']['weight'], "head.w", requires_grad),
                unflat_tensor(payload['head']['bias'], "head.b", requires_grad),
            )
            return cls(
                lstm, attention, head, payload['class_names'],
                pooling=payload['pooling'],
                config=payload.get('config', {}),
                seed=payload.get('seed', 0),
                train_digest=payload.get('train_digest', ''),
                loss_history=list(payload.get('loss_history', [])),
                scaler=FeatureScaler.from_dict(payload['scaler']) if 'scaler' in payload else None,
            )
        except KeyError as exc:
            raise ValidationError(f"model bundle is missing {exc}")

    @property
    def digest(self):
        return digest_json(self.to_dict())

    def save(self, path):
        return write_json(path, self.to_dict())

    @classmethod
    def load(cls, path):
        return cls.from_dict(read_json(path))


def check_format(payload, expected_format, expected_version):
    if not isinstance(payload, dict) or payload.get('format') != expected_format:
        raise ArtifactVersionError(f"not a {expected_format} document")
    if payload.get('version') != expected_version:
        raise ArtifactVersionError(
            f"{expected_format} version {payload.get('version')} is not supported (expected {expected_version})"
        )


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})")
