# classifier/attention.py
from dataclasses import dataclass

import numpy as np

from core.exceptions import DimensionError, ValidationError
from tensors.optim import init_uniform
from tensors.tensor import Tensor, as_tensor, matmul, mul, reshape, softmax, sum as tsum


@dataclass
class AttentionParams:
    """Self-scored attention: e_t = w . h_t + b."""
    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, hidden_dim, rng):
        return cls(
            init_uniform((hidden_dim,), hidden_dim, rng, name="attention.w"),
            Tensor(np.zeros(()), requires_grad=True, name="attention.b"),
        )

    @property
    def hidden_dim(self):
        return self.weight.shape[0]

    def tensors(self):
        return [self.weight, self.bias]


@dataclass
class DenseHead:
    """Fully connected classifier layer, H -> C."""
    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, hidden_dim, num_classes, rng):
        return cls(
            init_uniform((hidden_dim, num_classes), hidden_dim, rng, name="head.w"),
            init_uniform((num_classes,), hidden_dim, rng, name="head.b"),
        )

    @property
    def num_classes(self):
        return self.weight.shape[1]

    def tensors(self):
        return [self.weight, self.bias]


@dataclass(frozen=True)
class AttentionProfile:
    weights: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.ndim != 1 or weights.size == 0:
            raise ValidationError("attention profile must be a non-empty vector")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValidationError("attention weights must be non-negative and sum to 1")
        object.__setattr__(self, 'weights', weights)

    def __len__(self):
        return self.weights.size


@dataclass(frozen=True)
class PeriodInterval:
    first: int
    last: int
    mean_weight: float
    mass: float

    @property
    def steps(self):
        return self.last - self.first + 1


def attention_scores(hiddens, params: AttentionParams):
    hiddens = as_tensor(hiddens)
    if hiddens.shape[-1] != params.hidden_dim:
        raise DimensionError(f"hidden states have {hiddens.shape[-1]} units, attention expects {params.hidden_dim}")
    scores = matmul(hiddens, reshape(params.weight, (params.hidden_dim, 1)))
    return reshape(scores, hiddens.shape[:-1]) + params.bias


def attention_weights(hiddens, params: AttentionParams):
    """Softmax of per-step scores over the time axis (differentiable)."""
    return softmax(attention_scores(hiddens, params), axis=-1)


def attend(hiddens, params: AttentionParams) -> AttentionProfile:
    hiddens = as_tensor(hiddens)
    if hiddens.ndim != 2 or hiddens.shape[0] < 1:
        raise DimensionError(f"attend expects a T x H matrix with T >= 1, got {list(hiddens.shape)}")
    return AttentionProfile(attention_weights(hiddens, params).data)


def weighted_sum(hiddens, alpha):
    """sum_t alpha_t h_t over the time axis; works batched."""
    hiddens, alpha = as_tensor(hiddens), as_tensor(alpha)
    return tsum(mul(hiddens, reshape(alpha, alpha.shape + (1,))), axis=-2)


def aggregate(hiddens, profile):
    hiddens = as_tensor(hiddens)
    weights = profile.weights if isinstance(profile, AttentionProfile) else profile
    if as_tensor(weights).shape[-1] != hiddens.shape[-2]:
        raise DimensionError(f"{as_tensor(weights).shape[-1]} attention weights for {hiddens.shape[-2]} hidden states")
    return weighted_sum(hiddens, weights)


def classify(context, head: DenseHead):
    """softmax(context . W + b); a probability vector (or one per row)."""
    context = as_tensor(context)
    if context.shape[-1] != head.weight.shape[0]:
        raise DimensionError(f"context has {context.shape[-1]} units, head expects {head.weight.shape[0]}")
    return softmax(matmul(context, head.weight) + head.bias, axis=-1)


def attention_intervals(mean_profile):
    """
    Maximal runs of steps whose weight is above the uniform level 1/T,
    largest total mass first.
    """
    weights = np.asarray(mean_profile.weights if isinstance(mean_profile, AttentionProfile) else mean_profile)
    uniform = 1.0 / weights.size
    above = weights > uniform * (1.0 + 1e-9)
    intervals = []
    start = None
    for index, flag in enumerate(list(above) + [False]):
        if flag and start is None:
            start = index
        elif not flag and start is not None:
            chunk = weights[start:index]
            intervals.append(PeriodInterval(start, index - 1, float(chunk.mean()), float(chunk.sum())))
            start = None
    return sorted(intervals, key=lambda interval: (-interval.mass, interval.first))
