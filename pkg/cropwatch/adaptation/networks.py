# adaptation/networks.py
"""
Target-to-source mapper, domain discriminator and the losses that pit
them against each other.

The mapper is shared by every time step:

    g(x_t) = x_t W + b + tanh(x_t U) V

W starts as the identity, b and V as zeros, so an untrained mapper hands
target inputs through unchanged.
"""
from dataclasses import dataclass

import numpy as np

from classifier.bundle import ModelBundle
from classifier.training import hidden_states, pool
from core.exceptions import DimensionError, ValidationError
from pipeline.datasets import Dataset, DatasetPixel
from pipeline.sequences import WindowedSequence
from tensors.optim import init_uniform
from tensors.tensor import (
    Tensor, as_tensor, binary_cross_entropy, concat, matmul, mean, mul, no_grad, reshape, sigmoid, sub, tanh,
)

SOURCE, TARGET = 1.0, 0.0


@dataclass
class MapperParams:
    weight: Tensor
    bias: Tensor
    residual_in: Tensor
    residual_out: Tensor

    @classmethod
    def init(cls, input_dim, residual_dim, rng):
        return cls(
            Tensor(np.eye(input_dim), requires_grad=True, name="mapper.w"),
            Tensor(np.zeros(input_dim), requires_grad=True, name="mapper.b"),
            init_uniform((input_dim, residual_dim), input_dim, rng, name="mapper.u"),
            Tensor(np.zeros((residual_dim, input_dim)), requires_grad=True, name="mapper.v"),
        )

    @property
    def input_dim(self):
        return self.weight.shape[0]

    @property
    def residual_dim(self):
        return self.residual_in.shape[1]

    def tensors(self):
        return [self.weight, self.bias, self.residual_in, self.residual_out]

    def validate(self):
        dim, residual = self.input_dim, self.residual_dim
        expected = {
            'weight': (dim, dim), 'bias': (dim,), 'residual_in': (dim, residual), 'residual_out': (residual, dim),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(f"mapper {name} is {list(getattr(self, name).shape)}, expected {list(shape)}")
        return self


@dataclass
class DiscriminatorParams:
    """Logistic layer H -> 1 giving the probability that a context came from the source domain."""
    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, hidden_dim, rng):
        return cls(
            init_uniform((hidden_dim,), hidden_dim, rng, name="disc.w"),
            Tensor(np.zeros(()), requires_grad=True, name="disc.b"),
        )

    @property
    def hidden_dim(self):
        return self.weight.shape[0]

    def tensors(self):
        return [self.weight, self.bias]


def apply_mapper(x, mapper: MapperParams):
    """g over the last axis of ``x`` (D, T x D or N x T x D); differentiable."""
    mapper.validate()
    x = as_tensor(x)
    if x.shape[-1] != mapper.input_dim:
        raise DimensionError(f"input has {x.shape[-1]} features, mapper expects {mapper.input_dim}")
    affine = matmul(x, mapper.weight) + mapper.bias
    return affine + matmul(tanh(matmul(x, mapper.residual_in)), mapper.residual_out)


def map_target(seq, mapper: MapperParams):
    """Mapped copy of a target WindowedSequence (or a plain T x D array)."""
    with no_grad():
        if isinstance(seq, WindowedSequence):
            return WindowedSequence(apply_mapper(seq.steps, mapper).data, seq.window_composites, seq.stride_composites)
        return apply_mapper(np.asarray(seq, dtype=np.float64), mapper).data


def map_dataset(dataset: Dataset, mapper: MapperParams) -> Dataset:
    pixels = [DatasetPixel(p.pixel_id, p.label, map_target(p.windowed, mapper)) for p in dataset.pixels]
    return Dataset(pixels, dataset.class_names, {**dataset.provenance, 'mapped': True})


def domain_score(context, disc: DiscriminatorParams):
    """sigmoid(context . w + b), one probability per context row."""
    context = as_tensor(context)
    if context.shape[-1] != disc.hidden_dim:
        raise DimensionError(f"context has {context.shape[-1]} units, discriminator expects {disc.hidden_dim}")
    logits = matmul(context, reshape(disc.weight, (disc.hidden_dim, 1)))
    return sigmoid(reshape(logits, context.shape[:-1]) + disc.bias)


def consistency_penalty(alpha_orig, alpha_mapped):
    """Mean squared difference of attention weights; differentiable in ``alpha_mapped``."""
    alpha_orig, alpha_mapped = as_tensor(alpha_orig), as_tensor(alpha_mapped)
    if alpha_orig.shape != alpha_mapped.shape:
        raise DimensionError(
            f"attention profiles differ in shape: {list(alpha_orig.shape)} vs {list(alpha_mapped.shape)}"
        )
    diff = sub(alpha_orig, alpha_mapped)
    return mean(mul(diff, diff))


def attention_consistency(alpha_orig, alpha_mapped):
    orig = getattr(alpha_orig, 'weights', alpha_orig)
    mapped = getattr(alpha_mapped, 'weights', alpha_mapped)
    with no_grad():
        return float(consistency_penalty(orig, mapped).data)


def domain_losses(source_ctx, target_ctx, disc: DiscriminatorParams):
    """
    (disc_loss, fool_loss): BCE of source contexts as 1 and target as 0,
    and BCE of target contexts against 1.
    """
    source_ctx, target_ctx = as_tensor(source_ctx), as_tensor(target_ctx)
    if source_ctx.shape[0] == 0 or target_ctx.shape[0] == 0:
        raise ValidationError("adversarial losses need non-empty source and target batches")
    source_scores = domain_score(source_ctx, disc)
    target_scores = domain_score(target_ctx, disc)
    targets = np.concatenate([np.full(source_ctx.shape[0], SOURCE), np.full(target_ctx.shape[0], TARGET)])
    disc_loss = binary_cross_entropy(concat([source_scores, target_scores], axis=0), targets)
    fool_loss = binary_cross_entropy(target_scores, SOURCE)
    return disc_loss, fool_loss


def contexts(model: ModelBundle, x):
    """(context rows, attention weights) of the frozen source model for an N x T x D batch."""
    return pool(model, hidden_states(model, x))


def adversarial_losses(source_batch, target_batch, model: ModelBundle, mapper, disc, lambda_att=1.0):
    """
    (disc_loss, adapt_loss) for one pair of batches.

    Source contexts come from the raw source inputs, target contexts from
    the mapped target inputs. adapt_loss adds ``lambda_att`` times the
    attention shift between each target pixel and its mapped version.
    """
    source_batch = np.asarray(source_batch, dtype=np.float64)
    target_batch = np.asarray(target_batch, dtype=np.float64)
    if source_batch.shape[0] == 0 or target_batch.shape[0] == 0:
        raise ValidationError("adversarial losses need non-empty source and target batches")
    if source_batch.shape[1:] != target_batch.shape[1:]:
        raise DimensionError(
            f"source batch is {list(source_batch.shape[1:])} per pixel, target is {list(target_batch.shape[1:])}"
        )
    with no_grad():
        _, alpha_orig = contexts(model, target_batch)
    source_ctx, _ = contexts(model, source_batch)
    target_ctx, alpha_mapped = contexts(model, apply_mapper(target_batch, mapper))
    disc_loss, fool_loss = domain_losses(source_ctx, target_ctx, disc)
    alpha_orig = alpha_orig.data if isinstance(alpha_orig, Tensor) else alpha_orig
    adapt_loss = fool_loss + mul(consistency_penalty(alpha_orig, alpha_mapped), lambda_att)
    return disc_loss, adapt_loss
