# adaptation/training.py
from dataclasses import asdict, dataclass, field

import numpy as np
import structlog

from classifier.bundle import ModelBundle, check_format, flat_tensor, read_json, unflat_tensor
from classifier.training import as_features, attention_profiles, predict_proba, require_trained
from core.artifacts import write_json
from core.digests import digest_json
from core.exceptions import DigestMismatchError, ValidationError
from core.rng import make_rng
from pipeline.datasets import Dataset
from tensors.optim import Adam
from tensors.tensor import Tape, backward, clip_grad_norm, no_grad, zero_grad

from .networks import DiscriminatorParams, MapperParams, adversarial_losses, apply_mapper

logger = structlog.get_logger("cropwatch.adaptation")

ADAPTED_FORMAT = 'cropwatch.adapted'
ADAPTED_VERSION = 1


@dataclass(frozen=True)
class DomainPair:
    """Labeled source domain and a target domain whose labels are never read."""
    source: Dataset
    target: Dataset

    def __post_init__(self):
        if len(self.source) == 0 or len(self.target) == 0:
            raise ValidationError("both domains need at least one pixel")
        if tuple(self.source.shape) != tuple(self.target.shape):
            raise ValidationError(
                f"layout mismatch: source pixels are {list(self.source.shape)}, target {list(self.target.shape)}"
            )
        if self.source.class_names != self.target.class_names:
            raise ValidationError(
                f"layout mismatch: class names {list(self.source.class_names)} vs {list(self.target.class_names)}"
            )


@dataclass(frozen=True)
class AdaptConfig:
    epochs: int = 20
    batch_size: int = 32
    mapper_learning_rate: float = 1e-3
    disc_learning_rate: float = 1e-3
    disc_steps: int = 1
    lambda_att: float = 1.0
    residual_dim: int = 8
    clip_norm: float = 5.0

    def validate(self):
        if min(self.epochs, self.batch_size, self.disc_steps, self.residual_dim) < 1:
            raise ValidationError("epochs, batch_size, disc_steps and residual_dim must be positive")
        if self.mapper_learning_rate <= 0 or self.disc_learning_rate <= 0:
            raise ValidationError("learning rates must be positive")
        if self.lambda_att < 0:
            raise ValidationError("lambda_att must be non-negative")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class AdaptedBundle:
    """Frozen source model plus the trained mapper and discriminator."""
    model: ModelBundle
    mapper: MapperParams
    disc: DiscriminatorParams
    config: dict = field(default_factory=dict)
    seed: int = 0
    source_digest: str = ''
    target_digest: str = ''
    disc_history: list = field(default_factory=list)
    adapt_history: list = field(default_factory=list)

    @property
    def trained(self):
        return self.model.trained

    def to_dict(self):
        return {
            'format': ADAPTED_FORMAT,
            'version': ADAPTED_VERSION,
            'source_digest': self.source_digest,
            'target_digest': self.target_digest,
            'seed': self.seed,
            'config': self.config,
            'history': {'disc_loss': list(self.disc_history), 'adapt_loss': list(self.adapt_history)},
            'mapper': {
                'weight': flat_tensor(self.mapper.weight),
                'bias': flat_tensor(self.mapper.bias),
                'residual_in': flat_tensor(self.mapper.residual_in),
                'residual_out': flat_tensor(self.mapper.residual_out),
            },
            'discriminator': {'weight': flat_tensor(self.disc.weight), 'bias': flat_tensor(self.disc.bias)},
        }

    @classmethod
    def from_dict(cls, payload, model: ModelBundle):
        check_format(payload, ADAPTED_FORMAT, ADAPTED_VERSION)
        if payload.get('source_digest') != model.digest:
            raise DigestMismatchError(
                f"adapted bundle was built on model {payload.get('source_digest')}, loaded model is {model.digest}"
            )
        try:
            mapper = MapperParams(*(
                unflat_tensor(payload['mapper'][name], f"mapper.{name}", requires_grad=False)
                for name in ('weight', 'bias', 'residual_in', 'residual_out')
            )).validate()
            disc = DiscriminatorParams(
                unflat_tensor(payload['discriminator']['weight'], "disc.w", requires_grad=False),
                unflat_tensor(payload['discriminator']['bias'], "disc.b", requires_grad=False),
            )
            history = payload.get('history', {})
            return cls(
                model.frozen(), mapper, disc,
                config=payload.get('config', {}),
                seed=payload.get('seed', 0),
                source_digest=payload['source_digest'],
                target_digest=payload.get('target_digest', ''),
                disc_history=list(history.get('disc_loss', [])),
                adapt_history=list(history.get('adapt_loss', [])),
            )
        except KeyError as exc:
            raise ValidationError(f"adapted bundle is missing {exc}")

    @property
    def digest(self):
        return digest_json(self.to_dict())

    def save(self, path):
        return write_json(path, self.to_dict())


def load_adapted(path, model: ModelBundle) -> AdaptedBundle:
    return AdaptedBundle.from_dict(read_json(path), model)


def _step(params, optimizer, loss, tape, clip_norm):
    grads = backward(tape, loss, params)
    grads, _ = clip_grad_norm(grads, clip_norm)
    optimizer.step(grads)


def train_da(pair: DomainPair, source_model: ModelBundle, config: AdaptConfig = None, seed=0) -> AdaptedBundle:
    """
    Alternate ``disc_steps`` discriminator updates with one mapper update
    per batch. Encoder, attention and head stay frozen; the bundle passed
    in is never modified.
    """
    config = (config or AdaptConfig()).validate()
    require_trained(source_model)
    if pair.source.class_names != source_model.class_names:
        raise ValidationError("source model and domains disagree on class names")
    if pair.source.shape[1] != source_model.input_dim:
        raise ValidationError(
            f"layout mismatch: model takes {source_model.input_dim} features per step, domains have {pair.source.shape[1]}"
        )
    model = source_model.frozen()
    rng = make_rng(seed, 'adapt-init')
    mapper = MapperParams.init(model.input_dim, config.residual_dim, rng)
    disc = DiscriminatorParams.init(model.hidden_dim, rng)
    mapper_params, disc_params = mapper.tensors(), disc.tensors()
    mapper_opt = Adam(mapper_params, learning_rate=config.mapper_learning_rate)
    disc_opt = Adam(disc_params, learning_rate=config.disc_learning_rate)

    source, target = pair.source.features, pair.target.features
    disc_history, adapt_history = [], []
    logger.info(
        "Adapting to target domain",
        source_pixels=source.shape[0], target_pixels=target.shape[0], lambda_att=config.lambda_att,
    )
    for epoch in range(config.epochs):
        source_order = make_rng(seed, 'adapt-source', epoch).permutation(source.shape[0])
        target_order = make_rng(seed, 'adapt-target', epoch).permutation(target.shape[0])
        disc_total = adapt_total = 0.0
        for start in range(0, target.shape[0], config.batch_size):
            target_idx = target_order[start:start + config.batch_size]
            source_idx = source_order[np.arange(start, start + target_idx.size) % source.shape[0]]
            for _ in range(config.disc_steps):
                zero_grad(disc_params + mapper_params)
                with Tape() as tape:
                    disc_loss, _ = adversarial_losses(
                        source[source_idx], target[target_idx], model, mapper, disc, config.lambda_att,
                    )
                _step(disc_params, disc_opt, disc_loss, tape, config.clip_norm)
            zero_grad(disc_params + mapper_params)
            with Tape() as tape:
                _, adapt_loss = adversarial_losses(
                    source[source_idx], target[target_idx], model, mapper, disc, config.lambda_att,
                )
            _step(mapper_params, mapper_opt, adapt_loss, tape, config.clip_norm)
            disc_total += float(disc_loss.data) * target_idx.size
            adapt_total += float(adapt_loss.data) * target_idx.size
        disc_history.append(disc_total / target.shape[0])
        adapt_history.append(adapt_total / target.shape[0])
        logger.info(
            f"Adaptation epoch {epoch + 1}/{config.epochs} done",
            disc_loss=round(disc_history[-1], 6), adapt_loss=round(adapt_history[-1], 6),
        )
    return AdaptedBundle(
        model, mapper, disc,
        config=config.to_dict(), seed=seed,
        source_digest=source_model.digest, target_digest=pair.target.digest,
        disc_history=disc_history, adapt_history=adapt_history,
    )


def _mapped_features(adapted: AdaptedBundle, data):
    with no_grad():
        return apply_mapper(as_features(data), adapted.mapper).data


def adapted_predict_proba(adapted: AdaptedBundle, data):
    """Source model probabilities for target pixels passed through the mapper."""
    return predict_proba(adapted.model, _mapped_features(adapted, data))


def adapted_attention_profiles(adapted: AdaptedBundle, data):
    return attention_profiles(adapted.model, _mapped_features(adapted, data))
