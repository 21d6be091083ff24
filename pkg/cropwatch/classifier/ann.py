# classifier/ann.py
from dataclasses import asdict, dataclass, field

import numpy as np

from core.exceptions import DimensionError, ValidationError
from core.rng import make_rng
from pipeline.datasets import Dataset
from tensors.optim import init_uniform
from tensors.tensor import Tensor, cross_entropy, matmul, no_grad, softmax, tanh

from .bundle import FeatureScaler
from .training import check_trainable, fit


@dataclass(frozen=True)
class AnnConfig:
    hidden_dim: int = 32
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    require_two_classes: bool = True

    def validate(self):
        if min(self.hidden_dim, self.epochs, self.batch_size) < 1:
            raise ValidationError("hidden_dim, epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class AnnModel:
    """Single hidden layer (tanh) over the flattened, standardised T*D sequence."""
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    class_names: tuple
    input_shape: tuple
    seed: int = 0
    loss_history: list = field(default_factory=list)
    scaler: FeatureScaler = None

    def tensors(self):
        return [self.w1, self.b1, self.w2, self.b2]

    @property
    def trained(self):
        return bool(self.loss_history)


def _flatten(features, scaler: FeatureScaler = None):
    if scaler is not None:
        features = scaler.apply(features).data
    return features.reshape(features.shape[0], -1)


def ann_forward(model: AnnModel, flat):
    hidden = tanh(matmul(flat, model.w1) + model.b1)
    return softmax(matmul(hidden, model.w2) + model.b2, axis=-1)


def ann_train(train_set: Dataset, config: AnnConfig = None, seed=0) -> AnnModel:
    config = (config or AnnConfig()).validate()
    check_trainable(train_set, config.require_two_classes)
    scaler = FeatureScaler.fit(train_set.features)
    flat = _flatten(train_set.features, scaler)
    rng = make_rng(seed, 'ann-init')
    inputs = flat.shape[1]
    classes = len(train_set.class_names)
    model = AnnModel(
        init_uniform((inputs, config.hidden_dim), inputs, rng, name="ann.w1"),
        init_uniform((config.hidden_dim,), inputs, rng, name="ann.b1"),
        init_uniform((config.hidden_dim, classes), config.hidden_dim, rng, name="ann.w2"),
        init_uniform((classes,), config.hidden_dim, rng, name="ann.b2"),
        train_set.class_names, train_set.shape, seed, scaler=scaler,
    )

    def loss_fn(x, y):
        return cross_entropy(ann_forward(model, x), y)

    _, history = fit(
        model.tensors(), loss_fn, flat, train_set.labels,
        epochs=config.epochs, batch_size=config.batch_size, learning_rate=config.learning_rate,
        clip_norm=config.clip_norm, seed=seed, label="ann",
    )
    model.loss_history = history
    return model


def ann_predict(model: AnnModel, data):
    """N x C probabilities; ``data`` is a Dataset or an N x T x D array."""
    features = data.features if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    if tuple(features.shape[1:]) != tuple(model.input_shape):
        raise DimensionError(f"ANN was trained on {list(model.input_shape)} sequences, got {list(features.shape[1:])}")
    with no_grad():
        return ann_forward(model, _flatten(features, model.scaler)).data
