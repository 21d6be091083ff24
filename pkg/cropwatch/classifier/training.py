# classifier/training.py
from dataclasses import asdict, dataclass

import numpy as np
import structlog

from core.exceptions import StateError, ValidationError
from core.rng import make_rng
from pipeline.datasets import Dataset
from pipeline.sequences import WindowedSequence
from tensors.optim import Adam
from tensors.tensor import Tape, Tensor, backward, clip_grad_norm, cross_entropy, no_grad, take, zero_grad

from .attention import AttentionParams, DenseHead, attention_intervals, attention_weights, classify, weighted_sum
from .bundle import POOLINGS, FeatureScaler, ModelBundle
from .lstm import LstmParams, encode

logger = structlog.get_logger("cropwatch.training")

INFERENCE_CHUNK = 256


@dataclass(frozen=True)
class TrainConfig:
    hidden_dim: int = 32
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    pooling: str = 'attention'
    forget_bias: float = 1.0
    require_two_classes: bool = True

    def validate(self):
        if self.pooling not in POOLINGS:
            raise ValidationError(f"pooling must be one of {POOLINGS}, got '{self.pooling}'")
        if min(self.hidden_dim, self.epochs, self.batch_size) < 1:
            raise ValidationError("hidden_dim, epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        return self

    def to_dict(self):
        return asdict(self)


def check_trainable(train_set: Dataset, require_two_classes=True):
    if len(train_set) == 0:
        raise ValidationError("training set is empty")
    counts = np.bincount(train_set.labels, minlength=len(train_set.class_names))
    present = counts[counts > 0]
    if require_two_classes:
        if present.size < 2:
            raise ValidationError("training set holds a single class; at least two are required")
        if present.min() < 2:
            raise ValidationError(f"every class needs at least 2 pixels, got counts {counts.tolist()}")


def fit(params, loss_fn, features, labels, *, epochs, batch_size, learning_rate, clip_norm, seed, label="model"):
    """
    Mini-batch Adam over ``features``; ``loss_fn(x, y)`` builds the batch
    loss on the active tape. Returns (initial loss, per-epoch mean losses).
    """
    optimizer = Adam(params, learning_rate=learning_rate)
    with no_grad():
        initial = float(loss_fn(features, labels).data)
    history = []
    count = features.shape[0]
    for epoch in range(epochs):
        order = make_rng(seed, 'epoch', epoch).permutation(count)
        total = 0.0
        for start in range(0, count, batch_size):
            batch = order[start:start + batch_size]
            zero_grad(params)
            with Tape() as tape:
                loss = loss_fn(features[batch], labels[batch])
            grads = backward(tape, loss, params)
            grads, _ = clip_grad_norm(grads, clip_norm)
            optimizer.step(grads)
            total += float(loss.data) * batch.size
        history.append(total / count)
        logger.info(f"Epoch {epoch + 1}/{epochs} done", model=label, loss=round(history[-1], 6))
    return initial, history


# -------------------------------------------------------------------
# LSTM^ATT FORWARD
# -------------------------------------------------------------------

def pool(model: ModelBundle, hiddens):
    """Context vector(s) and attention weights for hidden states (..., T, H)."""
    if model.pooling == 'last':
        length = hiddens.shape[-2]
        alpha = np.zeros(hiddens.shape[:-1])
        alpha[..., length - 1] = 1.0
        return take(hiddens, (Ellipsis, length - 1, slice(None))), alpha
    alpha = attention_weights(hiddens, model.attention)
    return weighted_sum(hiddens, alpha), alpha


def hidden_states(model: ModelBundle, features):
    """Encoder states for raw (unscaled) inputs; the bundle's scaler is applied first."""
    return encode(model.scaler.apply(features), model.lstm)


def forward(model: ModelBundle, features):
    """(probabilities, attention weights) for a T x D sequence or an N x T x D batch."""
    hiddens = hidden_states(model, features)
    context, alpha = pool(model, hiddens)
    return classify(context, model.head), alpha


def init_model(input_dim, class_names, config: TrainConfig, seed, scaler=None):
    rng = make_rng(seed, 'init')
    lstm = LstmParams.init(input_dim, config.hidden_dim, rng, forget_bias=config.forget_bias)
    attention = AttentionParams.init(config.hidden_dim, rng)
    head = DenseHead.init(config.hidden_dim, len(class_names), rng)
    return ModelBundle(
        lstm, attention, head, class_names, pooling=config.pooling, config=config.to_dict(), seed=seed, scaler=scaler,
    )


def train(train_set: Dataset, config: TrainConfig = None, seed=0) -> ModelBundle:
    config = (config or TrainConfig()).validate()
    check_trainable(train_set, config.require_two_classes)
    scaler = FeatureScaler.fit(train_set.features)
    model = init_model(train_set.shape[1], train_set.class_names, config, seed, scaler)
    params = model.parameters()

    def loss_fn(x, y):
        probs, _ = forward(model, x)
        return cross_entropy(probs, y)

    logger.info(
        "Training LSTM classifier",
        pooling=config.pooling, pixels=len(train_set), steps=train_set.shape[0], hidden=config.hidden_dim,
    )
    initial, history = fit(
        params, loss_fn, train_set.features, train_set.labels,
        epochs=config.epochs, batch_size=config.batch_size, learning_rate=config.learning_rate,
        clip_norm=config.clip_norm, seed=seed, label=f"lstm/{config.pooling}",
    )
    model.config = {**config.to_dict(), 'initial_loss': initial}
    model.loss_history = history
    model.train_digest = train_set.digest
    return model


# -------------------------------------------------------------------
# INFERENCE
# -------------------------------------------------------------------

def as_features(data):
    if isinstance(data, Dataset):
        return data.features
    if isinstance(data, WindowedSequence):
        return data.steps[None]
    return np.asarray(data, dtype=np.float64)


def require_trained(model):
    if not getattr(model, 'trained', False):
        raise StateError("model has not been trained")


def _batched(model, data, pick):
    features = as_features(data)
    chunks = []
    with no_grad():
        for start in range(0, features.shape[0], INFERENCE_CHUNK):
            probs, alpha = forward(model, features[start:start + INFERENCE_CHUNK])
            chunks.append(pick(probs, alpha))
    if not chunks:
        return np.zeros((0, model.num_classes))
    return np.concatenate(chunks, axis=0)


def predict_proba(model: ModelBundle, data):
    """N x C class probabilities for a Dataset or an N x T x D array."""
    return _batched(model, data, lambda probs, alpha: probs.data)


def predict(model: ModelBundle, data):
    return np.argmax(predict_proba(model, data), axis=1)


def attention_profiles(model: ModelBundle, data):
    """N x T attention weights (one-hot on the last step for 'last' pooling)."""
    return _batched(model, data, lambda probs, alpha: alpha.data if isinstance(alpha, Tensor) else alpha)


def mean_attention(model: ModelBundle, data):
    profiles = attention_profiles(model, data)
    if profiles.shape[0] == 0:
        raise ValidationError("mean attention of an empty dataset")
    return profiles.mean(axis=0)


def classify_sequence(model: ModelBundle, seq):
    """Class distribution for one sequence, from the full-sequence hidden states."""
    steps = seq.steps if isinstance(seq, WindowedSequence) else np.asarray(seq, dtype=np.float64)
    with no_grad():
        hiddens = hidden_states(model, steps)
        context, _ = pool(model, hiddens)
        return classify(context, model.head).data


def discriminative_period(model: ModelBundle, dataset: Dataset):
    """Above-uniform attention intervals of the dataset's mean profile, by mass."""
    return attention_intervals(mean_attention(model, dataset))


def estimate_period_shift(reference, profile, max_shift=8):
    """
    Integer lag (in steps) by which ``profile`` trails ``reference``:
    the lag maximising sum_t reference[t] * profile[t + lag]. Ties go to
    the smallest absolute lag.
    """
    reference = np.asarray(reference, dtype=np.float64)
    profile = np.asarray(profile, dtype=np.float64)
    if reference.shape != profile.shape or reference.ndim != 1:
        raise ValidationError("profiles must be vectors of equal length")
    length = reference.size
    best_lag, best_score = 0, -np.inf
    for lag in sorted(range(-max_shift, max_shift + 1), key=lambda s: (abs(s), s)):
        if lag >= 0:
            score = float(np.dot(reference[:length - lag], profile[lag:]))
        else:
            score = float(np.dot(reference[-lag:], profile[:length + lag]))
        if score > best_score:
            best_lag, best_score = lag, score
    return best_lag
