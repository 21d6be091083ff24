# classifier/lstm.py
from dataclasses import dataclass

import numpy as np

from core.exceptions import DimensionError
from pipeline.sequences import WindowedSequence
from tensors.optim import init_uniform
from tensors.tensor import Tensor, as_tensor, concat, matmul, sigmoid, stack, take, tanh, transpose

GATES = ('input', 'forget', 'output', 'candidate')


@dataclass
class LstmParams:
    """
    One LSTM layer. Each gate has its own weight matrix of shape
    H x (D + H) acting on ``[x_t, h_prev]`` and a length-H bias.
    """
    input_dim: int
    hidden_dim: int
    weights: dict
    biases: dict

    @classmethod
    def init(cls, input_dim, hidden_dim, rng, forget_bias=1.0):
        fan_in = input_dim + hidden_dim
        weights = {
            gate: init_uniform((hidden_dim, fan_in), fan_in, rng, name=f"lstm.w_{gate}") for gate in GATES
        }
        biases = {gate: init_uniform((hidden_dim,), fan_in, rng, name=f"lstm.b_{gate}") for gate in GATES}
        biases['forget'] = Tensor(np.full(hidden_dim, forget_bias), requires_grad=True, name="lstm.b_forget")
        return cls(input_dim, hidden_dim, weights, biases)

    @classmethod
    def zeros(cls, input_dim, hidden_dim):
        fan_in = input_dim + hidden_dim
        return cls(
            input_dim, hidden_dim,
            {gate: Tensor(np.zeros((hidden_dim, fan_in)), requires_grad=True) for gate in GATES},
            {gate: Tensor(np.zeros(hidden_dim), requires_grad=True) for gate in GATES},
        )

    def tensors(self):
        return [self.weights[g] for g in GATES] + [self.biases[g] for g in GATES]

    def validate(self):
        expected = (self.hidden_dim, self.input_dim + self.hidden_dim)
        for gate in GATES:
            if self.weights[gate].shape != expected:
                raise DimensionError(
                    f"LSTM {gate}-gate weight is {list(self.weights[gate].shape)}, expected {list(expected)}"
                )
            if self.biases[gate].shape != (self.hidden_dim,):
                raise DimensionError(
                    f"LSTM {gate}-gate bias is {list(self.biases[gate].shape)}, expected [{self.hidden_dim}]"
                )
        return self

    def packed(self):
        """Gate weights as one (D + H) x 4H matrix and a 4H bias, in GATES order."""
        weight = concat([transpose(self.weights[g]) for g in GATES], axis=1)
        bias = concat([self.biases[g] for g in GATES], axis=0)
        return weight, bias


def _gates(x_t, h_prev, c_prev, weight, bias, hidden):
    z = matmul(concat([x_t, h_prev], axis=-1), weight) + bias
    i = sigmoid(take(z, (Ellipsis, slice(0, hidden))))
    f = sigmoid(take(z, (Ellipsis, slice(hidden, 2 * hidden))))
    o = sigmoid(take(z, (Ellipsis, slice(2 * hidden, 3 * hidden))))
    g = tanh(take(z, (Ellipsis, slice(3 * hidden, 4 * hidden))))
    c_t = f * c_prev + i * g
    h_t = o * tanh(c_t)
    return h_t, c_t


def lstm_step(x_t, h_prev, c_prev, params: LstmParams):
    """
    i, f, o = sigmoid(W_* [x, h] + b_*); g = tanh(W_c [x, h] + b_c)
    c_t = f * c_prev + i * g; h_t = o * tanh(c_t)

    Works on single vectors or on a leading batch axis.
    """
    params.validate()
    x_t, h_prev, c_prev = as_tensor(x_t), as_tensor(h_prev), as_tensor(c_prev)
    if x_t.shape[-1] != params.input_dim:
        raise DimensionError(f"input has {x_t.shape[-1]} features, LSTM input weights expect {params.input_dim}")
    if h_prev.shape[-1] != params.hidden_dim or c_prev.shape[-1] != params.hidden_dim:
        raise DimensionError(
            f"state sizes {h_prev.shape[-1]}/{c_prev.shape[-1]} do not match hidden_dim {params.hidden_dim}"
        )
    weight, bias = params.packed()
    return _gates(x_t, h_prev, c_prev, weight, bias, params.hidden_dim)


def _steps(seq):
    if isinstance(seq, WindowedSequence):
        return seq.steps
    return seq


def encode(seq, params: LstmParams):
    """
    Hidden states for every step from a zero initial state.

    ``seq`` is a WindowedSequence, a T x D array, or an N x T x D batch;
    the result is T x H (or N x T x H).
    """
    params.validate()
    x = as_tensor(_steps(seq))
    if x.ndim not in (2, 3):
        raise DimensionError(f"expected T x D or N x T x D input, got {list(x.shape)}")
    if x.shape[-1] != params.input_dim:
        raise DimensionError(f"input has {x.shape[-1]} features, LSTM input weights expect {params.input_dim}")
    length = x.shape[-2]
    batch = x.shape[:-2]
    h = Tensor._wrap(np.zeros(batch + (params.hidden_dim,)))
    c = Tensor._wrap(np.zeros(batch + (params.hidden_dim,)))
    weight, bias = params.packed()
    hiddens = []
    for t in range(length):
        h, c = _gates(take(x, (Ellipsis, t, slice(None))), h, c, weight, bias, params.hidden_dim)
        hiddens.append(h)
    return stack(hiddens, axis=-2)
