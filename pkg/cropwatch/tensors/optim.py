# tensors/optim.py
from dataclasses import dataclass, field, replace

import numpy as np

from core.exceptions import DimensionError

from .tensor import Tensor


@dataclass(frozen=True)
class OptimizerState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moments: tuple = field(default=(), repr=False)
    second_moments: tuple = field(default=(), repr=False)

    @classmethod
    def for_shapes(cls, shapes, **hyper):
        zeros = tuple(np.zeros(shape) for shape in shapes)
        return cls(first_moments=zeros, second_moments=tuple(z.copy() for z in zeros), **hyper)


def optimizer_step(params, grads, state):
    """
    One Adam update with bias correction.

    Pure: returns ``(new_params, new_state)`` and leaves the inputs alone.
    """
    if not (len(params) == len(grads) == len(state.first_moments) == len(state.second_moments)):
        raise DimensionError(
            f"{len(params)} params, {len(grads)} grads, {len(state.first_moments)} moment tensors"
        )
    step = state.step + 1
    correction1 = 1.0 - state.beta1 ** step
    correction2 = 1.0 - state.beta2 ** step
    new_params, new_m, new_v = [], [], []
    for index, (param, grad, m, v) in enumerate(zip(params, grads, state.first_moments, state.second_moments)):
        param = np.asarray(param, dtype=np.float64)
        grad = np.asarray(grad, dtype=np.float64)
        if not (param.shape == grad.shape == m.shape == v.shape):
            raise DimensionError(
                f"parameter {index}: param {list(param.shape)}, grad {list(grad.shape)}, "
                f"moments {list(m.shape)}"
            )
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        new_params.append(param - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon))
        new_m.append(m)
        new_v.append(v)
    return new_params, replace(state, step=step, first_moments=tuple(new_m), second_moments=tuple(new_v))


class Adam:
    """Stateful wrapper updating a list of parameter tensors in place."""

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = list(params)
        self.state = OptimizerState.for_shapes(
            [p.shape for p in self.params],
            learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon,
        )

    def step(self, grads):
        updated, self.state = optimizer_step([p.data for p in self.params], grads, self.state)
        for param, value in zip(self.params, updated):
            param.data = value


def init_uniform(shape, fan_in, rng, name=None):
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], as a trainable leaf."""
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)
