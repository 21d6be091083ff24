# tensors/gradcheck.py
import numpy as np

from .tensor import Tape, backward, no_grad, zero_grad


def numeric_gradient(loss_fn, params, h=1e-5):
    """Central differences (f(t+h) - f(t-h)) / 2h for every parameter entry."""
    grads = []
    with no_grad():
        for param in params:
            grad = np.zeros_like(param.data)
            flat = param.data.reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + h
                plus = float(loss_fn().data)
                flat[i] = original - h
                minus = float(loss_fn().data)
                flat[i] = original
                grad.reshape(-1)[i] = (plus - minus) / (2.0 * h)
            grads.append(grad)
    return grads


def analytic_gradient(loss_fn, params):
    zero_grad(params)
    with Tape() as tape:
        loss = loss_fn()
    return backward(tape, loss, params)


def max_relative_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.abs(a) + np.abs(n), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
