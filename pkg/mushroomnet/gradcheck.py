"""
Central finite-difference gradient checking.
"""

import numpy as np

from mushroomnet.tensor import Tensor, no_grad


def relative_error(analytic, numeric):
    """Largest absolute deviation scaled by the largest gradient magnitude"""
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0), 1e-12)
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / scale)


def numerical_gradient(fn, inputs, target, projection, step=1e-5):
    """d(sum(fn(*inputs) * projection)) / d(target) by central differences.

    The step for each entry is step * max(1, |x|).
    """
    flat = target.data.reshape(-1)
    numeric = np.zeros(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        original = flat[i]
        h = step * max(1.0, abs(float(original)))
        flat[i] = original + h
        with no_grad():
            plus = float(np.sum(fn(*inputs).data * projection))
        flat[i] = original - h
        with no_grad():
            minus = float(np.sum(fn(*inputs).data * projection))
        flat[i] = original
        numeric[i] = (plus - minus) / (2.0 * h)
    return numeric.reshape(target.shape)


def gradcheck(fn, inputs, seed=0, step=1e-5):
    """Compare backward against central differences for every input that requires grad.

    `fn` maps the input tensors to a tensor of any shape; it is reduced to a scalar
    through a fixed random projection. Returns the worst relative error.
    """
    rng = np.random.default_rng(seed)
    out = fn(*inputs)
    projection = rng.standard_normal(out.shape)
    for tensor in inputs:
        tensor.zero_grad()
    (out * Tensor(projection, dtype=out.dtype)).sum().backward()

    worst = 0.0
    for tensor in inputs:
        if not tensor.requires_grad:
            continue
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        numeric = numerical_gradient(fn, inputs, tensor, projection, step=step)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
