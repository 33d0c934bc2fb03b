"""
Dense tensor with reverse-mode differentiation.

A Tensor wraps a contiguous numpy array. Every differentiable operation is a
`Function` subclass: `forward` works on raw arrays, `backward` maps the
gradient of the output to one gradient per input. `Function.apply` wires the
result into the graph when any input requires a gradient.
"""

import logging
import threading
from contextlib import contextmanager

import numpy as np

from mushroomnet.errors import GraphError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

_default_dtype = np.dtype(np.float32)
_grad_state = threading.local()


def set_default_dtype(dtype):
    """Set the precision used when a Tensor is built from non-float data"""
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype}; use float32 or float64")
    _default_dtype = dtype


def get_default_dtype():
    return _default_dtype


def is_grad_enabled():
    return getattr(_grad_state, 'enabled', True)


@contextmanager
def no_grad():
    """Disable graph recording on the current thread"""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


def check_finite(array, where):
    """Abort with a diagnostic when NaN or Inf shows up"""
    if not np.all(np.isfinite(array)):
        bad = int(np.size(array) - np.count_nonzero(np.isfinite(array)))
        raise NumericalError(f"{bad} non-finite value(s) in {where}")


def unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to `shape`"""
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Function:
    """Base class for differentiable operations"""

    def __init__(self, *parents):
        self.parents = parents
        self.saved = ()

    def save(self, *values):
        self.saved = values

    def forward(self, *arrays, **kwargs):
        raise NotImplementedError(f"{type(self).__name__} has no forward")

    def backward(self, grad):
        raise NotImplementedError(f"{type(self).__name__} has no backward")

    @classmethod
    def apply(cls, *tensors, **kwargs):
        fn = cls(*tensors)
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        check_finite(out, f"{cls.__name__} forward")
        track = is_grad_enabled() and any(t.requires_grad for t in tensors)
        if not track:
            fn.saved = ()
        return Tensor(out, requires_grad=track, _ctx=fn if track else None)


class Tensor:
    """N-dimensional array carrying an optional gradient"""

    def __init__(self, data, requires_grad=False, dtype=None, _ctx=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
                dtype = data.dtype
            else:
                dtype = _default_dtype
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._ctx = _ctx
        self._retain = False
        self._consumed = False

    # ─── Introspection ─────────────────────────────────────────────────────
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._ctx is None

    def __repr__(self):
        flag = ', requires_grad=True' if self.requires_grad else ''
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    def numpy(self):
        return self.data

    def item(self):
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return self.data.reshape(-1)[0].item()

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def retain_grad(self):
        """Keep the gradient of a non-leaf tensor after backward"""
        self._retain = True
        return self

    def zero_grad(self):
        self.grad = None

    # ─── Arithmetic ────────────────────────────────────────────────────────
    def _lift(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other):
        return Add.apply(self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Add.apply(self, Neg.apply(self._lift(other)))

    def __rsub__(self, other):
        return Add.apply(self._lift(other), Neg.apply(self))

    def __mul__(self, other):
        return Mul.apply(self, self._lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        return Neg.apply(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a scalar")
        return Mul.apply(self, self._lift(1.0 / other))

    def sum(self, axis=None, keepdims=False):
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        count = self.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return self.sum(axis=axis, keepdims=keepdims) / count

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    # ─── Differentiation ───────────────────────────────────────────────────
    def backward(self):
        """Accumulate d(self)/d(t) into `t.grad` for every tensor that requires it"""
        if self.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise GraphError("backward already ran on this graph; run a fresh forward first")
        if not self.requires_grad:
            raise GraphError("loss does not depend on any tensor that requires grad")

        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(_topological_order(self)):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue
            if node._ctx is None or node._retain:
                node.grad = grad.copy() if node.grad is None else node.grad + grad
            if node._ctx is None:
                continue
            parent_grads = node._ctx.backward(grad)
            if not isinstance(parent_grads, tuple):
                parent_grads = (parent_grads,)
            for parent, parent_grad in zip(node._ctx.parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                check_finite(parent_grad, f"{type(node._ctx).__name__} backward")
                key = id(parent)
                pending[key] = pending[key] + parent_grad if key in pending else parent_grad
        self._consumed = True


def fan_in_uniform(rng, shape, fan_in, dtype=None):
    """Trainable tensor drawn from uniform(-a, a), a = sqrt(1 / fan_in)"""
    bound = np.sqrt(1.0 / max(1, fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, dtype=dtype or _default_dtype)


def _topological_order(root):
    """Parents before children, iteratively so deep graphs do not hit the recursion limit"""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._ctx is not None:
            for parent in node._ctx.parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


# ─── Elementwise and structural ops ───────────────────────────────────────────
class Add(Function):
    def forward(self, a, b):
        self.save(a.shape, b.shape)
        return a + b

    def backward(self, grad):
        a_shape, b_shape = self.saved
        return unbroadcast(grad, a_shape), unbroadcast(grad, b_shape)


class Mul(Function):
    def forward(self, a, b):
        self.save(a, b)
        return a * b

    def backward(self, grad):
        a, b = self.saved
        return unbroadcast(grad * b, a.shape), unbroadcast(grad * a, b.shape)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return -grad


class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.save(a.shape, axis, keepdims)
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        shape, axis, keepdims = self.saved
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return np.broadcast_to(grad, shape).copy()


class Reshape(Function):
    def forward(self, a, shape=()):
        self.save(a.shape)
        try:
            return a.reshape(shape)
        except ValueError as exc:
            raise ShapeError(f"cannot reshape {a.shape} into {tuple(shape)}") from exc

    def backward(self, grad):
        (shape,) = self.saved
        return grad.reshape(shape)
