"""
Differentiable network operations and losses.

All ops take and return `Tensor` objects in N,C,H,W order. Convolutions gather
windows with `sliding_window_view` and contract them with `tensordot`; the
input gradient is scattered back one kernel offset at a time, always in the
same order, so repeated runs are bit-identical.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from mushroomnet.errors import DataError, ShapeError
from mushroomnet.tensor import Function, Tensor


def _as_tensor(value, like):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _output_extent(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _check_window(x_shape, kh, kw, stride, padding):
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"padding must be >= 0, got {padding}")
    hp, wp = x_shape[2] + 2 * padding, x_shape[3] + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp} (input {tuple(x_shape)})")


def _offset_slice(i, stride, count):
    return slice(i, i + stride * (count - 1) + 1, stride)


# ─── Convolutions ──────────────────────────────────────────────────────────
class Conv2d(Function):
    def forward(self, x, w, stride=1, padding=0):
        kh, kw = w.shape[2:]
        xp = _pad(x, padding)
        if kh == kw == 1 and stride == 1:
            out = np.tensordot(xp, w[:, :, 0, 0], axes=([1], [1]))
            self.save(xp, w, stride, padding, None)
            return out.transpose(0, 3, 1, 2)
        windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))
        self.save(xp, w, stride, padding, windows)
        return out.transpose(0, 3, 1, 2)

    def backward(self, grad):
        xp, w, stride, padding, windows = self.saved
        if windows is None:
            dw = np.tensordot(grad, xp, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
            dxp = np.tensordot(grad, w[:, :, 0, 0], axes=([1], [0])).transpose(0, 3, 1, 2)
        else:
            dw = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))
            dxp = np.zeros_like(xp)
            ho, wo = grad.shape[2:]
            for i in range(w.shape[2]):
                for j in range(w.shape[3]):
                    contrib = np.tensordot(grad, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                    dxp[:, :, _offset_slice(i, stride, ho), _offset_slice(j, stride, wo)] += contrib
        if padding:
            dxp = dxp[:, :, padding:-padding, padding:-padding]
        return np.ascontiguousarray(dxp), dw


def conv2d(x, w, b=None, stride=1, padding=0):
    """Dense 2-D convolution (cross-correlation) with optional per-channel bias"""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects x[N,C,H,W] and w[Co,C,kh,kw], got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: x {x.shape} vs w {w.shape}")
    _check_window(x.shape, w.shape[2], w.shape[3], stride, padding)
    out = Conv2d.apply(x, w, stride=stride, padding=padding)
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ShapeError(f"conv2d bias shape {b.shape} does not match w {w.shape}")
        out = out + b.reshape(1, -1, 1, 1)
    return out


class DepthwiseConv2d(Function):
    def forward(self, x, w, stride=1, padding=0):
        kh, kw = w.shape[2:]
        xp = _pad(x, padding)
        ho = (xp.shape[2] - kh) // stride + 1
        wo = (xp.shape[3] - kw) // stride + 1
        out = np.zeros((x.shape[0], x.shape[1], ho, wo), dtype=np.result_type(x, w))
        for i in range(kh):
            for j in range(kw):
                out += xp[:, :, _offset_slice(i, stride, ho), _offset_slice(j, stride, wo)] * w[None, :, 0, i, j, None, None]
        self.save(xp, w, stride, padding)
        return out

    def backward(self, grad):
        xp, w, stride, padding = self.saved
        ho, wo = grad.shape[2:]
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w)
        for i in range(w.shape[2]):
            for j in range(w.shape[3]):
                rows, cols = _offset_slice(i, stride, ho), _offset_slice(j, stride, wo)
                dw[:, 0, i, j] = (grad * xp[:, :, rows, cols]).sum(axis=(0, 2, 3))
                dxp[:, :, rows, cols] += grad * w[None, :, 0, i, j, None, None]
        if padding:
            dxp = dxp[:, :, padding:-padding, padding:-padding]
        return np.ascontiguousarray(dxp), dw


def depthwise_conv2d(x, w, stride=1, padding=0):
    """Per-channel 2-D convolution; channel i only sees channel i"""
    if x.ndim != 4 or w.ndim != 4 or w.shape[1] != 1:
        raise ShapeError(f"depthwise_conv2d expects x[N,C,H,W] and w[C,1,kh,kw], got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"depthwise_conv2d channel mismatch: x {x.shape} vs w {w.shape}")
    _check_window(x.shape, w.shape[2], w.shape[3], stride, padding)
    return DepthwiseConv2d.apply(x, w, stride=stride, padding=padding)


class Dense(Function):
    def forward(self, x, w):
        self.save(x, w)
        return x @ w.T

    def backward(self, grad):
        x, w = self.saved
        return grad @ w, grad.T @ x


def dense(x, w, b=None):
    """Fully connected layer, y = x @ w.T + b"""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"dense dimension mismatch: x {x.shape} vs w {w.shape}")
    out = Dense.apply(x, w)
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ShapeError(f"dense bias shape {b.shape} does not match w {w.shape}")
        out = out + b
    return out


class Conv1dChannels(Function):
    def forward(self, z, w):
        pad = (w.shape[0] - 1) // 2
        zp = np.pad(z, ((0, 0), (pad, pad)))
        channels = z.shape[1]
        out = np.zeros_like(z, dtype=np.result_type(z, w))
        for j in range(w.shape[0]):
            out += w[j] * zp[:, j:j + channels]
        self.save(zp, w, pad)
        return out

    def backward(self, grad):
        zp, w, pad = self.saved
        channels = grad.shape[1]
        dzp = np.zeros_like(zp)
        dw = np.zeros_like(w)
        for j in range(w.shape[0]):
            dw[j] = np.sum(grad * zp[:, j:j + channels])
            dzp[:, j:j + channels] += w[j] * grad
        return np.ascontiguousarray(dzp[:, pad:pad + channels]), dw


def conv1d_channels(z, w):
    """1-D convolution across the channel axis with zero padding (k-1)/2"""
    if w.ndim != 1 or w.shape[0] % 2 == 0:
        raise ShapeError(f"conv1d_channels needs an odd-length kernel, got shape {w.shape}")
    if z.ndim != 2:
        raise ShapeError(f"conv1d_channels expects z[N,C], got {z.shape}")
    return Conv1dChannels.apply(z, w)


# ─── Pooling ───────────────────────────────────────────────────────────────
class GlobalAvgPool(Function):
    def forward(self, x):
        self.save(x.shape)
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        (shape,) = self.saved
        scale = 1.0 / (shape[2] * shape[3])
        return np.broadcast_to(grad[:, :, None, None] * scale, shape).copy()


def global_avg_pool(x):
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects x[N,C,H,W], got {x.shape}")
    return GlobalAvgPool.apply(x)


class AvgPool(Function):
    def forward(self, x, kernel=2, stride=2):
        ho = (x.shape[2] - kernel) // stride + 1
        wo = (x.shape[3] - kernel) // stride + 1
        out = np.zeros((x.shape[0], x.shape[1], ho, wo), dtype=x.dtype)
        for i in range(kernel):
            for j in range(kernel):
                out += x[:, :, _offset_slice(i, stride, ho), _offset_slice(j, stride, wo)]
        self.save(x.shape, kernel, stride)
        return out / (kernel * kernel)

    def backward(self, grad):
        shape, kernel, stride = self.saved
        ho, wo = grad.shape[2:]
        dx = np.zeros(shape, dtype=grad.dtype)
        share = grad / (kernel * kernel)
        for i in range(kernel):
            for j in range(kernel):
                dx[:, :, _offset_slice(i, stride, ho), _offset_slice(j, stride, wo)] += share
        return dx


def avg_pool(x, kernel, stride=None):
    stride = kernel if stride is None else stride
    if x.ndim != 4:
        raise ShapeError(f"avg_pool expects x[N,C,H,W], got {x.shape}")
    _check_window(x.shape, kernel, kernel, stride, 0)
    return AvgPool.apply(x, kernel=kernel, stride=stride)


# ─── Activations ───────────────────────────────────────────────────────────
class ReLU(Function):
    def forward(self, x):
        self.save(x > 0)
        return np.maximum(x, 0)

    def backward(self, grad):
        (mask,) = self.saved
        return grad * mask


class ReLU6(Function):
    def forward(self, x):
        self.save((x > 0) & (x < 6))
        return np.clip(x, 0, 6)

    def backward(self, grad):
        (mask,) = self.saved
        return grad * mask


class Sigmoid(Function):
    def forward(self, x):
        e = np.exp(-np.abs(x))
        out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
        self.save(out)
        return out

    def backward(self, grad):
        (out,) = self.saved
        return grad * out * (1.0 - out)


class HardSigmoid(Function):
    def forward(self, x):
        self.save((x > -3) & (x < 3))
        return np.clip(x + 3, 0, 6) / 6

    def backward(self, grad):
        (mask,) = self.saved
        return grad * mask / 6


class HardSwish(Function):
    def forward(self, x):
        gate = np.clip(x + 3, 0, 6) / 6
        self.save(x, gate)
        return x * gate

    def backward(self, grad):
        x, gate = self.saved
        inside = (x > -3) & (x < 3)
        return grad * (gate + x * inside / 6)


def relu(x):
    return ReLU.apply(x)


def relu6(x):
    return ReLU6.apply(x)


def sigmoid(x):
    return Sigmoid.apply(x)


def h_sigmoid(x):
    """relu6(x + 3) / 6"""
    return HardSigmoid.apply(x)


def h_swish(x):
    """x * relu6(x + 3) / 6"""
    return HardSwish.apply(x)


ACTIVATIONS = {'RE': relu, 'HS': h_swish}


class Softmax(Function):
    def forward(self, x):
        shifted = np.exp(x - x.max(axis=-1, keepdims=True))
        out = shifted / shifted.sum(axis=-1, keepdims=True)
        self.save(out)
        return out

    def backward(self, grad):
        (out,) = self.saved
        return out * (grad - (grad * out).sum(axis=-1, keepdims=True))


class LogSoftmax(Function):
    def forward(self, x):
        shifted = x - x.max(axis=-1, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        self.save(out)
        return out

    def backward(self, grad):
        (out,) = self.saved
        return grad - np.exp(out) * grad.sum(axis=-1, keepdims=True)


def softmax(x):
    return Softmax.apply(x)


def log_softmax(x):
    return LogSoftmax.apply(x)


# ─── Batch normalization ───────────────────────────────────────────────────
class BatchNorm2d(Function):
    def forward(self, x, gamma, beta, running_mean=None, running_var=None, train=True, momentum=0.1, eps=1e-5):
        axes = (0, 2, 3)
        if train:
            count = x.shape[0] * x.shape[2] * x.shape[3]
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            if running_mean is not None:
                unbiased = var * count / (count - 1) if count > 1 else var
                running_mean *= 1.0 - momentum
                running_mean += momentum * mean
                running_var *= 1.0 - momentum
                running_var += momentum * unbiased
        else:
            mean, var = running_mean, running_var
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self.save(xhat, gamma, inv_std, train)
        return gamma[None, :, None, None] * xhat + beta[None, :, None, None]

    def backward(self, grad):
        xhat, gamma, inv_std, train = self.saved
        axes = (0, 2, 3)
        dgamma = (grad * xhat).sum(axis=axes)
        dbeta = grad.sum(axis=axes)
        dxhat = grad * gamma[None, :, None, None]
        if not train:
            return dxhat * inv_std[None, :, None, None], dgamma, dbeta
        count = grad.shape[0] * grad.shape[2] * grad.shape[3]
        dx = (count * dxhat
              - dxhat.sum(axis=axes, keepdims=True)
              - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
        return dx * inv_std[None, :, None, None] / count, dgamma, dbeta


def batchnorm2d(x, gamma, beta, running_mean, running_var, train=True, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization.

    Args:
        running_mean, running_var: float arrays updated in place in train mode
        train: normalize with batch statistics (True) or the running ones (False)
    """
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batchnorm2d shape mismatch: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    return BatchNorm2d.apply(x, gamma, beta, running_mean=running_mean, running_var=running_var,
                             train=train, momentum=momentum, eps=eps)


# ─── Losses ────────────────────────────────────────────────────────────────
def _check_pair(pred, target, name):
    if pred.shape != target.shape:
        raise ShapeError(f"{name}: prediction {pred.shape} and target {target.shape} differ")


class SquaredError(Function):
    def forward(self, pred, target, scale=1.0):
        diff = pred - target
        self.save(diff, scale)
        return np.asarray(np.sum(diff * diff) * scale)

    def backward(self, grad):
        diff, scale = self.saved
        return 2.0 * scale * grad * diff, -2.0 * scale * grad * diff


class AbsoluteError(Function):
    def forward(self, pred, target, scale=1.0):
        diff = pred - target
        self.save(np.sign(diff), scale)
        return np.asarray(np.sum(np.abs(diff)) * scale)

    def backward(self, grad):
        sign, scale = self.saved
        return scale * grad * sign, -scale * grad * sign


def mse_sum(pred, target):
    target = _as_tensor(target, pred)
    _check_pair(pred, target, 'mse_sum')
    return SquaredError.apply(pred, target, scale=1.0)


def mse_mean(pred, target):
    target = _as_tensor(target, pred)
    _check_pair(pred, target, 'mse_mean')
    return SquaredError.apply(pred, target, scale=1.0 / pred.size)


def mae_mean(pred, target):
    target = _as_tensor(target, pred)
    _check_pair(pred, target, 'mae_mean')
    return AbsoluteError.apply(pred, target, scale=1.0 / pred.size)


class CrossEntropy(Function):
    def forward(self, logits, classes=None):
        shifted = logits - logits.max(axis=-1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        rows = np.arange(logits.shape[0])
        self.save(np.exp(log_probs), classes)
        return np.asarray(-log_probs[rows, classes].mean())

    def backward(self, grad):
        probs, classes = self.saved
        dlogits = probs.copy()
        dlogits[np.arange(probs.shape[0]), classes] -= 1.0
        return grad * dlogits / probs.shape[0]


def cross_entropy(logits, classes):
    """Mean of -log softmax(logits)[class] over the batch.

    A single logit vector with an int class is treated as a batch of one.
    """
    if logits.ndim == 1:
        logits = logits.reshape(1, -1)
    classes = np.atleast_1d(np.asarray(classes, dtype=np.int64))
    if logits.ndim != 2 or classes.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs {classes.shape[0]} class labels")
    k = logits.shape[1]
    if np.any(classes < 0) or np.any(classes >= k):
        raise DataError(f"class index out of range for {k} classes: {classes[(classes < 0) | (classes >= k)].tolist()}")
    return CrossEntropy.apply(logits, classes=classes)
