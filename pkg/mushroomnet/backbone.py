"""
Bneck backbone and MushroomNet assembly.

The layer stack is MobileNetV3-Large at width 1: a 3x3 stride-2 stem,
fifteen inverted-residual rows, a 1x1 conv to 960, average pooling down to 1x1,
a 1x1 conv to 1280 without batchnorm, and a dense head of width k. Attention
blocks are inserted by `attention.build_strategy`.
"""

import logging
from contextlib import nullcontext

import numpy as np

from mushroomnet import ops
from mushroomnet.attention import ECABlock, SEBlock, build_strategy, eca_forward, se_forward
from mushroomnet.errors import ConfigError, ShapeError
from mushroomnet.specs import BneckSpec, LayerSpec, NetworkSpec
from mushroomnet.tensor import Tensor, fan_in_uniform, get_default_dtype, no_grad

logger = logging.getLogger(__name__)

# kernel, in, exp size, out, SE, NL, stride
BNECK_ROWS = (
    (3, 16, 6, 16, False, 'RE', 1),
    (3, 16, 64, 24, False, 'RE', 2),
    (3, 24, 72, 24, False, 'RE', 1),
    (5, 24, 72, 40, True, 'RE', 2),
    (5, 40, 120, 40, True, 'RE', 1),
    (5, 40, 120, 40, True, 'RE', 1),
    (3, 40, 240, 80, False, 'HS', 2),
    (3, 80, 200, 80, False, 'HS', 1),
    (3, 80, 184, 80, False, 'HS', 1),
    (3, 80, 184, 80, False, 'HS', 1),
    (3, 80, 480, 112, True, 'HS', 1),
    (3, 112, 672, 112, True, 'HS', 1),
    (5, 112, 672, 160, True, 'HS', 2),
    (5, 160, 960, 160, True, 'HS', 1),
    (5, 160, 960, 160, True, 'HS', 1),
)

STEM_CHANNELS = 16
EXPAND_CHANNELS = 960
FINAL_CHANNELS = 1280
TAP_LAYER = 'expand_conv'
MODES = ('train', 'eval', 'eval_grad')


def scale_channels(channels, alpha):
    """max(8, round(alpha * C / 8) * 8); alpha = 1 keeps the table widths as printed"""
    if alpha == 1.0:
        return channels
    return max(8, int(round(alpha * channels / 8)) * 8)


def build_mushroomnet(k, strategy='proposed', alpha=1.0, resolution=224, first_bneck_exp=6,
                      se_reduction=16, eca_kernel=5, bneck_se_reduction=4):
    """Full network description for `k` classes.

    Args:
        first_bneck_exp: exp size of the first bneck row (6 as tabulated, 16 in MobileNetV3)
        bneck_se_reduction: reduction of the SE gates inside bneck rows
    """
    if int(k) < 2:
        raise ConfigError(f"need at least 2 classes, got {k}")
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"width multiplier must be in (0, 1], got {alpha}")
    if resolution < 32 or resolution % 32:
        raise ConfigError(f"resolution must be a positive multiple of 32, got {resolution}")

    width = lambda c: scale_channels(c, alpha)  # noqa: E731
    layers = [LayerSpec('conv', 'stem', 3, width(STEM_CHANNELS), kernel=3, stride=2, nl='HS')]
    prev = width(STEM_CHANNELS)
    for i, (kernel, _, exp, out, se, nl, stride) in enumerate(BNECK_ROWS):
        exp = first_bneck_exp if i == 0 else exp
        row = BneckSpec(kernel, prev, width(exp), width(out), se, nl, stride)
        layers.append(LayerSpec('bneck', f'bneck.{i}', prev, row.out_channels, kernel=kernel, stride=stride,
                                nl=nl, reduction=bneck_se_reduction, bneck=row))
        prev = row.out_channels
    layers += [
        LayerSpec('conv', TAP_LAYER, prev, width(EXPAND_CHANNELS), nl='HS'),
        LayerSpec('pool', 'pool', width(EXPAND_CHANNELS), width(EXPAND_CHANNELS),
                  kernel=resolution // 32, stride=1, batchnorm=False),
        LayerSpec('conv', 'final_conv', width(EXPAND_CHANNELS), width(FINAL_CHANNELS), nl='HS', batchnorm=False),
        LayerSpec('head', 'head', width(FINAL_CHANNELS), int(k), batchnorm=False),
    ]
    base = NetworkSpec(layers=tuple(layers), num_classes=int(k), alpha=float(alpha), resolution=int(resolution),
                       se_reduction=se_reduction, eca_kernel=eca_kernel)
    return build_strategy(strategy, base)


def shape_trace(spec):
    """(layer name, output shape) for every layer; shapes are (C, H, W) or (k,)"""
    size = spec.resolution
    rows = []
    for layer in spec.layers:
        if layer.kind == 'conv' or layer.kind == 'bneck':
            size = (size + 2 * (layer.kernel // 2) - layer.kernel) // layer.stride + 1
        elif layer.kind == 'pool':
            size = (size - layer.kernel) // layer.stride + 1
        if layer.kind == 'head':
            rows.append((layer.name, (layer.out_channels,)))
        else:
            rows.append((layer.name, (layer.out_channels, size, size)))
    return rows


def parameter_count(spec):
    """Trainable scalar count, a pure function of the description"""
    total = 0
    for layer in spec.layers:
        if layer.kind == 'conv':
            total += layer.out_channels * layer.in_channels * layer.kernel ** 2
            total += 2 * layer.out_channels if layer.batchnorm else layer.out_channels
        elif layer.kind == 'bneck':
            row = layer.bneck
            total += row.exp_size * row.in_channels + 2 * row.exp_size
            total += row.exp_size * row.kernel ** 2 + 2 * row.exp_size
            if row.se:
                total += 2 * row.exp_size * SEBlock.hidden_width(row.exp_size, layer.reduction)
            total += row.out_channels * row.exp_size + 2 * row.out_channels
        elif layer.kind == 'se':
            total += 2 * layer.in_channels * SEBlock.hidden_width(layer.in_channels, layer.reduction)
        elif layer.kind == 'eca':
            total += layer.kernel
        elif layer.kind == 'head':
            total += layer.out_channels * layer.in_channels + layer.out_channels
    return total


# ─── Parameters ────────────────────────────────────────────────────────────
class ParameterStore:
    """Named trainable tensors plus batchnorm running buffers"""

    def __init__(self):
        self.tensors = {}
        self.buffers = {}

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def scope(self, prefix):
        return ParamScope(self, prefix)

    @property
    def frozen(self):
        return {name for name, tensor in self.tensors.items() if not tensor.requires_grad}

    def freeze_all_except(self, prefixes):
        for name, tensor in self.tensors.items():
            tensor.requires_grad = name.startswith(tuple(prefixes))

    def unfreeze_all(self):
        for tensor in self.tensors.values():
            tensor.requires_grad = True

    def zero_grad(self):
        for tensor in self.tensors.values():
            tensor.zero_grad()

    def state_arrays(self):
        """Copies of every tensor and buffer, keyed by name"""
        arrays = {name: tensor.data.copy() for name, tensor in self.tensors.items()}
        arrays.update({name: buffer.copy() for name, buffer in self.buffers.items()})
        return arrays

    def load_arrays(self, arrays, strict=True):
        """Copy matching arrays in; returns the names that were transferred"""
        loaded = []
        for name, array in arrays.items():
            if name in self.tensors:
                target = self.tensors[name]
            elif name in self.buffers:
                target = None
            elif strict:
                raise ShapeError(f"unexpected array {name!r} in parameter state")
            else:
                continue
            current = target.data if target is not None else self.buffers[name]
            if current.shape != array.shape:
                if strict:
                    raise ShapeError(f"array {name!r} has shape {array.shape}, expected {current.shape}")
                continue
            if target is not None:
                target.data = np.array(array, dtype=current.dtype)
            else:
                self.buffers[name] = np.array(array, dtype=current.dtype)
            loaded.append(name)
        if strict:
            missing = (set(self.tensors) | set(self.buffers)) - set(loaded)
            if missing:
                raise ShapeError(f"parameter state is missing {sorted(missing)[:5]}")
        return loaded


class ParamScope:
    def __init__(self, store, prefix):
        self.store = store
        self.prefix = prefix

    def __getitem__(self, key):
        return self.store.tensors[f'{self.prefix}.{key}']

    def buffer(self, key):
        return self.store.buffers[f'{self.prefix}.{key}']

    def scope(self, key):
        return ParamScope(self.store, f'{self.prefix}.{key}')


def _add_batchnorm(store, prefix, channels, dtype):
    store.tensors[f'{prefix}.gamma'] = Tensor(np.ones(channels), requires_grad=True, dtype=dtype)
    store.tensors[f'{prefix}.beta'] = Tensor(np.zeros(channels), requires_grad=True, dtype=dtype)
    store.buffers[f'{prefix}.running_mean'] = np.zeros(channels, dtype=dtype)
    store.buffers[f'{prefix}.running_var'] = np.ones(channels, dtype=dtype)


def init_layer(store, layer, rng, dtype):
    """Create the parameters of one layer under its name"""
    name = layer.name
    if layer.kind == 'conv':
        fan_in = layer.in_channels * layer.kernel ** 2
        store.tensors[f'{name}.w'] = fan_in_uniform(
            rng, (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel), fan_in, dtype)
        if layer.batchnorm:
            _add_batchnorm(store, f'{name}.bn', layer.out_channels, dtype)
        else:
            store.tensors[f'{name}.b'] = Tensor(np.zeros(layer.out_channels), requires_grad=True, dtype=dtype)
    elif layer.kind == 'bneck':
        row = layer.bneck
        store.tensors[f'{name}.expand.w'] = fan_in_uniform(
            rng, (row.exp_size, row.in_channels, 1, 1), row.in_channels, dtype)
        _add_batchnorm(store, f'{name}.expand.bn', row.exp_size, dtype)
        store.tensors[f'{name}.depthwise.w'] = fan_in_uniform(
            rng, (row.exp_size, 1, row.kernel, row.kernel), row.kernel ** 2, dtype)
        _add_batchnorm(store, f'{name}.depthwise.bn', row.exp_size, dtype)
        if row.se:
            block = SEBlock.create(row.exp_size, layer.reduction, rng, dtype)
            store.tensors[f'{name}.se.w1'] = block.w1
            store.tensors[f'{name}.se.w2'] = block.w2
        store.tensors[f'{name}.project.w'] = fan_in_uniform(
            rng, (row.out_channels, row.exp_size, 1, 1), row.exp_size, dtype)
        _add_batchnorm(store, f'{name}.project.bn', row.out_channels, dtype)
    elif layer.kind == 'se':
        block = SEBlock.create(layer.in_channels, layer.reduction, rng, dtype)
        store.tensors[f'{name}.w1'] = block.w1
        store.tensors[f'{name}.w2'] = block.w2
    elif layer.kind == 'eca':
        store.tensors[f'{name}.w'] = ECABlock.create(layer.in_channels, layer.kernel, rng, dtype).w
    elif layer.kind == 'head':
        store.tensors[f'{name}.w'] = fan_in_uniform(
            rng, (layer.out_channels, layer.in_channels), layer.in_channels, dtype)
        store.tensors[f'{name}.b'] = Tensor(np.zeros(layer.out_channels), requires_grad=True, dtype=dtype)


def init_parameters(spec, seed=0, dtype=None):
    """Fresh parameters drawn from one seeded stream in layer order"""
    dtype = np.dtype(dtype or get_default_dtype())
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    for layer in spec.layers:
        init_layer(store, layer, rng, dtype)
    return store


# ─── Forward ───────────────────────────────────────────────────────────────
def _batchnorm(x, scope, train, momentum, eps):
    # frozen layers keep their running statistics
    gamma = scope['gamma']
    return ops.batchnorm2d(x, gamma, scope['beta'], scope.buffer('running_mean'), scope.buffer('running_var'),
                           train=train and gamma.requires_grad, momentum=momentum, eps=eps)


def bneck_forward(x, spec, params, train=False, momentum=0.1, eps=1e-5):
    """Expand 1x1, depthwise kxk, optional SE, linear 1x1 projection, residual when shapes allow.

    Args:
        spec: BneckSpec of the row
        params: scope holding expand.*, depthwise.*, se.*, project.*
    """
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ShapeError(f"bneck expects {spec.in_channels} input channels, got {x.shape}")
    act = ops.ACTIVATIONS[spec.nl]
    out = act(_batchnorm(ops.conv2d(x, params['expand.w']), params.scope('expand.bn'), train, momentum, eps))
    out = ops.depthwise_conv2d(out, params['depthwise.w'], stride=spec.stride, padding=spec.kernel // 2)
    out = act(_batchnorm(out, params.scope('depthwise.bn'), train, momentum, eps))
    if spec.se:
        out = se_forward(out, SEBlock(spec.exp_size, params['se.w1'], params['se.w2']))
    out = _batchnorm(ops.conv2d(out, params['project.w']), params.scope('project.bn'), train, momentum, eps)
    if spec.residual:
        if out.shape != x.shape:
            raise ShapeError(f"residual branch shape {out.shape} does not match input {x.shape}")
        out = out + x
    return out


def _layer_forward(x, layer, scope, train, spec):
    if layer.kind == 'conv':
        out = ops.conv2d(x, scope['w'], None if layer.batchnorm else scope['b'],
                         stride=layer.stride, padding=layer.kernel // 2)
        if layer.batchnorm:
            out = _batchnorm(out, scope.scope('bn'), train, spec.bn_momentum, spec.bn_eps)
        return ops.ACTIVATIONS[layer.nl](out) if layer.nl else out
    if layer.kind == 'bneck':
        return bneck_forward(x, layer.bneck, scope, train=train, momentum=spec.bn_momentum, eps=spec.bn_eps)
    if layer.kind == 'se':
        return se_forward(x, SEBlock(layer.in_channels, scope['w1'], scope['w2'], layer.reduction))
    if layer.kind == 'eca':
        return eca_forward(x, ECABlock(layer.in_channels, scope['w']))
    if layer.kind == 'pool':
        return ops.avg_pool(x, layer.kernel, layer.stride)
    return ops.dense(x.reshape(x.shape[0], -1), scope['w'], scope['b'])


def forward(spec, params, x, mode='eval'):
    """Run the network; returns (logits [N,k], feature tap [N,C,h,w]).

    In 'eval_grad' mode the tap is a graph leaf whose `.grad` receives
    d(logit)/d(activation) after backward.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown forward mode {mode!r}; choose from {MODES}")
    if not isinstance(x, Tensor):
        x = Tensor(x)
    expected = (3, spec.resolution, spec.resolution)
    if x.ndim != 4 or tuple(x.shape[1:]) != expected:
        raise ShapeError(f"wrong input resolution: expected [N,{','.join(map(str, expected))}], got {x.shape}")

    train = mode == 'train'
    tap = None
    with no_grad() if mode == 'eval' else nullcontext():
        for layer in spec.layers:
            x = _layer_forward(x, layer, params.scope(layer.name), train, spec)
            if layer.name == TAP_LAYER:
                if mode == 'eval_grad':
                    x = Tensor(x.data, requires_grad=True)
                tap = x
    return x, tap
