"""
Channel attention blocks (squeeze-excite and ECA) and the placement strategies
that insert them into a network description.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from mushroomnet import ops
from mushroomnet.errors import ConfigError, ShapeError
from mushroomnet.specs import LayerSpec
from mushroomnet.tensor import Tensor, fan_in_uniform

logger = logging.getLogger(__name__)


class AttentionStrategy(str, Enum):
    MODEL1 = 'model1'
    MODEL2 = 'model2'
    MODEL3 = 'model3'
    MODEL4 = 'model4'
    MODEL5 = 'model5'
    MODEL6 = 'model6'
    MODEL7 = 'model7'
    PROPOSED = 'proposed'
    NONE = 'none'

    @classmethod
    def parse(cls, tag):
        """Accept an enum member or a tag such as 'Model-4', 'model4', 'PROPOSED'"""
        if isinstance(tag, cls):
            return tag
        key = str(tag).strip().lower().replace('-', '').replace('_', '')
        for member in cls:
            if member.value == key:
                return member
        raise ConfigError(f"unknown attention strategy {tag!r}; choose from {', '.join(m.value for m in cls)}")


# strategy -> (blocks after the stem conv, blocks after the final 1x1 conv)
PLACEMENTS = {
    AttentionStrategy.MODEL1: ((), ('se',)),
    AttentionStrategy.MODEL2: (('se',), ('se',)),
    AttentionStrategy.MODEL3: (('se',), ()),
    AttentionStrategy.MODEL4: (('se', 'se'), ('se',)),
    AttentionStrategy.MODEL5: ((), ('eca',)),
    AttentionStrategy.MODEL6: (('se',), ('eca',)),
    AttentionStrategy.MODEL7: (('se', 'se'), ()),
    AttentionStrategy.PROPOSED: (('se', 'se'), ('eca',)),
    AttentionStrategy.NONE: ((), ()),
}

PRE_ANCHOR = 'stem'
POST_ANCHOR = 'final_conv'


@dataclass
class SEBlock:
    """Squeeze-excite: s = sigmoid(W2 relu(W1 avgpool(x)))"""
    channels: int
    w1: Tensor
    w2: Tensor
    reduction: int = 16

    @staticmethod
    def hidden_width(channels, reduction):
        return max(1, channels // reduction)

    @classmethod
    def create(cls, channels, reduction=16, rng=None, dtype=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        hidden = cls.hidden_width(channels, reduction)
        return cls(channels=channels,
                   w1=fan_in_uniform(rng, (hidden, channels), channels, dtype),
                   w2=fan_in_uniform(rng, (channels, hidden), hidden, dtype),
                   reduction=reduction)

    def parameters(self):
        return {'w1': self.w1, 'w2': self.w2}


@dataclass
class ECABlock:
    """Efficient channel attention: 1-D convolution over the squeezed channel vector"""
    channels: int
    w: Tensor

    @property
    def kernel(self):
        return self.w.shape[0]

    @classmethod
    def create(cls, channels, kernel=5, rng=None, dtype=None):
        if kernel % 2 == 0:
            raise ConfigError(f"ECA kernel size must be odd, got {kernel}")
        rng = rng if rng is not None else np.random.default_rng(0)
        return cls(channels=channels, w=fan_in_uniform(rng, (kernel,), kernel, dtype))

    def parameters(self):
        return {'w': self.w}


def squeeze(x):
    """Per-channel spatial mean; a [N,C] input is already squeezed"""
    return ops.global_avg_pool(x) if x.ndim == 4 else x


def _rescale(x, scale):
    if x.ndim == 4:
        return x * scale.reshape(x.shape[0], x.shape[1], 1, 1)
    return x * scale


def se_scale(x, blk):
    z = squeeze(x)
    return ops.sigmoid(ops.dense(ops.relu(ops.dense(z, blk.w1)), blk.w2))


def se_forward(x, blk):
    if x.shape[1] != blk.channels:
        raise ShapeError(f"SE block built for {blk.channels} channels got input {x.shape}")
    return _rescale(x, se_scale(x, blk))


def eca_scale(x, blk):
    return ops.sigmoid(ops.conv1d_channels(squeeze(x), blk.w))


def eca_forward(x, blk):
    if x.shape[1] != blk.channels:
        raise ShapeError(f"ECA block built for {blk.channels} channels got input {x.shape}")
    return _rescale(x, eca_scale(x, blk))


def build_strategy(tag, backbone):
    """Return `backbone` with its attention blocks replaced by those of `tag`"""
    strategy = AttentionStrategy.parse(tag)
    pre, post = PLACEMENTS[strategy]
    layers = [layer for layer in backbone.layers if not layer.is_attention]
    names = [layer.name for layer in layers]
    if PRE_ANCHOR not in names or POST_ANCHOR not in names:
        raise ConfigError(f"network has no {PRE_ANCHOR!r}/{POST_ANCHOR!r} layers to anchor attention blocks")

    def block(kind, slot, i, channels):
        if kind == 'se':
            return LayerSpec('se', f'attention.{slot}.{i}', channels, channels,
                             reduction=backbone.se_reduction, batchnorm=False)
        return LayerSpec('eca', f'attention.{slot}.{i}', channels, channels,
                         kernel=backbone.eca_kernel, batchnorm=False)

    # insert after the final conv first so the stem index stays valid
    post_at = names.index(POST_ANCHOR) + 1
    post_channels = layers[post_at - 1].out_channels
    layers[post_at:post_at] = [block(kind, 'post', i, post_channels) for i, kind in enumerate(post)]
    pre_at = names.index(PRE_ANCHOR) + 1
    pre_channels = layers[pre_at - 1].out_channels
    layers[pre_at:pre_at] = [block(kind, 'pre', i, pre_channels) for i, kind in enumerate(pre)]
    return backbone.with_layers(layers, strategy=strategy.value)


def placement_audit(spec):
    """(block kinds after the stem, block kinds after the final conv)"""
    pre = tuple(layer.kind for layer in spec.attention_layers if layer.name.startswith('attention.pre.'))
    post = tuple(layer.kind for layer in spec.attention_layers if layer.name.startswith('attention.post.'))
    return pre, post
