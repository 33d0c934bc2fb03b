"""
Declarative network description: bneck rows, layer entries and the full stack
"""

from dataclasses import asdict, dataclass, replace

from mushroomnet.errors import ConfigError

NONLINEARITIES = ('RE', 'HS')
LAYER_KINDS = ('conv', 'se', 'eca', 'bneck', 'pool', 'head')


@dataclass(frozen=True)
class BneckSpec:
    """One inverted-residual row: kernel, in, exp size, out, SE, NL, stride"""
    kernel: int
    in_channels: int
    exp_size: int
    out_channels: int
    se: bool
    nl: str
    stride: int

    def __post_init__(self):
        if self.stride not in (1, 2):
            raise ConfigError(f"bneck stride must be 1 or 2, got {self.stride}")
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ConfigError(f"bneck kernel must be odd, got {self.kernel}")
        if self.nl not in NONLINEARITIES:
            raise ConfigError(f"bneck nonlinearity must be one of {NONLINEARITIES}, got {self.nl!r}")
        if min(self.in_channels, self.exp_size, self.out_channels) < 1:
            raise ConfigError(f"bneck channel counts must be positive: {self}")

    @property
    def residual(self):
        return self.stride == 1 and self.in_channels == self.out_channels


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    in_channels: int
    out_channels: int
    kernel: int = 1
    stride: int = 1
    nl: str | None = None
    batchnorm: bool = True
    reduction: int = 16
    bneck: BneckSpec | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind == 'eca' and self.kernel % 2 == 0:
            raise ConfigError(f"ECA kernel size must be odd, got {self.kernel}")

    @property
    def is_attention(self):
        return self.kind in ('se', 'eca') and self.name.startswith('attention.')

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if data.get('bneck') is not None:
            data['bneck'] = BneckSpec(**data['bneck'])
        return cls(**data)


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer stack plus the knobs it was built from"""
    layers: tuple
    num_classes: int
    alpha: float = 1.0
    resolution: int = 224
    strategy: str = 'none'
    se_reduction: int = 16
    eca_kernel: int = 5
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def layer(self, name):
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def index(self, name):
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise KeyError(name)

    @property
    def attention_layers(self):
        return [layer for layer in self.layers if layer.is_attention]

    def with_layers(self, layers, **changes):
        return replace(self, layers=tuple(layers), **changes)

    def to_dict(self):
        data = asdict(self)
        data['layers'] = [asdict(layer) for layer in self.layers]
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data['layers'] = tuple(LayerSpec.from_dict(layer) for layer in data['layers'])
        return cls(**data)
