"""
Exception hierarchy for MushroomNet
"""


class MushroomNetError(Exception):
    """Base class for every error raised by the library"""
    kind = 'internal'


class ConfigError(MushroomNetError):
    """Bad or unknown configuration value"""
    kind = 'usage'


class DataError(MushroomNetError):
    """Input data is malformed or inconsistent"""
    kind = 'data'


class ShapeError(DataError, ValueError):
    """Tensor or matrix shapes do not compose"""
    kind = 'shape'


class DataFormatError(DataError):
    """A file could not be parsed in its declared format"""
    kind = 'format'


class GeneticsError(DataError):
    """Sequence or distance-matrix content violates its invariants"""
    kind = 'genetics'


class SaturatedDistanceError(GeneticsError):
    """A substitution-model log argument fell to zero or below"""
    kind = 'saturated'


class NumericalError(MushroomNetError, FloatingPointError):
    """NaN or Inf appeared in a forward pass, backward pass or optimizer step"""
    kind = 'numeric'


class GraphError(MushroomNetError):
    """Autodiff graph misuse"""
    kind = 'graph'
