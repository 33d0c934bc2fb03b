"""
MushroomNet model holder - bundles a network description with its parameters
"""

import logging
import os

import numpy as np

from mushroomnet import backbone
from mushroomnet.attention import placement_audit
from mushroomnet.checkpoint import load_checkpoint, save_checkpoint
from mushroomnet.errors import DataFormatError, MushroomNetError
from mushroomnet.specs import LayerSpec, NetworkSpec
from mushroomnet.tensor import Tensor, get_default_dtype, no_grad

logger = logging.getLogger(__name__)


class MushroomModel:
    """A NetworkSpec plus the parameter store it runs with"""

    def __init__(self, spec, params=None, seed=0, dtype=None):
        self.spec = spec
        self.dtype = np.dtype(dtype or get_default_dtype())
        self.params = params if params is not None else backbone.init_parameters(spec, seed=seed, dtype=self.dtype)
        # run metadata carried into checkpoints
        self.meta = {'init_source': 'scratch', 'stages': [], 'class_names': None}

    def __call__(self, x, mode='eval'):
        """Forward pass; returns (logits, feature tap)"""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x), dtype=self.dtype)
        return backbone.forward(self.spec, self.params, x, mode=mode)

    @property
    def num_classes(self):
        return self.spec.num_classes

    def predict_logits(self, images, batch_size=32):
        """Eval-mode logits for a float batch [N,3,R,R]"""
        images = np.asarray(images)
        outputs = []
        with no_grad():
            for start in range(0, len(images), batch_size):
                logits, _ = self(images[start:start + batch_size], mode='eval')
                outputs.append(logits.data)
        if not outputs:
            return np.zeros((0, self.num_classes), dtype=self.dtype)
        return np.concatenate(outputs, axis=0)

    def predict(self, images, batch_size=32):
        """Arg-max class index per image"""
        return np.argmax(self.predict_logits(images, batch_size), axis=1)

    def parameter_count(self):
        return backbone.parameter_count(self.spec)

    def named_parameters(self):
        return dict(self.params.items())

    def trainable_names(self):
        return [name for name, tensor in self.params.items() if tensor.requires_grad]

    # ─── Structure changes ─────────────────────────────────────────────────
    def replace_head(self, num_classes, seed=0):
        """Swap in a freshly initialized head of width `num_classes`"""
        head = self.spec.layer('head')
        layers = [layer if layer.name != 'head' else
                  LayerSpec('head', 'head', head.in_channels, int(num_classes), batchnorm=False)
                  for layer in self.spec.layers]
        self.spec = self.spec.with_layers(layers, num_classes=int(num_classes))
        for suffix in ('w', 'b'):
            self.params.tensors.pop(f'head.{suffix}', None)
        backbone.init_layer(self.params, self.spec.layer('head'), np.random.default_rng(seed), self.dtype)

    def with_spec(self, spec, seed=0):
        """New model for `spec`, carrying over every parameter whose name and shape match"""
        model = MushroomModel(spec, seed=seed, dtype=self.dtype)
        transferred = model.params.load_arrays(self.params.state_arrays(), strict=False)
        model.meta = dict(self.meta)
        logger.debug("transferred %d arrays into %s network", len(transferred), spec.strategy)
        return model

    # ─── Persistence ───────────────────────────────────────────────────────
    def save(self, path, **meta):
        record = dict(self.meta, **meta)
        record['spec'] = self.spec.to_dict()
        record['buffers'] = sorted(self.params.buffers)
        record['frozen'] = sorted(self.params.frozen)
        save_checkpoint(path, self.params.state_arrays(), record)

    @classmethod
    def from_checkpoint(cls, path, dtype=None):
        arrays, meta = load_checkpoint(path)
        if 'spec' not in meta:
            raise DataFormatError(f"{path}: checkpoint metadata has no network description")
        try:
            spec = NetworkSpec.from_dict(meta.pop('spec'))
        except (KeyError, TypeError) as exc:
            raise DataFormatError(f"{path}: checkpoint network description is incomplete ({exc})") from exc
        stored = next((a.dtype for name, a in arrays.items() if name not in meta.get('buffers', ())), None)
        model = cls(spec, dtype=dtype or stored)
        model.params.load_arrays(arrays, strict=True)
        frozen = set(meta.pop('frozen', ()))
        for name, tensor in model.params.items():
            tensor.requires_grad = name not in frozen
        meta.pop('buffers', None)
        model.meta.update(meta)
        return model

    def load_weights(self, path):
        """Load matching weights from a checkpoint; returns (success, message)"""
        try:
            if not os.path.exists(path):
                raise FileNotFoundError(f"checkpoint not found: {path}")
            arrays, _ = load_checkpoint(path)
            loaded = self.params.load_arrays(arrays, strict=False)
            self.meta['init_source'] = 'checkpoint'
            return True, f"loaded {len(loaded)} of {len(arrays)} arrays from {os.path.basename(path)}"
        except (OSError, MushroomNetError) as e:
            return False, f"Error loading weights: {e}"

    def get_status(self):
        """Summary used in logs and run metadata"""
        pre, post = placement_audit(self.spec)
        return {
            'strategy': self.spec.strategy,
            'num_classes': self.num_classes,
            'alpha': self.spec.alpha,
            'resolution': self.spec.resolution,
            'parameters': self.parameter_count(),
            'attention_after_stem': list(pre),
            'attention_after_final_conv': list(post),
            'frozen': len(self.params.frozen),
            'init_source': self.meta.get('init_source'),
        }
