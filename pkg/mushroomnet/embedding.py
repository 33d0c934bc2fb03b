"""
Genetic-distance representation head.

Each species is embedded as its row of the genetic distance matrix. A model
regresses images onto those rows (or is trained as a plain classifier whose
logits are reused as the embedding) and is read out by finding the nearest
row of the diagonal-zero reference matrix.
"""

import logging
from dataclasses import dataclass

import numpy as np

from mushroomnet import ops
from mushroomnet.errors import ConfigError, DataError, GeneticsError, ShapeError
from mushroomnet.genetics import GeneticDistanceMatrix, drop_species, subset_matrix

logger = logging.getLogger(__name__)

VARIANTS = ('softmax', 'mse_sum', 'mse_mean', 'mae')
METRICS = ('cosine', 'euclidean')
NORMALIZATIONS = ('none', 'minmax')
# names used in result tables
VARIANT_LABELS = {'softmax': 'Softmax', 'mse_sum': 'MSE-S', 'mse_mean': 'MSE-A', 'mae': 'MAE'}


@dataclass(frozen=True, eq=False)
class EmbeddingTargetSet:
    """Per-species target vectors plus how they were derived"""
    names: tuple
    vectors: np.ndarray
    normalize: str = 'none'
    diag_override: float | None = None
    subset: tuple | None = None

    def __len__(self):
        return len(self.names)

    def target(self, index):
        return self.vectors[index]

    def describe(self):
        return {'normalize': self.normalize, 'diag_override': self.diag_override,
                'subset': list(self.subset) if self.subset is not None else None,
                'species': len(self.names)}


@dataclass(frozen=True, eq=False)
class HeadConfig:
    variant: str
    metric: str
    reference: GeneticDistanceMatrix

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown head variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}; choose from {', '.join(METRICS)}")

    @property
    def width(self):
        return len(self.reference.names)


def build_targets(matrix, normalize='none', diag_override=None, subset=None, drop=None):
    """Subset first, then min-max over off-diagonal entries, then the diagonal override.

    Args:
        subset: species to keep, in order
        drop: species to remove (applied after `subset`)
    """
    if normalize not in NORMALIZATIONS:
        raise ConfigError(f"unknown normalization {normalize!r}; choose from {', '.join(NORMALIZATIONS)}")
    if subset is not None:
        matrix = subset_matrix(matrix, subset)
    if drop:
        matrix = drop_species(matrix, drop)
    if len(matrix) < 2:
        raise GeneticsError(f"target set needs at least 2 species, got {len(matrix)}")

    values = matrix.values.copy()
    k = len(matrix)
    if normalize == 'minmax':
        off = ~np.eye(k, dtype=bool)
        low, high = values[off].min(), values[off].max()
        if high == low:
            raise GeneticsError("min-max normalization needs distinct off-diagonal distances")
        values[off] = (values[off] - low) / (high - low)
    if diag_override is not None:
        np.fill_diagonal(values, float(diag_override))
    applied = tuple(matrix.names) if (subset is not None or drop) else None
    return EmbeddingTargetSet(tuple(matrix.names), values, normalize, diag_override, applied)


def reference_matrix(targets):
    """Diagonal-zero view of the targets, used for read-out"""
    values = targets.vectors.copy()
    np.fill_diagonal(values, 0.0)
    return GeneticDistanceMatrix(targets.names, values)


def _check_width(pred, width, what):
    if pred.shape[-1] != width:
        raise ShapeError(f"head output width {pred.shape[-1]} does not match {what} ({width} species)")


def head_loss(pred, true_class, targets, cfg):
    """Batch-averaged head loss for predictions [N,k] (or a single [k] vector)"""
    _check_width(pred, len(targets), 'target set')
    _check_width(pred, cfg.width, 'reference matrix')
    classes = np.atleast_1d(np.asarray(true_class, dtype=np.int64))
    if cfg.variant == 'softmax':
        return ops.cross_entropy(pred, classes)
    if np.any(classes < 0) or np.any(classes >= len(targets)):
        raise DataError(f"class index out of range for {len(targets)} species")
    goal = targets.vectors[classes]
    if pred.ndim == 1:
        goal = goal[0]
    if cfg.variant == 'mse_sum':
        return ops.mse_sum(pred, goal) / (pred.shape[0] if pred.ndim == 2 else 1)
    if cfg.variant == 'mse_mean':
        return ops.mse_mean(pred, goal)
    return ops.mae_mean(pred, goal)


def label_embedding(preds, cfg):
    """Distances [N,k] from each prediction to every reference row"""
    preds = np.atleast_2d(np.asarray(preds, dtype=np.float64))
    _check_width(preds, cfg.width, 'reference matrix')
    reference = np.asarray(cfg.reference.values, dtype=np.float64)
    if cfg.metric == 'euclidean':
        return np.sqrt(((preds[:, None, :] - reference[None, :, :]) ** 2).sum(axis=2))
    pred_norm = np.linalg.norm(preds, axis=1)
    if np.any(pred_norm == 0):
        raise GeneticsError("degenerate embedding: zero-norm prediction under cosine distance")
    ref_norm = np.linalg.norm(reference, axis=1)
    if np.any(ref_norm == 0):
        raise GeneticsError("degenerate embedding: zero-norm reference row under cosine distance")
    return 1.0 - (preds @ reference.T) / (pred_norm[:, None] * ref_norm[None, :])


def classify_by_distance(pred, cfg):
    """(class index, Label Embedding) for a single prediction; ties go to the lowest index"""
    distances = label_embedding(pred, cfg)[0]
    return int(np.argmin(distances)), distances


def classify_batch(preds, cfg):
    distances = label_embedding(preds, cfg)
    return np.argmin(distances, axis=1), distances


@dataclass(frozen=True, eq=False)
class DistancePrediction:
    names: tuple
    predicted: np.ndarray
    absolute_error: np.ndarray
    signed_error: np.ndarray

    @property
    def mean_absolute_error(self):
        return float(self.absolute_error.mean())


def _predictor(model):
    return model.predict_logits if hasattr(model, 'predict_logits') else model


def evaluate_distance_prediction(model, images, labels, targets):
    """Per-species mean predicted vector against the trained targets.

    Args:
        model: MushroomModel or a callable mapping an image batch to [N,k] outputs
        images, labels: the evaluation split
    """
    labels = np.asarray(labels, dtype=np.int64)
    k = len(targets)
    outputs = np.asarray(_predictor(model)(images), dtype=np.float64)
    _check_width(outputs, k, 'target set')
    counts = np.bincount(labels, minlength=k)
    if counts.shape[0] > k:
        raise DataError(f"labels reference {counts.shape[0]} species but the target set has {k}")
    empty = [targets.names[i] for i in range(k) if counts[i] == 0]
    if empty:
        raise DataError(f"no evaluation images for species: {', '.join(empty)}")
    sums = np.zeros((k, k))
    np.add.at(sums, labels, outputs)
    predicted = sums / counts[:, None]
    signed = predicted - targets.vectors
    return DistancePrediction(tuple(targets.names), predicted, np.abs(signed), signed)


def head_config(targets, variant='mse_sum', metric='cosine'):
    """HeadConfig whose reference is the diagonal-zero version of `targets`"""
    return HeadConfig(variant=variant, metric=metric, reference=reference_matrix(targets))
