"""
Image datasets, splits, augmentation and batch assembly
"""

import logging
import math
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from mushroomnet import imaging
from mushroomnet.errors import ConfigError, DataError, DataFormatError

logger = logging.getLogger(__name__)

AUGMENT_OPS = ('rotate', 'crop', 'sharpen', 'contrast', 'brightness')
IMAGE_EXTENSIONS = ('.ppm', '.pgm')
OPTIONAL_EXTENSIONS = ('.png',)


@dataclass
class ImageDataset:
    """Labelled images, either held in memory or referenced by path"""
    class_names: list
    labels: np.ndarray
    resolution: int
    images: list = None
    paths: list = None
    allow_png: bool = False

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        count = len(self.images) if self.images is not None else len(self.paths or ())
        if count != len(self.labels):
            raise DataError(f"dataset has {count} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    @property
    def num_classes(self):
        return len(self.class_names)

    def reference(self, index):
        if self.paths is not None:
            return self.paths[index]
        return f'{self.class_names[self.labels[index]]}/{index:05d}'

    def load(self, index):
        """uint8 H,W,3 image at the dataset resolution"""
        if self.images is not None:
            array = self.images[index]
        else:
            array = imaging.load_array(self.paths[index], allow_png=self.allow_png)
        if array.ndim == 2:
            array = array[:, :, None]
        if array.shape[2] == 1:
            array = np.repeat(array, 3, axis=2)
        return imaging.resize(array, self.resolution)

    def batch(self, indices, dtype=np.float32):
        return np.stack([to_input(self.load(i), dtype) for i in indices]) if len(indices) else \
            np.zeros((0, 3, self.resolution, self.resolution), dtype=dtype)

    @classmethod
    def from_directory(cls, root, resolution, allow_png=False):
        """One subdirectory per class, classes in sorted name order"""
        if not os.path.isdir(root):
            raise DataFormatError(f"dataset directory not found: {root}")
        extensions = IMAGE_EXTENSIONS + (OPTIONAL_EXTENSIONS if allow_png else ())
        class_names = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
        paths, labels = [], []
        for label, name in enumerate(class_names):
            folder = os.path.join(root, name)
            for filename in sorted(os.listdir(folder)):
                if filename.lower().endswith(extensions):
                    paths.append(os.path.join(folder, filename))
                    labels.append(label)
        if len(class_names) < 2:
            raise DataFormatError(f"{root}: need at least 2 class subdirectories, found {len(class_names)}")
        empty = [name for label, name in enumerate(class_names) if label not in set(labels)]
        if empty:
            raise DataFormatError(f"{root}: class directories without images: {', '.join(empty)}")
        logger.info("found %d images in %d classes under %s", len(paths), len(class_names), root)
        return cls(class_names, np.asarray(labels), resolution, paths=paths, allow_png=allow_png)


def to_input(image, dtype=np.float32):
    """uint8 H,W,3 -> float C,H,W in [0, 1]"""
    return (image.transpose(2, 0, 1) / 255.0).astype(dtype)


# ─── Synthetic data ────────────────────────────────────────────────────────
def _draw_mushroom(rng, resolution, hue, cap_ratio):
    background = rng.integers(20, 90, size=3)
    noise = rng.integers(-25, 26, size=(resolution, resolution, 3))
    base = np.clip(background[None, None, :] + noise, 0, 255).astype(np.uint8)
    canvas = imaging.Canvas.from_array(base)

    r = resolution
    cap_w = r * rng.uniform(0.55, 0.75)
    cap_h = cap_w * cap_ratio
    cx = r / 2 + rng.uniform(-0.08, 0.08) * r
    cap_top = r * rng.uniform(0.15, 0.25)
    stem_w = cap_w * 0.22
    stem_top = cap_top + cap_h * 0.6
    stem_h = max(2.0, r * 0.9 - stem_top)
    canvas.rect((225, 215, 190), (cx - stem_w / 2, stem_top, stem_w, stem_h))
    canvas.ellipse(imaging.hsv_color(hue, 0.85, rng.uniform(0.75, 1.0)), (cx - cap_w / 2, cap_top, cap_w, cap_h))
    return canvas.to_array()


def generate_synthetic_dataset(k, n, resolution, seed=0):
    """k classes of n procedural mushrooms (cap ellipse over a stem) on noise backgrounds.

    Classes differ in cap hue and cap height-to-width ratio.
    """
    if k < 2 or n < 1:
        raise ConfigError(f"synthetic dataset needs k >= 2 and n >= 1, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for c in range(k):
        hue = c / k
        cap_ratio = 0.35 + 0.4 * c / (k - 1)
        for _ in range(n):
            images.append(_draw_mushroom(rng, resolution, hue, cap_ratio))
            labels.append(c)
    names = [f'species_{c:02d}' for c in range(k)]
    return ImageDataset(names, np.asarray(labels), resolution, images=images)


def write_dataset(dataset, root):
    """Class-per-directory PPM files"""
    for index in range(len(dataset)):
        folder = os.path.join(root, dataset.class_names[dataset.labels[index]])
        os.makedirs(folder, exist_ok=True)
        imaging.save_array(dataset.load(index), os.path.join(folder, f'img_{index:05d}.ppm'))
    logger.info("wrote %d images to %s", len(dataset), root)


# ─── Splits ────────────────────────────────────────────────────────────────
@dataclass
class DatasetSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int = 0
    ratios: tuple = (0.8, 0.1, 0.1)
    stratified: bool = True

    def pairs(self, part, labels):
        """(image index, class index) rows of one split part"""
        indices = getattr(self, part)
        return [(int(i), int(labels[i])) for i in indices]

    def sizes(self):
        return len(self.train), len(self.val), len(self.test)


def _carve(indices, ratios, rng):
    shuffled = rng.permutation(indices)
    n = len(shuffled)
    n_val = int(math.floor(n * ratios[1] + 1e-9))
    n_test = int(math.floor(n * ratios[2] + 1e-9))
    return shuffled[n_val + n_test:], shuffled[:n_val], shuffled[n_val:n_val + n_test]


def split_dataset(labels, ratios=(0.8, 0.1, 0.1), seed=0, stratified=True):
    """Train/val/test split; val and test sizes are floored, leftovers go to train"""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-6:
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    groups = [np.flatnonzero(labels == c) for c in np.unique(labels)] if stratified else [np.arange(len(labels))]
    parts = [_carve(group, ratios, rng) for group in groups]
    train, val, test = (np.sort(np.concatenate([p[i] for p in parts])).astype(np.int64) for i in range(3))
    return DatasetSplit(train, val, test, seed=seed, ratios=ratios, stratified=stratified)


# ─── Augmentation ──────────────────────────────────────────────────────────
@dataclass
class AugmentConfig:
    """Random augmentation ranges (non-authoritative defaults)"""
    probability: float = 0.5
    rotation_degrees: float = 20.0
    crop_fraction: float = 0.8
    sharpen_range: tuple = (1.0, 2.0)
    contrast_range: tuple = (0.8, 1.2)
    brightness_range: tuple = (-20.0, 20.0)
    ops: tuple = field(default=AUGMENT_OPS)


def augment(image, op, params=None, seed=0, cfg=None):
    """Apply one augmentation; missing parameters are drawn from `seed` and `cfg` ranges.

    Params by op: rotate {degrees}, crop {box: (left, top, width, height)},
    sharpen {factor}, contrast {factor}, brightness {delta}.
    """
    params = dict(params or {})
    cfg = cfg or AugmentConfig()
    rng = np.random.default_rng(seed)
    size = image.shape[0]
    if op == 'rotate':
        degrees = params.get('degrees', rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees))
        return imaging.rotate(image, degrees)
    if op == 'crop':
        box = params.get('box')
        if box is None:
            side = int(round(size * rng.uniform(cfg.crop_fraction, 1.0)))
            left, top = rng.integers(0, size - side + 1, size=2)
            box = (left, top, side, side)
        return imaging.crop_resize(image, box, size)
    if op == 'sharpen':
        return imaging.sharpen(image, params.get('factor', rng.uniform(*cfg.sharpen_range)))
    if op == 'contrast':
        return imaging.contrast(image, params.get('factor', rng.uniform(*cfg.contrast_range)))
    if op == 'brightness':
        return imaging.brightness(image, params.get('delta', rng.uniform(*cfg.brightness_range)))
    raise ConfigError(f"unknown augmentation {op!r}; choose from {', '.join(AUGMENT_OPS)}")


def random_augment(image, cfg, seed):
    """Each configured op fires with probability cfg.probability, in a fixed order"""
    rng = np.random.default_rng(seed)
    for op in cfg.ops:
        fire, op_seed = rng.random(), int(rng.integers(0, 2 ** 31))
        if fire < cfg.probability:
            image = augment(image, op, seed=op_seed, cfg=cfg)
    return image


def balance_by_augmentation(labels, indices, seed=0):
    """Training plan that tops every class up to the largest one with augmented copies.

    Returns a list of (image index, augmentation seed or None).
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    plan = [(int(i), None) for i in indices]
    classes, counts = np.unique(labels[indices], return_counts=True)
    target = counts.max() if len(counts) else 0
    for c, count in zip(classes, counts):
        members = np.asarray(indices)[labels[indices] == c]
        for pick in rng.choice(members, size=target - count, replace=True):
            plan.append((int(pick), int(rng.integers(0, 2 ** 31))))
    return plan


# ─── Batches ───────────────────────────────────────────────────────────────
def _batch_slices(count, batch_size):
    edges = list(range(0, count, batch_size)) + [count]
    slices = [(edges[i], edges[i + 1]) for i in range(len(edges) - 1)]
    # a trailing single-sample batch has no batch statistics
    if len(slices) > 1 and slices[-1][1] - slices[-1][0] == 1:
        slices[-2:] = [(slices[-2][0], count)]
    return slices


def iterate_batches(dataset, plan, batch_size, seed, epoch, augment_cfg=None, workers=0, dtype=np.float32):
    """Yield (x [N,3,R,R], labels [N]) in an order fixed by (seed, epoch).

    Up to `workers` batches beyond the current one are assembled ahead on worker
    threads; the yielded order and content do not depend on the worker count.
    """
    order = np.random.default_rng([seed, epoch]).permutation(len(plan))

    def assemble(bounds):
        start, stop = bounds
        xs, ys = [], []
        for position in order[start:stop]:
            index, aug_seed = plan[position]
            image = dataset.load(index)
            if aug_seed is not None:
                image = random_augment(image, augment_cfg or AugmentConfig(), aug_seed)
            if augment_cfg is not None:
                image = random_augment(image, augment_cfg, [seed, epoch, int(position)])
            xs.append(to_input(image, dtype))
            ys.append(dataset.labels[index])
        return np.stack(xs), np.asarray(ys, dtype=np.int64)

    slices = _batch_slices(len(plan), batch_size)
    if workers and workers > 0:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pending = deque()
            for bounds in slices:
                pending.append(pool.submit(assemble, bounds))
                if len(pending) > workers:
                    yield pending.popleft().result()
            while pending:
                yield pending.popleft().result()
    else:
        for bounds in slices:
            yield assemble(bounds)
