"""
Staged training: Adam, parameter freezing and the per-epoch log.

Stage 1 initializes the backbone (scratch, a checkpoint or a short synthetic
pretraining pass), stage 2 fine-tunes every parameter under a freshly sized
head, stage 3 inserts the attention blocks and trains them together with the
final conv and head while everything else stays frozen.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from mushroomnet import ops
from mushroomnet.attention import AttentionStrategy, build_strategy
from mushroomnet.dataset import (AugmentConfig, DatasetSplit, balance_by_augmentation, generate_synthetic_dataset,
                                 iterate_batches)
from mushroomnet.embedding import classify_batch, head_loss
from mushroomnet.errors import ConfigError, DataFormatError
from mushroomnet.tensor import Tensor, check_finite, no_grad

logger = logging.getLogger(__name__)

STAGES = (1, 2, 3)
# parameter-name prefixes left trainable in stage 3
STAGE3_TRAINABLE = ('attention.', 'final_conv.', 'head.')
INIT_SOURCES = ('scratch', 'synthetic', 'checkpoint')
EPOCH_COLUMNS = ('stage', 'epoch', 'train_loss', 'val_loss', 'val_accuracy')


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 12
    epochs: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    workers: int = 0
    balance: bool = False
    augment: AugmentConfig | None = None
    # synthetic stage-1 pass
    pretrain_epochs: int = 2
    pretrain_classes: int = 4
    pretrain_images: int = 16

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError(f"batch size and epochs must be >= 1, got {self.batch_size}, {self.epochs}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"Adam betas must be in [0, 1), got {self.beta1}, {self.beta2}")

    def to_dict(self):
        return asdict(self)


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EpochRecord:
    stage: int
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


def adam_step(params, grads, state, cfg, frozen=()):
    """One bias-corrected Adam update, in place.

    Args:
        params: name -> Tensor
        grads: name -> gradient array (None for parameters that got no gradient)
        frozen: names that must not move
    Returns the updated state.
    """
    for name, grad in grads.items():
        if grad is not None:
            check_finite(grad, f"gradient of {name}; optimizer step aborted")
    state.step += 1
    t = state.step
    correction1 = 1.0 - cfg.beta1 ** t
    correction2 = 1.0 - cfg.beta2 ** t
    for name, tensor in params.items():
        grad = grads.get(name)
        if name in frozen or grad is None:
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(tensor.data)
            v = np.zeros_like(tensor.data)
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
        state.m[name], state.v[name] = m, v
        update = cfg.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + cfg.eps)
        tensor.data = (tensor.data - update).astype(tensor.data.dtype)
    return state


def freeze_mask(model, stage):
    """Names of the parameters held fixed in `stage`"""
    if stage not in STAGES:
        raise ConfigError(f"unknown training stage {stage!r}; choose from {STAGES}")
    if stage != 3:
        return set()
    return {name for name in model.params if not name.startswith(STAGE3_TRAINABLE)}


def apply_freeze(model, stage):
    if stage == 3:
        model.params.freeze_all_except(STAGE3_TRAINABLE)
    else:
        model.params.unfreeze_all()
    return model.params.frozen


class Objective:
    """Loss and class read-out for a plain classifier or a genetic-distance head"""

    def __init__(self, head=None, targets=None):
        if (head is None) != (targets is None):
            raise ConfigError("a genetic-distance head needs both a head config and a target set")
        self.head = head
        self.targets = targets

    @property
    def name(self):
        return 'classes' if self.head is None else f'gendist-{self.head.variant}-{self.head.metric}'

    def check(self, model):
        if self.targets is not None and model.num_classes != len(self.targets):
            raise ConfigError(f"model head has {model.num_classes} outputs but the target set has "
                              f"{len(self.targets)} species")

    def loss(self, outputs, labels):
        if self.head is None:
            return ops.cross_entropy(outputs, labels)
        return head_loss(outputs, labels, self.targets, self.head)

    def predict(self, outputs):
        outputs = np.asarray(outputs)
        if self.head is None:
            return np.argmax(outputs, axis=1)
        return classify_batch(outputs, self.head)[0]


def evaluate_split(model, dataset, indices, objective, batch_size=32):
    """(mean loss, accuracy) in eval mode; NaN for an empty split"""
    if len(indices) == 0:
        return float('nan'), float('nan')
    images = dataset.batch(indices, dtype=model.dtype)
    labels = dataset.labels[indices]
    outputs = model.predict_logits(images, batch_size)
    with no_grad():
        loss = objective.loss(Tensor(outputs), labels).item()
    accuracy = float(np.mean(objective.predict(outputs) == labels))
    return float(loss), accuracy


def training_plan(dataset, split, cfg):
    """(image index, augmentation seed) pairs for one stage"""
    if cfg.balance:
        return balance_by_augmentation(dataset.labels, split.train, seed=cfg.seed)
    return [(int(i), None) for i in split.train]


def run_stage(model, stage, dataset, split, cfg, objective=None):
    """Train one stage in place; returns (model, list of EpochRecord).

    The weights with the best validation accuracy seen are restored at the end
    (the last epoch's when the split has no validation samples).
    """
    objective = objective or Objective()
    if stage not in STAGES:
        raise ConfigError(f"unknown training stage {stage!r}; choose from {STAGES}")
    if stage == 3 and not model.spec.attention_layers:
        raise ConfigError("stage 3 trains attention blocks but the network has none "
                          f"(strategy {model.spec.strategy!r})")
    if len(split.train) == 0:
        raise ConfigError("training split is empty")
    objective.check(model)

    frozen = apply_freeze(model, stage)
    logger.info("stage %d: %d trainable / %d frozen tensors, objective %s",
                stage, len(model.params.tensors) - len(frozen), len(frozen), objective.name)
    plan = training_plan(dataset, split, cfg)
    state = AdamState()
    best_accuracy, best_state = -1.0, None
    log = []

    for epoch in range(1, cfg.epochs + 1):
        total, seen = 0.0, 0
        batches = iterate_batches(dataset, plan, cfg.batch_size, cfg.seed, epoch + 1000 * stage,
                                  augment_cfg=cfg.augment, workers=cfg.workers, dtype=model.dtype)
        for x, y in batches:
            model.params.zero_grad()
            outputs, _ = model(x, mode='train')
            loss = objective.loss(outputs, y)
            loss.backward()
            grads = {name: tensor.grad for name, tensor in model.params.items() if tensor.requires_grad}
            adam_step(model.params.tensors, grads, state, cfg, frozen=frozen)
            total += loss.item() * len(y)
            seen += len(y)

        val_loss, val_accuracy = evaluate_split(model, dataset, split.val, objective)
        record = EpochRecord(stage, epoch, total / seen, val_loss, val_accuracy)
        log.append(record)
        logger.info("stage %d epoch %d/%d: train_loss %.4f val_loss %.4f val_acc %.4f",
                    stage, epoch, cfg.epochs, record.train_loss, val_loss, val_accuracy)
        if len(split.val) == 0 or val_accuracy > best_accuracy:
            best_accuracy = val_accuracy
            best_state = model.params.state_arrays()

    model.params.load_arrays(best_state, strict=True)
    model.meta['stages'] = list(model.meta.get('stages') or []) + [stage]
    return model, log


# ─── Stage orchestration ───────────────────────────────────────────────────
def pretrain(model, source, cfg, checkpoint=None):
    """Stage 1: leave the model as initialized, load a checkpoint, or run a short synthetic pass"""
    if source not in INIT_SOURCES:
        raise ConfigError(f"unknown init source {source!r}; choose from {', '.join(INIT_SOURCES)}")
    log = []
    if source == 'checkpoint':
        if not checkpoint:
            raise ConfigError("init source 'checkpoint' needs a checkpoint path")
        ok, message = model.load_weights(checkpoint)
        if not ok:
            raise DataFormatError(message)
        logger.info("stage 1: %s", message)
        model.meta['stages'] = list(model.meta.get('stages') or []) + [1]
    elif source == 'synthetic':
        data = generate_synthetic_dataset(cfg.pretrain_classes, cfg.pretrain_images, model.spec.resolution,
                                          seed=cfg.seed + 1)
        everything = DatasetSplit(np.arange(len(data)), np.zeros(0, np.int64), np.zeros(0, np.int64), seed=cfg.seed)
        width = model.num_classes
        model.replace_head(data.num_classes, seed=cfg.seed + 1)
        pass_cfg = TrainConfig(**dict(cfg.to_dict(), epochs=cfg.pretrain_epochs, augment=None, balance=False))
        model, log = run_stage(model, 1, data, everything, pass_cfg)
        model.replace_head(width, seed=cfg.seed)
    else:
        logger.info("stage 1: training from scratch")
        model.meta['stages'] = list(model.meta.get('stages') or []) + [1]
    model.meta['init_source'] = source
    return model, log


def attach_attention(model, strategy, seed=0):
    """Model with the attention blocks of `strategy`, backbone weights carried over"""
    return model.with_spec(build_strategy(strategy, model.spec), seed=seed)


def train_stages(model, dataset, split, cfg, stages=STAGES, strategy='proposed', objective=None,
                 init_source='scratch', checkpoint=None):
    """Run the requested stages in order; returns (model, epoch log of stages 2 and 3)"""
    stages = tuple(sorted(set(stages)))
    objective = objective or Objective()
    width = dataset.num_classes if objective.targets is None else len(objective.targets)
    log = []
    if 1 in stages:
        model, _ = pretrain(model, init_source, cfg, checkpoint)
    if 2 in stages:
        if 1 in stages or model.num_classes != width:
            model.replace_head(width, seed=cfg.seed)
        model, stage_log = run_stage(model, 2, dataset, split, cfg, objective)
        log += stage_log
    if 3 in stages:
        if model.spec.strategy != AttentionStrategy.parse(strategy).value:
            model = attach_attention(model, strategy, seed=cfg.seed)
        model, stage_log = run_stage(model, 3, dataset, split, cfg, objective)
        log += stage_log
    return model, log


def epoch_frame(log):
    return pd.DataFrame([asdict(record) for record in log], columns=list(EPOCH_COLUMNS))


def write_epoch_log(log, path):
    """Epoch CSV; identical runs give byte-identical files"""
    epoch_frame(log).to_csv(path, index=False, float_format='%.8g')
    logger.info("wrote epoch log %s (%d rows)", path, len(log))
