"""
Command line for MushroomNet runs.

Settings resolve profile class -> JSON file (--config) -> flags, and the
effective settings are written to <out>/config.json so any run can be
repeated from that file alone.
"""

import json
import logging
import os
import sys

import click
import numpy as np
import pandas as pd

# Import configuration
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config import config  # noqa: E402

from mushroomnet import imaging  # noqa: E402
from mushroomnet.attention import PLACEMENTS, AttentionStrategy  # noqa: E402
from mushroomnet.backbone import build_mushroomnet  # noqa: E402
from mushroomnet.dataset import (AugmentConfig, ImageDataset, generate_synthetic_dataset, split_dataset,  # noqa: E402
                                 to_input, write_dataset)
from mushroomnet.embedding import (VARIANT_LABELS, VARIANTS, EmbeddingTargetSet, HeadConfig, build_targets,  # noqa: E402
                                   evaluate_distance_prediction, head_config, label_embedding, reference_matrix)
from mushroomnet.engine import MushroomModel  # noqa: E402
from mushroomnet.errors import ConfigError, DataError, MushroomNetError, NumericalError  # noqa: E402
from mushroomnet.evaluation import ConfusionMatrix, macro_auc, roc_frame, write_report  # noqa: E402
from mushroomnet.genetics import (MODELS, bootstrap_uncertainty, distance_matrix, matrix_to_csv,  # noqa: E402
                                  parse_fasta, read_matrix, write_matrix)
from mushroomnet.gradcam import grad_cam  # noqa: E402
from mushroomnet.ops import softmax  # noqa: E402
from mushroomnet.tensor import Tensor, no_grad, set_default_dtype  # noqa: E402
from mushroomnet.training import (Objective, TrainConfig, attach_attention, epoch_frame, evaluate_split,  # noqa: E402
                                  pretrain, run_stage, train_stages, write_epoch_log)

logger = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
CHECKPOINT_NAME = 'model.ckpt'
# marks a keyword argument that should fall back to the resolved setting
SETTING = object()


# ─── Errors ────────────────────────────────────────────────────────────────
def _report(kind, reason):
    reason = ' '.join(str(reason).split())
    click.echo(f"mushroomnet: error={kind} reason={reason}", err=True)


def exit_code_for(error):
    if isinstance(error, NumericalError):
        return EXIT_NUMERIC
    if isinstance(error, (DataError, OSError)):
        return EXIT_DATA
    return EXIT_USAGE


class MushroomGroup(click.Group):
    """Group that turns library errors into exit codes and a one-line reason"""

    def make_context(self, info_name, args, parent=None, **extra):
        try:
            return super().make_context(info_name, args, parent=parent, **extra)
        except click.UsageError as e:
            _report('usage', e.format_message())
            e.exit_code = EXIT_USAGE
            raise

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            _report('usage', e.format_message())
            e.exit_code = EXIT_USAGE
            raise
        except MushroomNetError as e:
            _report(e.kind, e)
            ctx.exit(exit_code_for(e))
        except OSError as e:
            _report('io', e)
            ctx.exit(EXIT_DATA)


# ─── Settings ──────────────────────────────────────────────────────────────
def profile_settings(profile):
    cls = config[profile]
    return {name.lower(): getattr(cls, name) for name in dir(cls) if name.isupper()}


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, (np.integer, np.floating)):
        return value.item()
    return value


def resolve_settings(ctx, command, overrides):
    """Profile defaults, then the JSON file, then explicitly passed flags"""
    root = ctx.find_root().obj
    settings = profile_settings(root['profile'])
    if root['config_file']:
        with open(root['config_file'], encoding='utf-8') as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{root['config_file']}: not valid JSON ({e})") from e
        unknown = sorted(set(loaded) - set(settings) - {'command', 'profile'})
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        settings.update({k: v for k, v in loaded.items() if k in settings})
    for key, value in overrides.items():
        if value is None or value == ():
            continue
        settings[key] = value
    set_default_dtype(settings['precision'])
    return settings


def write_settings(settings, command):
    out = settings['out']
    os.makedirs(out, exist_ok=True)
    record = {key: _plain(value) for key, value in settings.items()}
    record['command'] = command
    path = os.path.join(out, 'config.json')
    with open(path, 'w', encoding='utf-8') as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write('\n')
    logger.info("resolved config written to %s", path)


def _default(key):
    return _plain(getattr(config['default'], key.upper()))


def opt(*decls, key, help, **kwargs):
    """click option with default None so profile and file values show through"""
    return click.option(*decls, key, default=None, show_default=False,
                        help=f"{help} [default: {_default(key)}]", **kwargs)


def options(*decorators):
    def apply(f):
        for decorator in reversed(decorators):
            f = decorator(f)
        return f
    return apply


COMMON = (
    opt('--out', key='out', type=click.Path(file_okay=False), help='Output directory'),
    opt('--seed', key='seed', type=int, help='Seed for data, splits and initialization'),
    opt('--precision', key='precision', type=click.Choice(['float32', 'float64']), help='Floating point precision'),
)
DATA = (
    opt('--data', key='data', type=click.Path(file_okay=False),
        help='Class-per-directory dataset; synthetic data when unset'),
    opt('--synth-classes', key='synth_classes', type=int, help='Synthetic classes'),
    opt('--synth-images', key='synth_images', type=int, help='Synthetic images per class'),
    opt('--split-ratios', key='split_ratios', type=float, nargs=3, help='Train/val/test ratios'),
    opt('--stratified/--no-stratified', key='stratified', help='Stratify the split by class'),
    opt('--allow-png/--no-allow-png', key='allow_png', help='Accept PNG images'),
)
NETWORK = (
    opt('--alpha', key='alpha', type=float, help='Width multiplier'),
    opt('--resolution', key='resolution', type=int, help='Input resolution (multiple of 32)'),
    opt('--strategy', key='strategy', type=click.Choice([member.value for member in AttentionStrategy]),
        help='Attention strategy'),
    opt('--first-bneck-exp', key='first_bneck_exp', type=int, help='Expansion width of the first bneck'),
    opt('--se-reduction', key='se_reduction', type=int, help='SE reduction ratio'),
    opt('--eca-kernel', key='eca_kernel', type=int, help='ECA kernel size'),
)
TRAINING = (
    opt('--stage', key='stage', type=click.Choice(['all', '1', '2', '3', '2,3', '1,2']), help='Stages to run'),
    opt('--init-source', key='init_source', type=click.Choice(['scratch', 'synthetic', 'checkpoint']),
        help='Stage 1 initialization'),
    opt('--init-checkpoint', key='init_checkpoint', type=click.Path(dir_okay=False),
        help='Checkpoint to start from'),
    opt('--learning-rate', key='learning_rate', type=float, help='Adam learning rate'),
    opt('--batch-size', key='batch_size', type=int, help='Batch size'),
    opt('--epochs', key='epochs', type=int, help='Epochs per stage'),
    opt('--workers', key='workers', type=int, help='Batch assembly threads'),
    opt('--balance/--no-balance', key='balance', help='Top up classes with augmented copies'),
    opt('--augment/--no-augment', key='augment', help='Random augmentation of training images'),
)
HEAD = (
    opt('--head', key='head', type=click.Choice(['classes', 'gendist']), help='Head type'),
    opt('--head-variant', key='head_variant', type=click.Choice(list(VARIANTS)), help='Genetic-distance loss'),
    opt('--metric', key='metric', type=click.Choice(['cosine', 'euclidean']), help='Label Embedding metric'),
    opt('--matrix', key='matrix', type=click.Path(dir_okay=False), help='Distance matrix CSV'),
    opt('--normalize', key='normalize', type=click.Choice(['none', 'minmax']), help='Target normalization'),
    opt('--diag', key='diag', type=float, help='Diagonal override for the targets'),
    opt('--drop', key='drop', multiple=True, help='Species to drop (repeatable)'),
    opt('--subset', key='subset', multiple=True, help='Species to keep, in order (repeatable)'),
)


# ─── Building blocks ───────────────────────────────────────────────────────
def _stages(value):
    if str(value) == 'all':
        return (1, 2, 3)
    try:
        return tuple(sorted({int(v) for v in str(value).split(',')}))
    except ValueError as e:
        raise ConfigError(f"bad stage list {value!r}") from e


def _dtype(s):
    return np.dtype(s['precision'])


def train_config(s):
    augment = None
    if s['augment']:
        augment = AugmentConfig(probability=s['augment_probability'], rotation_degrees=s['augment_rotation_degrees'],
                                crop_fraction=s['augment_crop_fraction'],
                                sharpen_range=tuple(s['augment_sharpen_range']),
                                contrast_range=tuple(s['augment_contrast_range']),
                                brightness_range=tuple(s['augment_brightness_range']))
    return TrainConfig(learning_rate=s['learning_rate'], batch_size=s['batch_size'], epochs=s['epochs'],
                       beta1=s['beta1'], beta2=s['beta2'], eps=s['eps'], seed=s['seed'], workers=s['workers'],
                       balance=bool(s['balance']), augment=augment, pretrain_epochs=s['pretrain_epochs'],
                       pretrain_classes=s['pretrain_classes'], pretrain_images=s['pretrain_images'])


def load_dataset(s, resolution=None):
    """Dataset described by settings; returns (dataset, provenance record)"""
    resolution = resolution or s['resolution']
    if s['data']:
        dataset = ImageDataset.from_directory(s['data'], resolution, allow_png=bool(s['allow_png']))
        return dataset, {'kind': 'directory', 'path': os.path.abspath(s['data'])}
    dataset = generate_synthetic_dataset(s['synth_classes'], s['synth_images'], resolution, seed=s['seed'])
    return dataset, {'kind': 'synthetic', 'classes': s['synth_classes'], 'images': s['synth_images'],
                     'seed': s['seed']}


def dataset_from_meta(meta, s, resolution, overridden):
    if overridden or not meta.get('data'):
        return load_dataset(s, resolution)[0]
    record = meta['data']
    if record['kind'] == 'directory':
        return ImageDataset.from_directory(record['path'], resolution, allow_png=bool(s['allow_png']))
    return generate_synthetic_dataset(record['classes'], record['images'], resolution, seed=record['seed'])


def split_for(dataset, record):
    return split_dataset(dataset.labels, ratios=tuple(record['ratios']), seed=record['seed'],
                         stratified=record['stratified'])


def targets_for(s, class_names, normalize=None, diag=SETTING):
    """Target set whose i-th species stands for dataset class i"""
    matrix = read_matrix(s['matrix'])
    drop = list(s['drop'] or ())
    if set(class_names) <= set(matrix.names):
        subset = list(class_names)
    elif s['subset']:
        subset = list(s['subset'])
    else:
        subset = [n for n in matrix.names if n not in drop][:len(class_names)]
        logger.warning("dataset classes are not matrix species; mapping them onto %s", ', '.join(subset))
    targets = build_targets(matrix, normalize=normalize or s['normalize'],
                            diag_override=s['diag'] if diag is SETTING else diag,
                            subset=subset, drop=[d for d in drop if d in subset])
    if len(targets) != len(class_names):
        raise ConfigError(f"{len(class_names)} dataset classes but {len(targets)} target species")
    return targets


def objective_for(s, class_names):
    if s['head'] == 'classes':
        return Objective()
    targets = targets_for(s, class_names)
    return Objective(head_config(targets, s['head_variant'], s['metric']), targets)


def head_record(objective):
    if objective.head is None:
        return {'kind': 'classes'}
    targets = objective.targets
    return {'kind': 'gendist', 'variant': objective.head.variant, 'metric': objective.head.metric,
            'names': list(targets.names), 'vectors': targets.vectors.tolist(),
            'normalize': targets.normalize, 'diag_override': targets.diag_override}


def objective_from_meta(meta, metric=None):
    record = meta.get('head') or {'kind': 'classes'}
    if record['kind'] == 'classes':
        return Objective()
    targets = EmbeddingTargetSet(tuple(record['names']), np.asarray(record['vectors'], dtype=np.float64),
                                 record['normalize'], record['diag_override'])
    return Objective(head_config(targets, record['variant'], metric or record['metric']), targets)


def build_model(s, width, strategy):
    spec = build_mushroomnet(width, strategy=strategy, alpha=s['alpha'], resolution=s['resolution'],
                             first_bneck_exp=s['first_bneck_exp'], se_reduction=s['se_reduction'],
                             eca_kernel=s['eca_kernel'])
    return MushroomModel(spec, seed=s['seed'], dtype=_dtype(s))


def _split_record(split):
    return {'seed': split.seed, 'ratios': list(split.ratios), 'stratified': split.stratified}


def write_split(dataset, split, path):
    rows = [{'part': part, 'image': dataset.reference(i), 'class': int(dataset.labels[i])}
            for part in ('train', 'val', 'test') for i in getattr(split, part)]
    pd.DataFrame(rows, columns=['part', 'image', 'class']).to_csv(path, index=False)


def _head_width(dataset, objective):
    return dataset.num_classes if objective.targets is None else len(objective.targets)


def _scores(outputs, objective):
    """Per-class scores for ROC: probabilities, or negated Label Embedding distances"""
    if objective.head is None:
        with no_grad():
            return softmax(Tensor(outputs)).data
    return -label_embedding(outputs, objective.head)


# ─── Commands ──────────────────────────────────────────────────────────────
@click.group(cls=MushroomGroup)
@click.option('--profile', type=click.Choice(sorted(config)), default='default', show_default=True,
              help='Settings profile from config.py')
@click.option('--config', 'config_file', type=click.Path(exists=True, dir_okay=False), default=None,
              help='JSON settings file (for example a previous run\'s config.json)')
@click.option('--verbose', '-v', is_flag=True, help='Debug logging')
@click.pass_context
def cli(ctx, profile, config_file, verbose):
    """MushroomNet: attention-augmented mushroom classifier with a genetic-distance head"""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format='%(asctime)s %(name)s %(levelname)s: %(message)s', force=True)
    ctx.obj = {'profile': profile, 'config_file': config_file}


@cli.command('synth-data')
@options(*COMMON, DATA[1], DATA[2], NETWORK[1])
@click.pass_context
def synth_data(ctx, **flags):
    """Write a synthetic class-per-directory dataset"""
    s = resolve_settings(ctx, 'synth-data', flags)
    write_settings(s, 'synth-data')
    dataset, _ = load_dataset(dict(s, data=None))
    write_dataset(dataset, s['out'])
    click.echo(f"Wrote {len(dataset)} images in {dataset.num_classes} classes to {s['out']}")


@cli.command()
@options(*COMMON, *DATA, *NETWORK, *TRAINING, *HEAD)
@click.pass_context
def train(ctx, **flags):
    """Run the staged training procedure"""
    s = resolve_settings(ctx, 'train', flags)
    write_settings(s, 'train')
    stages = _stages(s['stage'])
    dataset, provenance = load_dataset(s)
    split = split_dataset(dataset.labels, ratios=tuple(s['split_ratios']), seed=s['seed'],
                          stratified=bool(s['stratified']))
    objective = objective_for(s, dataset.class_names)
    cfg = train_config(s)

    if 1 not in stages and s['init_checkpoint']:
        model = MushroomModel.from_checkpoint(s['init_checkpoint'], dtype=_dtype(s))
    elif stages == (3,):
        raise ConfigError("stage 3 alone needs --init-checkpoint from a stage-2 run")
    else:
        model = build_model(s, _head_width(dataset, objective), 'none' if 3 in stages else s['strategy'])
    logger.info("training stages %s on %d images (%d/%d/%d split)", stages, len(dataset), *split.sizes())

    model, log = train_stages(model, dataset, split, cfg, stages=stages, strategy=s['strategy'],
                              objective=objective, init_source=s['init_source'], checkpoint=s['init_checkpoint'])
    test_loss, test_accuracy = evaluate_split(model, dataset, split.test, objective)
    model.meta.update(class_names=list(dataset.class_names), data=provenance, split=_split_record(split),
                      head=head_record(objective))
    model.save(os.path.join(s['out'], CHECKPOINT_NAME))
    write_epoch_log(log, os.path.join(s['out'], 'epochs.csv'))
    write_split(dataset, split, os.path.join(s['out'], 'split.csv'))
    click.echo(f"Trained {model.spec.strategy} network, stages {','.join(map(str, stages))}: "
               f"test accuracy {test_accuracy:.4f}, test loss {test_loss:.4f}")


@cli.command('eval')
@options(*COMMON, DATA[0], DATA[5],
         opt('--checkpoint', key='checkpoint', type=click.Path(dir_okay=False), help='Trained model'),
         opt('--part', key='part', type=click.Choice(['train', 'val', 'test']), help='Split part to evaluate'),
         opt('--metric', key='metric', type=click.Choice(['cosine', 'euclidean']), help='Label Embedding metric'))
@click.pass_context
def evaluate(ctx, **flags):
    """Confusion matrix, metrics table and ROC points for a trained model"""
    s = resolve_settings(ctx, 'eval', flags)
    if not s['checkpoint']:
        raise ConfigError("eval needs --checkpoint")
    write_settings(s, 'eval')
    model = MushroomModel.from_checkpoint(s['checkpoint'])
    meta = model.meta
    dataset = dataset_from_meta(meta, s, model.spec.resolution, overridden=flags['data'] is not None)
    split = split_for(dataset, meta.get('split') or {'seed': s['seed'], 'ratios': s['split_ratios'],
                                                     'stratified': s['stratified']})
    indices = getattr(split, s['part'])
    if len(indices) == 0:
        raise DataError(f"the {s['part']} split is empty")
    objective = objective_from_meta(meta, flags['metric'])

    images = dataset.batch(indices, dtype=model.dtype)
    labels = dataset.labels[indices]
    outputs = model.predict_logits(images)
    predictions = objective.predict(outputs)
    names = meta.get('class_names') or dataset.class_names
    cm = ConfusionMatrix.from_predictions(labels, predictions, len(names), names)
    out = s['out']
    cm.to_csv(os.path.join(out, 'confusion.csv'))
    write_report(cm, os.path.join(out, 'metrics.csv'))

    summary = {'part': s['part'], 'samples': int(len(labels)), 'accuracy': float(np.mean(predictions == labels))}
    scores = _scores(outputs, objective)
    if len(np.unique(labels)) >= 2:
        roc_frame(scores, labels, list(names)).to_csv(os.path.join(out, 'roc.csv'), index=False)
        summary['macro_auc'] = macro_auc(scores, labels)
    else:
        logger.warning("ROC skipped: the %s split holds a single class", s['part'])
    if objective.targets is not None:
        try:
            report = evaluate_distance_prediction(model, images, labels, objective.targets)
        except DataError as e:
            logger.warning("distance prediction skipped: %s", e)
        else:
            write_matrix_rows(report.names, report.predicted, os.path.join(out, 'predicted_distances.csv'))
            write_matrix_rows(report.names, report.absolute_error, os.path.join(out, 'distance_error.csv'))
            write_matrix_rows(report.names, report.signed_error, os.path.join(out, 'distance_signed_error.csv'))
            summary['distance_mae'] = report.mean_absolute_error
    with open(os.path.join(out, 'summary.json'), 'w', encoding='utf-8') as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    click.echo(f"Evaluated {summary['samples']} {s['part']} images: accuracy {summary['accuracy']:.4f}")


def write_matrix_rows(names, values, path):
    with open(path, 'w', encoding='utf-8', newline='') as fh:
        fh.write(matrix_to_csv(names, values))


@cli.command()
@options(COMMON[0], DATA[5],
         opt('--checkpoint', key='checkpoint', type=click.Path(dir_okay=False), help='Trained model'),
         opt('--image', key='image', type=click.Path(dir_okay=False), help='Image to explain'),
         opt('--class', key='target_class', type=int, help='Class to explain; predicted class when unset'),
         opt('--overlay-alpha', key='overlay_alpha', type=float, help='Heatmap opacity in the overlay'))
@click.pass_context
def gradcam(ctx, **flags):
    """Grad-CAM heatmap and overlay for one image"""
    s = resolve_settings(ctx, 'gradcam', flags)
    if not s['checkpoint'] or not s['image']:
        raise ConfigError("gradcam needs --checkpoint and --image")
    write_settings(s, 'gradcam')
    model = MushroomModel.from_checkpoint(s['checkpoint'])
    array = imaging.load_array(s['image'], allow_png=bool(s['allow_png']))
    if array.shape[2] == 1:
        array = np.repeat(array, 3, axis=2)
    array = imaging.resize(array, model.spec.resolution)
    x = to_input(array, model.dtype)
    target = s['target_class']
    if target is None:
        target = int(model.predict(x[None])[0])
    heatmap = grad_cam(model, x, target)
    gray = np.clip(np.rint(heatmap.upsampled * 255), 0, 255).astype(np.uint8)[:, :, None]
    imaging.save_array(gray, os.path.join(s['out'], 'heatmap.pgm'))
    imaging.save_array(heatmap.overlay(array, s['overlay_alpha']), os.path.join(s['out'], 'overlay.ppm'))
    click.echo(f"Wrote Grad-CAM for class {target} to {s['out']}")


@cli.group()
def gendist():
    """Genetic distance matrices and target sets"""


@gendist.command('compute')
@options(*COMMON,
         opt('--fasta', key='fasta', type=click.Path(dir_okay=False), help='Aligned FASTA'),
         opt('--model', '--distance-model', key='distance_model', type=click.Choice(list(MODELS)),
             help='Substitution model'),
         opt('--bootstrap', key='bootstrap', type=int, help='Bootstrap replicates (0 = none)'))
@click.pass_context
def gendist_compute(ctx, **flags):
    """Pairwise distance matrix from aligned sequences"""
    s = resolve_settings(ctx, 'gendist compute', flags)
    if not s['fasta']:
        raise ConfigError("gendist compute needs --fasta")
    write_settings(s, 'gendist compute')
    with open(s['fasta'], encoding='utf-8') as fh:
        seqs = parse_fasta(fh.read())
    matrix = distance_matrix(seqs, s['distance_model'])
    write_matrix(matrix, os.path.join(s['out'], 'distances.csv'))
    if s['bootstrap']:
        sd = bootstrap_uncertainty(seqs, s['distance_model'], reps=s['bootstrap'], seed=s['seed'])
        write_matrix_rows(seqs.names, sd, os.path.join(s['out'], 'bootstrap_sd.csv'))
    click.echo(f"Wrote {s['distance_model']} distances for {len(matrix)} sequences to {s['out']}")


@gendist.command('targets')
@options(COMMON[0], *HEAD[3:])
@click.pass_context
def gendist_targets(ctx, **flags):
    """Embedding targets: subset, normalize, override the diagonal"""
    s = resolve_settings(ctx, 'gendist targets', flags)
    write_settings(s, 'gendist targets')
    targets = build_targets(read_matrix(s['matrix']), normalize=s['normalize'], diag_override=s['diag'],
                            subset=list(s['subset']) or None, drop=list(s['drop']) or None)
    write_matrix_rows(targets.names, targets.vectors, os.path.join(s['out'], 'targets.csv'))
    click.echo(f"Wrote {len(targets)}-species targets to {s['out']}")


@cli.command()
@options(*COMMON[:1], DATA[0], DATA[5],
         opt('--checkpoint', key='checkpoint', type=click.Path(dir_okay=False), help='Trained model'),
         opt('--matrix', key='matrix', type=click.Path(dir_okay=False),
             help='Reference distance matrix; the checkpoint targets when unset'),
         opt('--metric', key='metric', type=click.Choice(['cosine', 'euclidean']), help='Label Embedding metric'),
         opt('--part', key='part', type=click.Choice(['train', 'val', 'test']), help='Split part to classify'))
@click.pass_context
def classify(ctx, **flags):
    """Label Embedding rows and nearest-species predictions"""
    s = resolve_settings(ctx, 'classify', flags)
    if not s['checkpoint']:
        raise ConfigError("classify needs --checkpoint")
    write_settings(s, 'classify')
    model = MushroomModel.from_checkpoint(s['checkpoint'])
    meta = model.meta
    objective = objective_from_meta(meta, s['metric'])
    names = meta.get('class_names') or []
    if objective.head is None or flags['matrix'] is not None:
        dataset_names = names or [f'class_{i}' for i in range(model.num_classes)]
        normalize = objective.targets.normalize if objective.targets is not None else s['normalize']
        targets = targets_for(s, dataset_names, normalize=normalize, diag=None)
        cfg = HeadConfig('softmax' if objective.head is None else objective.head.variant, s['metric'],
                         reference_matrix(targets))
    else:
        cfg = objective.head
    if cfg.width != model.num_classes:
        raise ConfigError(f"reference matrix has {cfg.width} species but the model emits {model.num_classes} values")

    dataset = dataset_from_meta(meta, s, model.spec.resolution, overridden=flags['data'] is not None)
    split = split_for(dataset, meta.get('split') or {'seed': s['seed'], 'ratios': s['split_ratios'],
                                                     'stratified': s['stratified']})
    indices = getattr(split, s['part'])
    outputs = model.predict_logits(dataset.batch(indices, dtype=model.dtype))
    distances = label_embedding(outputs, cfg)
    frame = pd.DataFrame(distances, columns=list(cfg.reference.names))
    frame.insert(0, 'predicted', [cfg.reference.names[i] for i in np.argmin(distances, axis=1)])
    frame.insert(0, 'true', [cfg.reference.names[dataset.labels[i]] for i in indices])
    frame.insert(0, 'image', [dataset.reference(i) for i in indices])
    path = os.path.join(s['out'], 'label_embedding.csv')
    frame.to_csv(path, index=False, float_format='%.6f')
    accuracy = float(np.mean(frame['predicted'] == frame['true'])) if len(frame) else float('nan')
    click.echo(f"Classified {len(frame)} images by {cfg.metric} Label Embedding: accuracy {accuracy:.4f}")


# ─── Comparisons ───────────────────────────────────────────────────────────
@cli.group()
def compare():
    """Train several configurations on identical data and tabulate them"""


def _compare_setup(ctx, command, flags):
    s = resolve_settings(ctx, command, flags)
    write_settings(s, command)
    dataset, _ = load_dataset(s)
    split = split_dataset(dataset.labels, ratios=tuple(s['split_ratios']), seed=s['seed'],
                          stratified=bool(s['stratified']))
    return s, dataset, split


def _score_row(model, dataset, split, objective, **labels):
    val_loss, val_accuracy = evaluate_split(model, dataset, split.val, objective)
    test_loss, test_accuracy = evaluate_split(model, dataset, split.test, objective)
    return dict(labels, val_accuracy=val_accuracy, val_loss=val_loss, test_accuracy=test_accuracy,
                test_loss=test_loss)


@compare.command('strategies')
@options(*COMMON, *DATA, *NETWORK[:2], *NETWORK[3:], *TRAINING[1:], *HEAD,
         click.option('--strategies', multiple=True, type=click.Choice([member.value for member in PLACEMENTS]),
                      help='Strategies to compare [default: all]'))
@click.pass_context
def compare_strategies(ctx, strategies, **flags):
    """Stage 3 of every attention strategy from one shared stage-2 backbone"""
    s, dataset, split = _compare_setup(ctx, 'compare strategies', flags)
    objective = objective_for(s, dataset.class_names)
    cfg = train_config(s)
    base = build_model(s, _head_width(dataset, objective), 'none')
    base, _ = pretrain(base, s['init_source'], cfg, s['init_checkpoint'])
    base.replace_head(_head_width(dataset, objective), seed=s['seed'])
    base, base_log = run_stage(base, 2, dataset, split, cfg, objective)

    rows = [_score_row(base, dataset, split, objective, model='none')]
    logs = [epoch_frame(base_log).assign(model='none')]
    for strategy in strategies or [member.value for member in PLACEMENTS if member is not AttentionStrategy.NONE]:
        if strategy == AttentionStrategy.NONE.value:
            continue
        model = attach_attention(base, strategy, seed=s['seed'])
        model, log = run_stage(model, 3, dataset, split, cfg, objective)
        rows.append(_score_row(model, dataset, split, objective, model=strategy))
        logs.append(epoch_frame(log).assign(model=strategy))
        click.echo(f"{strategy}: val {rows[-1]['val_accuracy']:.4f} test {rows[-1]['test_accuracy']:.4f}")
    columns = ['model', 'val_accuracy', 'val_loss', 'test_accuracy', 'test_loss']
    pd.DataFrame(rows, columns=columns).to_csv(os.path.join(s['out'], 'strategies.csv'), index=False,
                                               float_format='%.6f')
    pd.concat(logs).to_csv(os.path.join(s['out'], 'epochs.csv'), index=False, float_format='%.8g')
    click.echo(f"Compared {len(rows)} networks; table in {s['out']}")


def _diag_value(text):
    return None if str(text).lower() == 'none' else float(text)


@compare.command('heads')
@options(*COMMON, *DATA, *NETWORK, *TRAINING, *HEAD[2:4], HEAD[6], HEAD[7],
         click.option('--variants', multiple=True, type=click.Choice(list(VARIANTS)),
                      help='Head losses to compare [default: all]'),
         click.option('--normalizations', multiple=True, type=click.Choice(['none', 'minmax']),
                      help='Target normalizations [default: none and minmax]'),
         click.option('--diags', multiple=True, help="Diagonal overrides, 'none' for the raw diagonal "
                                                     "[default: none and -1]"))
@click.pass_context
def compare_heads(ctx, variants, normalizations, diags, **flags):
    """Genetic-distance head variants crossed with normalization and diagonal override"""
    s, dataset, split = _compare_setup(ctx, 'compare heads', flags)
    cfg = train_config(s)
    stages = _stages(s['stage'])
    rows = []
    for variant in variants or VARIANTS:
        grid = [('none', None)] if variant == 'softmax' else \
            [(n, _diag_value(d)) for n in (normalizations or ('none', 'minmax')) for d in (diags or ('none', '-1'))]
        for normalize, diag in grid:
            targets = targets_for(s, dataset.class_names, normalize=normalize, diag=diag)
            objective = Objective(head_config(targets, variant, s['metric']), targets)
            model = build_model(s, len(targets), 'none' if 3 in stages else s['strategy'])
            model, _ = train_stages(model, dataset, split, cfg, stages=stages, strategy=s['strategy'],
                                    objective=objective, init_source=s['init_source'],
                                    checkpoint=s['init_checkpoint'])
            label = VARIANT_LABELS[variant] + ('' if variant == 'softmax' else
                                               f"-{normalize}" + ('' if diag is None else f"-({diag:g})"))
            rows.append(_score_row(model, dataset, split, objective, model=label, variant=variant,
                                   normalize=normalize, diag=diag))
            click.echo(f"{label}: val {rows[-1]['val_accuracy']:.4f} test {rows[-1]['test_accuracy']:.4f}")
    columns = ['model', 'variant', 'normalize', 'diag', 'val_accuracy', 'val_loss', 'test_accuracy', 'test_loss']
    pd.DataFrame(rows, columns=columns).to_csv(os.path.join(s['out'], 'heads.csv'), index=False,
                                               float_format='%.6f')
    click.echo(f"Compared {len(rows)} heads; table in {s['out']}")


def main():
    cli(prog_name='mushroomnet')
