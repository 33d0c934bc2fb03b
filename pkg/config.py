import os

PROJECT_ROOT = os.path.dirname(os.path.abspath(__file__))


class Config:
    """Base configuration.

    Every UPPERCASE attribute is a run setting; a JSON file passed with --config
    and command-line flags override it under the lower-case key.
    """
    SEED = 0
    PRECISION = 'float32'
    ALLOW_PNG = False
    OUT = 'runs/latest'

    # data: a class-per-directory dataset, or a synthetic one when DATA is None
    DATA = None
    SYNTH_CLASSES = 3
    SYNTH_IMAGES = 50
    SPLIT_RATIOS = (0.8, 0.1, 0.1)
    STRATIFIED = True

    # network
    ALPHA = 1.0
    RESOLUTION = 224
    STRATEGY = 'proposed'
    FIRST_BNECK_EXP = 6
    SE_REDUCTION = 16
    ECA_KERNEL = 5

    # training
    STAGE = 'all'
    INIT_SOURCE = 'scratch'
    INIT_CHECKPOINT = None
    LEARNING_RATE = 1e-4
    BATCH_SIZE = 12
    EPOCHS = 30
    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8
    WORKERS = 0
    BALANCE = False
    PRETRAIN_EPOCHS = 2
    PRETRAIN_CLASSES = 4
    PRETRAIN_IMAGES = 16

    # augmentation ranges are not authoritative
    AUGMENT = False
    AUGMENT_PROBABILITY = 0.5
    AUGMENT_ROTATION_DEGREES = 20.0
    AUGMENT_CROP_FRACTION = 0.8
    AUGMENT_SHARPEN_RANGE = (1.0, 2.0)
    AUGMENT_CONTRAST_RANGE = (0.8, 1.2)
    AUGMENT_BRIGHTNESS_RANGE = (-20.0, 20.0)

    # head
    HEAD = 'classes'
    HEAD_VARIANT = 'mse_sum'
    METRIC = 'cosine'
    MATRIX = os.path.join(PROJECT_ROOT, 'data', 'its_distances.csv')
    NORMALIZE = 'none'
    DIAG = None
    DROP = ()
    SUBSET = ()

    # evaluation, interpretation, genetics
    CHECKPOINT = None
    PART = 'test'
    IMAGE = None
    TARGET_CLASS = None
    OVERLAY_ALPHA = 0.5
    FASTA = None
    DISTANCE_MODEL = 'p'
    BOOTSTRAP = 0


class DeskConfig(Config):
    """Small network and images so every command finishes on a laptop CPU"""
    ALPHA = 0.25
    RESOLUTION = 32
    EPOCHS = 10
    LEARNING_RATE = 3e-3


class FullConfig(Config):
    """Full-width network at 224 pixels with the reference training settings"""
    ALPHA = 1.0
    RESOLUTION = 224
    BATCH_SIZE = 12
    EPOCHS = 30
    LEARNING_RATE = 1e-4
    AUGMENT = True
    BALANCE = True


class TestingConfig(DeskConfig):
    """Testing configuration"""
    PRECISION = 'float64'
    EPOCHS = 2
    BATCH_SIZE = 6
    SYNTH_IMAGES = 10
    PRETRAIN_EPOCHS = 1
    PRETRAIN_IMAGES = 4


config = {
    'desk': DeskConfig,
    'full': FullConfig,
    'testing': TestingConfig,
    'default': DeskConfig
}
