"""
Image plumbing on top of Pillow: a drawing canvas, array conversion,
resampling, photometric filters, heatmap colouring and PPM/PGM file I/O.

Pixel arrays are uint8 in H,W,C order; network tensors are float in C,H,W.
"""

import logging
import os

import numpy as np
from PIL import Image, ImageDraw, ImageEnhance

from mushroomnet.errors import DataFormatError, ShapeError
from mushroomnet.tensor import Tensor

logger = logging.getLogger(__name__)

MANDATORY_FORMATS = {'.ppm': 'PPM', '.pgm': 'PPM'}
OPTIONAL_FORMATS = {'.png': 'PNG'}


class Canvas:
    """RGB drawing surface backed by a PIL image"""

    def __init__(self, size, color=(0, 0, 0)):
        self.width, self.height = size
        self.image = Image.new('RGB', size, tuple(color[:3]))
        self.draw = ImageDraw.Draw(self.image)

    @classmethod
    def from_array(cls, array):
        """Wrap an H,W,3 array (clipped to uint8)"""
        if array.ndim != 3 or array.shape[2] != 3:
            raise ShapeError(f"canvas needs an H,W,3 array, got {array.shape}")
        if array.dtype != np.uint8:
            array = np.clip(np.rint(array), 0, 255).astype(np.uint8)
        canvas = cls((array.shape[1], array.shape[0]))
        canvas.image = Image.fromarray(array)
        canvas.draw = ImageDraw.Draw(canvas.image)
        return canvas

    def get_size(self):
        return (self.width, self.height)

    def ellipse(self, color, rect):
        """Filled ellipse inside (x, y, w, h)"""
        x, y, w, h = rect
        self.draw.ellipse([x, y, x + w, y + h], fill=tuple(color[:3]))

    def rect(self, color, rect):
        """Filled rectangle (x, y, w, h)"""
        x, y, w, h = rect
        self.draw.rectangle([x, y, x + w, y + h], fill=tuple(color[:3]))

    def to_array(self):
        return np.array(self.image.convert('RGB'))


def hsv_color(hue, saturation=1.0, value=1.0):
    """RGB tuple for a hue in [0, 1)"""
    hue = (hue % 1.0) * 6
    sector = int(hue) % 6
    frac = hue - int(hue)
    c = 255 * value
    p = c * (1 - saturation)
    q = c * (1 - saturation * frac)
    t = c * (1 - saturation * (1 - frac))
    rgb = [(c, t, p), (q, c, p), (p, c, t), (p, q, c), (t, p, c), (c, p, q)][sector]
    return tuple(int(round(v)) for v in rgb)


# ─── Geometry and photometry ───────────────────────────────────────────────
def _pil(array):
    if array.ndim == 3 and array.shape[2] == 1:
        array = array[:, :, 0]
    return Image.fromarray(np.ascontiguousarray(array, dtype=np.uint8))


def _array(image, channels):
    out = np.array(image)
    return out[:, :, None] if channels == 1 and out.ndim == 2 else out


def resize(array, size):
    """Bilinear resize of an H,W,C uint8 array to size x size"""
    if array.shape[0] == size and array.shape[1] == size:
        return array.copy()
    channels = array.shape[2] if array.ndim == 3 else 1
    return _array(_pil(array).resize((size, size), Image.Resampling.BILINEAR), channels)


def rotate(array, degrees):
    """Counter-clockwise rotation; multiples of 90 degrees are exact pixel permutations"""
    degrees = float(degrees) % 360.0
    if degrees % 90 == 0:
        return np.ascontiguousarray(np.rot90(array, k=int(degrees // 90), axes=(0, 1)))
    channels = array.shape[2] if array.ndim == 3 else 1
    return _array(_pil(array).rotate(degrees, resample=Image.Resampling.BILINEAR), channels)


def crop_resize(array, box, size):
    """Crop (left, top, width, height) then resize back to size x size"""
    left, top, width, height = (int(v) for v in box)
    h, w = array.shape[:2]
    if left < 0 or top < 0 or width < 1 or height < 1 or left + width > w or top + height > h:
        raise ShapeError(f"crop window {box} outside image bounds {w}x{h}")
    return resize(np.ascontiguousarray(array[top:top + height, left:left + width]), size)


def sharpen(array, factor):
    channels = array.shape[2] if array.ndim == 3 else 1
    return _array(ImageEnhance.Sharpness(_pil(array)).enhance(factor), channels)


def contrast(array, factor):
    channels = array.shape[2] if array.ndim == 3 else 1
    return _array(ImageEnhance.Contrast(_pil(array)).enhance(factor), channels)


def brightness(array, delta):
    """Additive brightness shift in pixel units, clipped to [0, 255]"""
    if delta == 0:
        return array.copy()
    return np.clip(array.astype(np.int16) + int(round(delta)), 0, 255).astype(np.uint8)


def upsample(values, height, width):
    """Bilinear resize of a float map via Pillow's 32-bit float mode"""
    image = Image.fromarray(np.ascontiguousarray(values, dtype=np.float32))
    return np.asarray(image.resize((width, height), Image.Resampling.BILINEAR), dtype=np.float64)


# ─── Heatmap colouring ─────────────────────────────────────────────────────
# anchor positions in [0, 1] -> RGB, blue through cyan, yellow and red
COLORMAP_ANCHORS = (
    (0.00, (0, 0, 128)),
    (0.125, (0, 0, 255)),
    (0.375, (0, 255, 255)),
    (0.625, (255, 255, 0)),
    (0.875, (255, 0, 0)),
    (1.00, (128, 0, 0)),
)


def build_colormap(anchors=COLORMAP_ANCHORS):
    """256-entry uint8 lookup table interpolated between anchors"""
    stops = np.array([a[0] for a in anchors])
    colors = np.array([a[1] for a in anchors], dtype=np.float64)
    grid = np.linspace(0.0, 1.0, 256)
    table = np.stack([np.interp(grid, stops, colors[:, c]) for c in range(3)], axis=1)
    return np.rint(table).astype(np.uint8)


COLORMAP = build_colormap()


def colorize(heatmap):
    """Map values in [0, 1] to RGB through the lookup table"""
    index = np.clip(np.rint(np.asarray(heatmap) * 255), 0, 255).astype(np.int64)
    return COLORMAP[index]


def overlay(image, heatmap, alpha=0.5):
    """(1 - alpha) * image + alpha * colorize(heatmap), clamped to uint8"""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    if image.shape[:2] != np.shape(heatmap):
        raise ShapeError(f"heatmap {np.shape(heatmap)} does not match image {image.shape[:2]}")
    blended = (1.0 - alpha) * image.astype(np.float64) + alpha * colorize(heatmap).astype(np.float64)
    return np.clip(np.rint(blended), 0, 255).astype(np.uint8)


# ─── File I/O ──────────────────────────────────────────────────────────────
def _format_for(path, allow_png):
    ext = os.path.splitext(path)[1].lower()
    if ext in MANDATORY_FORMATS:
        return MANDATORY_FORMATS[ext]
    if ext in OPTIONAL_FORMATS:
        if not allow_png:
            raise DataFormatError(f"{path}: PNG support is disabled (enable ALLOW_PNG)")
        return OPTIONAL_FORMATS[ext]
    raise DataFormatError(f"{path}: unsupported image format {ext or '(none)'}")


def load_array(path, allow_png=False):
    """Decode an image file to uint8 H,W,C (C = 1 for PGM, 3 otherwise)"""
    _format_for(path, allow_png)
    try:
        with Image.open(path) as image:
            image.load()
            if image.mode in ('L', '1', 'I', 'I;16'):
                return np.array(image.convert('L'))[:, :, None]
            return np.array(image.convert('RGB'))
    except (OSError, ValueError) as e:
        raise DataFormatError(f"cannot decode {path}: {e}") from e


def save_array(array, path, allow_png=False):
    """Encode uint8 H,W,C (C in {1, 3}) to PPM/PGM (or PNG when enabled)"""
    fmt = _format_for(path, allow_png)
    array = np.asarray(array)
    if array.ndim == 3 and array.shape[2] not in (1, 3):
        raise ShapeError(f"image must have 1 or 3 channels, got {array.shape}")
    if os.path.splitext(path)[1].lower() == '.pgm' and array.ndim == 3 and array.shape[2] == 3:
        raise ShapeError(f"{path}: PGM holds one channel, got {array.shape}")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    _pil(array.astype(np.uint8)).save(path, format=fmt)


def read_image(path, allow_png=False, dtype=None):
    """Image file -> Tensor[C,H,W] with values in [0, 1]"""
    array = load_array(path, allow_png)
    return Tensor(array.transpose(2, 0, 1) / 255.0, dtype=dtype)


def write_image(tensor, path, allow_png=False):
    """Tensor[C,H,W] (or a uint8 H,W,C array) with values in [0, 1] -> image file"""
    if isinstance(tensor, Tensor):
        data = tensor.data
        if data.ndim != 3:
            raise ShapeError(f"write_image expects Tensor[C,H,W], got {data.shape}")
        array = np.clip(np.rint(data * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    else:
        array = np.asarray(tensor)
    save_array(array, path, allow_png)
    logger.debug("wrote image %s", path)
