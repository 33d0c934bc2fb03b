"""
Self-describing checkpoint container: a text header followed by raw arrays.
Byte layout is documented in docs/checkpoint-format.md.
"""

import json
import logging
import os

import numpy as np

from mushroomnet.errors import DataFormatError

logger = logging.getLogger(__name__)

MAGIC = 'MUSHROOMNET-CHECKPOINT'
VERSION = 1
SUPPORTED_DTYPES = ('<f4', '<f8', '<i8', '<u1')


def _encode_shape(shape):
    return ','.join(str(int(n)) for n in shape) if shape else '-'


def _decode_shape(text):
    return () if text == '-' else tuple(int(n) for n in text.split(','))


def save_checkpoint(path, arrays, meta=None):
    """Write named arrays plus a JSON metadata record to `path`.

    Args:
        arrays: mapping of name -> numpy array (names must not contain whitespace)
        meta: JSON-serializable dict stored verbatim in the header
    """
    header = [f"{MAGIC} {VERSION}", "meta " + json.dumps(meta or {}, sort_keys=True, separators=(',', ':'))]
    payloads = []
    offset = 0
    for name, array in arrays.items():
        if not name or any(ch.isspace() for ch in name):
            raise DataFormatError(f"checkpoint array name {name!r} must be non-empty without whitespace")
        array = np.asarray(array)
        dtype = array.dtype.newbyteorder('<') if array.dtype.byteorder == '>' else array.dtype
        code = dtype.str if dtype.str != '|u1' else '<u1'
        if code not in SUPPORTED_DTYPES:
            raise DataFormatError(f"checkpoint array {name!r} has unsupported dtype {array.dtype}")
        raw = np.ascontiguousarray(array, dtype=dtype).tobytes()
        header.append(f"array {name} {code} {_encode_shape(array.shape)} {offset} {len(raw)}")
        payloads.append(raw)
        offset += len(raw)

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'wb') as fh:
        fh.write(('\n'.join(header) + '\n\n').encode('utf-8'))
        for raw in payloads:
            fh.write(raw)
    logger.info("wrote checkpoint %s (%d arrays, %d payload bytes)", path, len(payloads), offset)


def load_checkpoint(path):
    """Read a checkpoint; returns (arrays dict in file order, meta dict)"""
    with open(path, 'rb') as fh:
        blob = fh.read()
    split = blob.find(b'\n\n')
    if split < 0:
        raise DataFormatError(f"{path}: missing header terminator")
    try:
        lines = blob[:split].decode('utf-8').split('\n')
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"{path}: checkpoint header is not UTF-8 text") from exc
    payload = memoryview(blob)[split + 2:]

    magic = lines[0].split(' ')
    if len(magic) != 2 or magic[0] != MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint file")
    if magic[1] != str(VERSION):
        raise DataFormatError(f"{path}: unsupported checkpoint version {magic[1]}")
    if len(lines) < 2 or not lines[1].startswith('meta '):
        raise DataFormatError(f"{path}: missing meta line")
    try:
        meta = json.loads(lines[1][5:])
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: checkpoint metadata is not valid JSON ({exc.msg})") from exc
    if not isinstance(meta, dict):
        raise DataFormatError(f"{path}: checkpoint metadata must be a JSON object")

    arrays = {}
    for line in lines[2:]:
        parts = line.split(' ')
        if len(parts) != 6 or parts[0] != 'array':
            raise DataFormatError(f"{path}: malformed header line {line!r}")
        _, name, code, shape_text, offset, nbytes = parts
        if code not in SUPPORTED_DTYPES:
            raise DataFormatError(f"{path}: unsupported dtype {code} for {name}")
        try:
            offset, nbytes = int(offset), int(nbytes)
            shape = _decode_shape(shape_text)
        except ValueError as exc:
            raise DataFormatError(f"{path}: malformed header line {line!r}") from exc
        if offset < 0 or nbytes < 0 or offset + nbytes > len(payload):
            raise DataFormatError(f"{path}: array {name} runs past end of file")
        array = np.frombuffer(payload[offset:offset + nbytes], dtype=np.dtype(code))
        if array.size != int(np.prod(shape, dtype=np.int64)):
            raise DataFormatError(f"{path}: array {name} byte count does not match shape {shape}")
        arrays[name] = array.reshape(shape).copy()
    logger.debug("loaded checkpoint %s (%d arrays)", path, len(arrays))
    return arrays, meta
