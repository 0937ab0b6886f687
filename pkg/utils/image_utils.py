"""
Contains input image utilities: seeded synthetic images, raw float32 blobs
and input-size parsing for the command line.
"""

import logging

import numpy as np

from tensor.tensor import SeededUniform, Tensor, tensor_create
from utils.config import DEFAULT_DTYPE, MIN_INPUT_SIZE
from utils.errors import InvalidShapeError

logger = logging.getLogger(__name__)

IMAGE_CHANNELS = 3


def parse_size(text):
    """
    Parse an input size given as "224" or "HxW".

    Args:
        text: Size string

    Returns:
        tuple: (height, width)
    """
    parts = text.lower().split("x")
    if len(parts) not in (1, 2):
        raise ValueError(f"size must be N or HxW, got {text!r}")
    try:
        values = [int(p) for p in parts]
    except ValueError:
        raise ValueError(f"size must be N or HxW, got {text!r}") from None
    height, width = values if len(values) == 2 else (values[0], values[0])
    if min(height, width) < MIN_INPUT_SIZE:
        raise ValueError(f"input size {height}x{width} is below {MIN_INPUT_SIZE}x{MIN_INPUT_SIZE}")
    return height, width


def random_image(height, width=None, seed=0, batch=1, dtype=DEFAULT_DTYPE):
    """
    Seeded uniform(-1, 1) image batch.

    Args:
        height: Image height
        width: Image width (defaults to height)
        seed: Philox seed
        batch: Batch size
        dtype: float32 or float64

    Returns:
        Tensor: [batch, 3, height, width]
    """
    width = height if width is None else width
    return tensor_create((batch, IMAGE_CHANNELS, height, width), SeededUniform(seed, -1.0, 1.0), dtype=dtype)


def load_raw_image(path, height, width=None, dtype=DEFAULT_DTYPE):
    """
    Load a headerless little-endian float32 blob laid out as [3, H, W].

    Args:
        path: File path
        height: Image height
        width: Image width (defaults to height)
        dtype: dtype of the returned tensor

    Returns:
        Tensor: [1, 3, height, width]
    """
    width = height if width is None else width
    expected = IMAGE_CHANNELS * height * width
    try:
        data = np.fromfile(path, dtype="<f4")
    except OSError as exc:
        raise OSError(f"failed to read image from {path}: {exc.strerror or exc}") from exc
    if data.size != expected:
        raise InvalidShapeError(
            f"{path}: {data.size} float32 values, expected {expected} for [3, {height}, {width}]"
        )
    logger.debug("Loaded raw image %s (%dx%d)", path, height, width)
    return Tensor(data.reshape(1, IMAGE_CHANNELS, height, width), dtype=dtype)
