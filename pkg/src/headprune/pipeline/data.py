"""Synthetic dataset generation and the APMD binary container.

Images are 32x32 grayscale procedural patterns: oriented bars at several
angles and stripe widths, checkerboards, and disc fields, all with
per-image jitter and gaussian pixel noise. Class identity lives in local
texture rather than absolute position, so a model that pools tokens by
mean can still separate the classes.

File layout (little-endian): magic 'APMD', u32 version=1, u32 count,
u32 height, u32 width, u32 channels, u32 num_classes, count*H*W*channels
pixel bytes, count label bytes.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"APMD"
VERSION = 1
IMAGE_SIZE = 32
NOISE_SIGMA = 0.1
MAX_CLASSES = 16

_HEADER = struct.Struct("<4sIIIIII")


def _bars(angle_deg, period):
    ca, sa = np.cos(np.deg2rad(angle_deg)), np.sin(np.deg2rad(angle_deg))
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE].astype(np.float64)

    def render(rng):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        t = ca * xx + sa * yy
        return 0.5 + 0.5 * np.cos(2.0 * np.pi * t / period + phase)

    return render


def _checker(cell):
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]

    def render(rng):
        ox, oy = rng.integers(0, cell, size=2)
        return (((xx + ox) // cell + (yy + oy) // cell) % 2).astype(np.float64)

    return render


def _discs(radius, count):
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE].astype(np.float64)

    def render(rng):
        img = np.zeros((IMAGE_SIZE, IMAGE_SIZE))
        for _ in range(count):
            cy, cx = rng.uniform(radius, IMAGE_SIZE - radius, size=2)
            img = np.maximum(img, ((xx - cx) ** 2 + (yy - cy) ** 2 <= radius ** 2)
                             .astype(np.float64))
        return img

    return render


PATTERNS = (
    _bars(0, 4), _bars(45, 4), _bars(90, 4), _bars(135, 4),
    _bars(0, 8), _bars(45, 8), _bars(90, 8), _bars(135, 8),
    _checker(2), _discs(3, 5),
    _checker(4), _discs(5, 3),
    _bars(22.5, 6), _bars(67.5, 6), _bars(112.5, 6), _bars(157.5, 6),
)


def gen_dataset(seed, count, classes):
    """Deterministic (images u8 (count, 32, 32, 1), labels u8)."""
    if not 1 <= classes <= MAX_CLASSES:
        raise FormatError(f"classes must lie in [1, {MAX_CLASSES}], got {classes}")
    rng = np.random.default_rng(seed)
    images = np.empty((count, IMAGE_SIZE, IMAGE_SIZE, 1), dtype=np.uint8)
    labels = np.empty(count, dtype=np.uint8)
    for j in range(count):
        label = int(rng.integers(0, classes))
        img = PATTERNS[label](rng)
        img = img + rng.normal(0.0, NOISE_SIGMA, img.shape)
        images[j, :, :, 0] = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
        labels[j] = label
    return images, labels


def to_float(images):
    """u8 pixels -> f32 in [-1, 1]."""
    return (np.asarray(images, dtype=np.float32) / 255.0 - 0.5) * 2.0


def write_dataset(path, images, labels, num_classes):
    images = np.ascontiguousarray(images, dtype=np.uint8)
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    count, h, w, ch = images.shape
    if labels.shape != (count,):
        raise FormatError(f"labels shape {labels.shape} does not match count {count}")
    if labels.size and labels.max() >= num_classes:
        raise FormatError(f"label {labels.max()} out of range for {num_classes} classes")
    header = _HEADER.pack(MAGIC, VERSION, count, h, w, ch, num_classes)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(header)
        f.write(images.tobytes())
        f.write(labels.tobytes())
    os.replace(tmp, path)


def read_dataset(path):
    """Returns (images u8, labels u8, num_classes); raises FormatError on
    malformed files."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, count, h, w, ch, num_classes = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pixels = count * h * w * ch
    expected = _HEADER.size + pixels + count
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload length {len(blob)} does not match header "
            f"(expected {expected})"
        )
    images = np.frombuffer(blob, dtype=np.uint8, count=pixels,
                           offset=_HEADER.size).reshape(count, h, w, ch)
    labels = np.frombuffer(blob, dtype=np.uint8, count=count,
                           offset=_HEADER.size + pixels)
    if labels.size and labels.max() >= num_classes:
        raise FormatError(f"{path}: label {labels.max()} out of range "
                          f"for {num_classes} classes")
    return images.copy(), labels.copy(), num_classes
