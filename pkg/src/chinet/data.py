"""Dataset ingestion: MNIST-style IDX files and raw interleaved RGB dumps."""
from __future__ import annotations

import gzip
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

# ITU-R BT.601 luma weights
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (n, d_in), values in [0, 1]
    labels: np.ndarray  # (n,), int64
    split: str = "train"
    image_shape: tuple = (0, 0)

    def __post_init__(self):
        if self.images.ndim != 2 or self.labels.ndim != 1:
            raise DataFormatError("images must be 2-D and labels 1-D")
        if len(self.images) != len(self.labels):
            raise DataFormatError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if not np.all(np.isfinite(self.images)):
            raise DataFormatError("non-finite pixel values")

    def __len__(self):
        return len(self.labels)

    @property
    def d_in(self) -> int:
        return self.images.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, expected_magic: int, path) -> np.ndarray:
    if len(raw) < 4:
        raise DataFormatError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DataFormatError(
            f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated header")
    shape = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(shape))
    if len(raw) - header < count:
        raise DataFormatError(f"{path}: truncated payload ({len(raw) - header} of {count} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(shape)


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Read an IDX image/label pair (optionally gzipped). Pixels are scaled by 1/255."""
    images = _parse_idx(_read_bytes(images_path), IMAGE_MAGIC, images_path)
    labels = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, labels_path)
    if len(images) != len(labels):
        raise DataFormatError(
            f"count mismatch: {len(images)} images in {images_path}, {len(labels)} labels in {labels_path}"
        )
    n, rows, cols = images.shape
    return Dataset(
        images.reshape(n, rows * cols).astype(np.float64) / 255.0,
        labels.astype(np.int64),
        split,
        (rows, cols),
    )


def load_raw_rgb(path, meta, labels_path, split: str = "train") -> Dataset:
    """Read interleaved 8-bit RGB images and grayscale them.

    ``meta`` is a dict or a JSON file with keys ``n``, ``height`` and ``width``;
    ``labels_path`` is an IDX label file.
    """
    if isinstance(meta, (str, os.PathLike)):
        meta = json.loads(Path(meta).read_text())
    n, height, width = int(meta["n"]), int(meta["height"]), int(meta["width"])
    raw = _read_bytes(path)
    expected = n * height * width * 3
    if len(raw) != expected:
        raise DataFormatError(f"{path}: {len(raw)} bytes, metadata implies {expected}")
    rgb = np.frombuffer(raw, dtype=np.uint8).reshape(n, height * width, 3)
    gray = (rgb.astype(np.float64) @ LUMA) / 255.0
    labels = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, labels_path).astype(np.int64)
    if len(labels) != n:
        raise DataFormatError(f"count mismatch: {n} images, {len(labels)} labels")
    return Dataset(gray, labels, split, (height, width))


def load_dir(data_dir) -> tuple[Dataset, Dataset]:
    """Load the standard MNIST file names (``.gz`` or plain) from a directory."""
    data_dir = Path(data_dir)

    def find(stem):
        for name in (stem, stem + ".gz"):
            if (data_dir / name).exists():
                return data_dir / name
        raise FileNotFoundError(f"no {stem}[.gz] in {data_dir}")

    train = load_idx(find("train-images-idx3-ubyte"), find("train-labels-idx1-ubyte"), "train")
    test = load_idx(find("t10k-images-idx3-ubyte"), find("t10k-labels-idx1-ubyte"), "test")
    return train, test


def write_idx(path, array, magic: int):
    """Write ``array`` (uint8) as an IDX file; gzipped when ``path`` ends in ``.gz``."""
    array = np.asarray(array, dtype=np.uint8)
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", n) for n in array.shape)
    payload = header + array.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
            fh.write(payload)
    else:
        path.write_bytes(payload)


def add_noise(batch, sigma: float, rng, mode: str = "pixel") -> np.ndarray:
    """Additive Gaussian input noise (training only).

    ``mode="pixel"``: per-pixel standard deviation ``sigma``.
    ``mode="norm"``: per-pixel std ``sigma / sqrt(d)`` so the noise vector has
    expected squared norm ``sigma**2``.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    batch = np.asarray(batch, dtype=np.float64)
    if sigma == 0:
        return batch.copy()
    if mode == "pixel":
        std = sigma
    elif mode == "norm":
        std = sigma / np.sqrt(batch.shape[-1])
    else:
        raise ValueError(f"unknown noise mode {mode!r}")
    return batch + rng.normal(0.0, std, size=batch.shape)
