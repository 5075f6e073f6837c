import gzip
import json
import struct

import numpy as np
import pytest

from chinet.data import (IMAGE_MAGIC, LABEL_MAGIC, Dataset, add_noise, load_dir, load_idx,
                         load_raw_rgb, write_idx)
from chinet.errors import DataFormatError


def idx_bytes(magic, shape, payload):
    return struct.pack(">I", magic) + b"".join(struct.pack(">I", n) for n in shape) + bytes(payload)


def test_load_idx_hand_decoded(tmp_path):
    (tmp_path / "img").write_bytes(idx_bytes(IMAGE_MAGIC, (1, 2, 2), [0, 128, 255, 64]))
    (tmp_path / "lab").write_bytes(idx_bytes(LABEL_MAGIC, (1,), [7]))
    ds = load_idx(tmp_path / "img", tmp_path / "lab")
    assert ds.images.shape == (1, 4)
    assert np.allclose(ds.images[0], [0, 128 / 255, 1.0, 64 / 255])
    assert ds.images[0, 1] == pytest.approx(0.50196, abs=1e-5)
    assert ds.labels.tolist() == [7] and ds.image_shape == (2, 2)


def test_load_idx_gzip(tmp_path):
    with gzip.open(tmp_path / "img.gz", "wb") as fh:
        fh.write(idx_bytes(IMAGE_MAGIC, (1, 1, 2), [10, 20]))
    (tmp_path / "lab").write_bytes(idx_bytes(LABEL_MAGIC, (1,), [1]))
    assert load_idx(tmp_path / "img.gz", tmp_path / "lab").images.shape == (1, 2)


def test_load_idx_empty(tmp_path):
    (tmp_path / "img").write_bytes(idx_bytes(IMAGE_MAGIC, (0, 28, 28), []))
    (tmp_path / "lab").write_bytes(idx_bytes(LABEL_MAGIC, (0,), []))
    ds = load_idx(tmp_path / "img", tmp_path / "lab")
    assert len(ds) == 0 and ds.images.shape == (0, 784)


def test_load_idx_errors(tmp_path):
    (tmp_path / "img").write_bytes(idx_bytes(IMAGE_MAGIC, (2, 1, 1), [1, 2]))
    (tmp_path / "wrong").write_bytes(idx_bytes(IMAGE_MAGIC, (2, 1, 1), [0, 1]))
    with pytest.raises(DataFormatError, match="magic"):
        load_idx(tmp_path / "img", tmp_path / "wrong")
    (tmp_path / "short").write_bytes(idx_bytes(IMAGE_MAGIC, (3, 1, 1), [1, 2]))
    (tmp_path / "lab2").write_bytes(idx_bytes(LABEL_MAGIC, (2,), [0, 1]))
    with pytest.raises(DataFormatError, match="truncated"):
        load_idx(tmp_path / "short", tmp_path / "lab2")
    (tmp_path / "lab1").write_bytes(idx_bytes(LABEL_MAGIC, (1,), [0]))
    with pytest.raises(DataFormatError, match="count mismatch"):
        load_idx(tmp_path / "img", tmp_path / "lab1")
    with pytest.raises(FileNotFoundError, match="missing"):
        load_idx(tmp_path / "missing", tmp_path / "lab1")


def test_write_idx_roundtrip(tmp_path):
    arr = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
    write_idx(tmp_path / "a.gz", arr, IMAGE_MAGIC)
    write_idx(tmp_path / "l", np.array([1, 0], np.uint8), LABEL_MAGIC)
    ds = load_idx(tmp_path / "a.gz", tmp_path / "l")
    assert np.array_equal(np.round(ds.images * 255).astype(np.uint8), arr.reshape(2, 6))


def test_load_dir(tmp_path):
    for stem, magic, arr in (("train-images-idx3-ubyte", IMAGE_MAGIC, np.zeros((2, 2, 2))),
                             ("train-labels-idx1-ubyte", LABEL_MAGIC, np.array([0, 1])),
                             ("t10k-images-idx3-ubyte", IMAGE_MAGIC, np.zeros((1, 2, 2))),
                             ("t10k-labels-idx1-ubyte", LABEL_MAGIC, np.array([1]))):
        write_idx(tmp_path / (stem + ".gz"), arr, magic)
    train, test = load_dir(tmp_path)
    assert (len(train), len(test)) == (2, 1)
    assert train.split == "train" and test.split == "test"


def rgb_files(tmp_path, pixels, labels):
    n = len(labels)
    (tmp_path / "x.rgb").write_bytes(bytes(np.asarray(pixels, np.uint8).ravel()))
    (tmp_path / "x.rgb.json").write_text(json.dumps({"n": n, "height": 1, "width": 1}))
    write_idx(tmp_path / "y", np.asarray(labels, np.uint8), LABEL_MAGIC)


def test_raw_rgb_luma(tmp_path):
    rgb_files(tmp_path, [[255, 255, 255], [255, 0, 0]], [0, 1])
    ds = load_raw_rgb(tmp_path / "x.rgb", tmp_path / "x.rgb.json", tmp_path / "y")
    assert ds.images[0, 0] == pytest.approx(1.0)
    assert ds.images[1, 0] == pytest.approx(0.299)


def test_raw_rgb_empty_and_mismatch(tmp_path):
    rgb_files(tmp_path, np.zeros((0, 3)), [])
    assert len(load_raw_rgb(tmp_path / "x.rgb", {"n": 0, "height": 1, "width": 1}, tmp_path / "y")) == 0
    with pytest.raises(DataFormatError, match="metadata"):
        load_raw_rgb(tmp_path / "x.rgb", {"n": 2, "height": 1, "width": 1}, tmp_path / "y")


def test_dataset_invariants():
    with pytest.raises(DataFormatError):
        Dataset(np.array([[np.nan]]), np.array([0]))
    with pytest.raises(DataFormatError):
        Dataset(np.zeros((2, 1)), np.array([0]))


def test_noise():
    rng = np.random.default_rng(0)
    batch = np.zeros((1000, 100))
    assert np.array_equal(add_noise(batch, 0.0, rng), batch)
    noisy = add_noise(batch, 0.3, rng)
    assert 0.29 <= noisy.std() <= 0.31
    a = add_noise(batch[:5], 0.3, np.random.default_rng(7))
    b = add_noise(batch[:5], 0.3, np.random.default_rng(7))
    assert np.array_equal(a, b)
    norm = add_noise(batch, 0.3, rng, mode="norm")
    assert np.mean(np.linalg.norm(norm, axis=1) ** 2) == pytest.approx(0.09, rel=0.05)
    with pytest.raises(ValueError):
        add_noise(batch, -1.0, rng)
