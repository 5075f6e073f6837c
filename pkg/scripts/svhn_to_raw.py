"""Convert SVHN cropped-digit .mat files into the raw RGB layout read by chinet.

Writes ``train.rgb``/``test.rgb`` (interleaved uint8 RGB), a ``<file>.json``
metadata twin and IDX label files. Label 10 (digit zero) becomes 0. Needs scipy.

    python scripts/svhn_to_raw.py train_32x32.mat test_32x32.mat data/svhn
    CHINET_SVHN_DIR=data/svhn pytest tests/test_acceptance.py -m slow
"""
import argparse
import json
import pathlib

import numpy as np
from scipy.io import loadmat

from chinet.data import LABEL_MAGIC, write_idx


def convert(mat_path, out_dir, split):
    mat = loadmat(mat_path)
    images = np.ascontiguousarray(np.transpose(mat["X"], (3, 0, 1, 2)), dtype=np.uint8)  # n, h, w, 3
    labels = mat["y"].ravel().astype(np.int64) % 10
    n, h, w, _ = images.shape
    rgb = out_dir / f"{split}.rgb"
    rgb.write_bytes(images.tobytes())
    (out_dir / f"{split}.rgb.json").write_text(json.dumps({"n": n, "height": h, "width": w}) + "\n")
    write_idx(out_dir / f"{split}-labels-idx1-ubyte", labels, LABEL_MAGIC)
    print(f"{split}: {n} images of {h}x{w} -> {rgb}")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("train_mat")
    parser.add_argument("test_mat")
    parser.add_argument("out_dir")
    args = parser.parse_args()
    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    convert(args.train_mat, out, "train")
    convert(args.test_mat, out, "test")


if __name__ == "__main__":
    main()
