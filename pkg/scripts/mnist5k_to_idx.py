"""Convert the 5000-sample MNIST subset bundled with mlxtend into gzipped IDX files.

The subset is sorted by label, so it is split per class (400 train / 100 test)
and each split is shuffled with a fixed seed.

    pip download --no-deps mlxtend -d /tmp/wheels
    python scripts/mnist5k_to_idx.py /tmp/wheels/mlxtend-*.whl data/mnist5k
"""
import argparse
import gzip
import io
import pathlib
import struct
import zipfile

import numpy as np

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def write_idx(path, array, magic):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", n) for n in array.shape)
    # mtime=0 keeps the archive byte-identical across runs
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
        fh.write(header + array.astype(np.uint8).tobytes())


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("wheel")
    parser.add_argument("out_dir")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    with zipfile.ZipFile(args.wheel) as zf:
        table = np.loadtxt(io.BytesIO(gzip.decompress(zf.read(MEMBER))), delimiter=",")
    images = table[:, :-1].reshape(-1, 28, 28).astype(np.uint8)
    labels = table[:, -1].astype(np.uint8)

    rng = np.random.default_rng(args.seed)
    train_idx, test_idx = [], []
    for c in range(10):
        idx = rng.permutation(np.flatnonzero(labels == c))
        train_idx.append(idx[:400])
        test_idx.append(idx[400:])
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = rng.permutation(np.concatenate(test_idx))

    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images-idx3-ubyte.gz", images[train_idx], 0x803)
    write_idx(out / "train-labels-idx1-ubyte.gz", labels[train_idx], 0x801)
    write_idx(out / "t10k-images-idx3-ubyte.gz", images[test_idx], 0x803)
    write_idx(out / "t10k-labels-idx1-ubyte.gz", labels[test_idx], 0x801)
    print(f"wrote {len(train_idx)} train / {len(test_idx)} test samples to {out}")


if __name__ == "__main__":
    main()
