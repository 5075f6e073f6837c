"""Report artifacts: CSV tables, diverging-palette PNG images and optional SVG plots."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_csv(path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def diverging_rgb(values) -> np.ndarray:
    """Map values to RGB: negative red, positive blue, zero white; scaled by the max ``|v|``."""
    v = np.asarray(values, dtype=np.float64)
    top = np.max(np.abs(v)) if v.size else 0.0
    t = v / top if top > 0 else np.zeros_like(v)
    rgb = np.ones(v.shape + (3,))
    neg, pos = np.clip(-t, 0, 1), np.clip(t, 0, 1)
    rgb[..., 0] -= pos
    rgb[..., 1] -= pos + neg
    rgb[..., 2] -= neg
    return np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8)


def save_image(values, path, scale: int = 4) -> Path:
    """Write a PNG plus a sidecar CSV holding the raw values (the lossless channel)."""
    from PIL import Image

    path = Path(path)
    v = np.atleast_2d(np.asarray(values, dtype=np.float64))
    img = Image.fromarray(diverging_rgb(v), mode="RGB")
    if scale > 1:
        img = img.resize((v.shape[1] * scale, v.shape[0] * scale), Image.NEAREST)
    img.save(path)
    np.savetxt(path.with_suffix(".csv"), v, delimiter=",", fmt="%.17g")
    return path


def save_gray(values, path, scale: int = 4) -> Path:
    from PIL import Image

    path = Path(path)
    v = np.atleast_2d(np.clip(np.asarray(values, dtype=np.float64), 0, 1))
    img = Image.fromarray(np.round(v * 255).astype(np.uint8), mode="L")
    if scale > 1:
        img = img.resize((v.shape[1] * scale, v.shape[0] * scale), Image.NEAREST)
    img.save(path)
    np.savetxt(path.with_suffix(".csv"), v, delimiter=",", fmt="%.17g")
    return path


def as_image(vector, shape):
    if shape and all(shape) and int(np.prod(shape)) == len(vector):
        return np.asarray(vector).reshape(shape)
    return np.asarray(vector)[None, :]


def line_plot(path, x, series: dict, xlabel: str, ylabel: str, logy: bool = False) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, y in series.items():
        xs = x if x is not None else np.arange(1, len(y) + 1)
        ax.plot(xs, y, label=label)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(series) > 1:
        ax.legend(fontsize="small")
    fig.tight_layout()
    # fixed metadata keeps the SVG reproducible
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)
