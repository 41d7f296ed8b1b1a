#!/usr/bin/env python3
"""Regenerates data/digits/ from scikit-learn's bundled handwritten-digits
dataset (the UCI optical recognition set: 1797 8x8 grayscale images, ten
classes). Pixel intensities 0..16 are rescaled to 0..255 bytes and written in
the IDX container format."""

import struct
from pathlib import Path

from sklearn.datasets import load_digits

OUT = Path(__file__).resolve().parent.parent / "data" / "digits"


def write_idx_images(path, images):
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(bytes(int(round(v * 255.0 / 16.0)) for v in images.reshape(-1)))


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(int(v) for v in labels))


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    d = load_digits()
    write_idx_images(OUT / "digits-images-idx3-ubyte", d.images)
    write_idx_labels(OUT / "digits-labels-idx1-ubyte", d.target)
    print(f"wrote {len(d.target)} images to {OUT}")


if __name__ == "__main__":
    main()
