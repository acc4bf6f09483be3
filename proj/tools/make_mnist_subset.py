#!/usr/bin/env python3
"""Write the 5000-digit MNIST sample bundled with mlxtend as IDX files.

    pip download mlxtend --no-deps -d /tmp/mlx
    python3 -m zipfile -e /tmp/mlx/mlxtend-*.whl /tmp/mlx
    python3 tools/make_mnist_subset.py /tmp/mlx/mlxtend/data/data/mnist_5k.csv.gz data/mnist5k

The sample is shuffled with a fixed seed and split 4000 train / 1000 test.
"""
import gzip
import struct
import sys
from pathlib import Path

import numpy as np


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    table = np.genfromtxt(gzip.open(src), delimiter=",")
    pixels, labels = table[:, :-1], table[:, -1].astype(int)
    order = np.random.default_rng(20240601).permutation(len(labels))
    pixels, labels = pixels[order], labels[order]
    write_images(out / "train-images.idx", pixels[:4000])
    write_labels(out / "train-labels.idx", labels[:4000])
    write_images(out / "test-images.idx", pixels[4000:])
    write_labels(out / "test-labels.idx", labels[4000:])


if __name__ == "__main__":
    main()
