#!/usr/bin/env python3
"""Write the 5000-image MNIST sample bundled with mlxtend as IDX files.

Usage: make_mnist_subset.py MLXTEND_WHEEL OUT_DIR

The sample is shuffled with a fixed seed and split 4000 train / 1000 test.
"""
import gzip
import io
import struct
import sys
import zipfile

import numpy as np


def write_idx(path, array):
    codes = {np.uint8: 0x08}
    with open(path, "wb") as f:
        f.write(struct.pack(">BBBB", 0, 0, codes[array.dtype.type], array.ndim))
        for extent in array.shape:
            f.write(struct.pack(">I", extent))
        f.write(array.tobytes())


def main():
    wheel, out = sys.argv[1], sys.argv[2]
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    table = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",")
    images = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.uint8)
    order = np.random.RandomState(20190101).permutation(len(labels))
    images, labels = images[order], labels[order]
    write_idx(f"{out}/train-images.idx3-ubyte", images[:4000])
    write_idx(f"{out}/train-labels.idx1-ubyte", labels[:4000])
    write_idx(f"{out}/test-images.idx3-ubyte", images[4000:])
    write_idx(f"{out}/test-labels.idx1-ubyte", labels[4000:])


if __name__ == "__main__":
    main()
