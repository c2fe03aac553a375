#!/usr/bin/env python3
# Copyright 2026 The ShiftMatch Authors
# SPDX-License-Identifier: Apache-2.0
"""Rebuild data/mnist10k from the digits bundled in the `mnist` npm package.

The package ships 10,000 MNIST training digits as JSON (pixel values in [0,1]
rounded to three decimals). Rounding x*255 recovers the original u8 pixels
exactly. The digits are shuffled with a fixed seed and written as gzipped
IDX files.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/make_mnist_subset.py package/src/digits data/mnist10k
"""
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np


def main(src: Path, dst: Path) -> None:
    images, labels = [], []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        block = np.asarray(flat, dtype=np.float64).reshape(-1, 784)
        images.append(np.rint(block * 255.0).astype(np.uint8))
        labels.extend([digit] * len(block))
    x = np.concatenate(images)
    y = np.asarray(labels, dtype=np.uint8)
    order = np.random.default_rng(20220701).permutation(len(y))
    x, y = x[order], y[order]

    dst.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(dst / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(y), 28, 28))
        f.write(x.tobytes())
    with gzip.GzipFile(dst / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(y)))
        f.write(y.tobytes())
    print(f"wrote {len(y)} digits to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
