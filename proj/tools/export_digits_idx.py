#!/usr/bin/env python3
"""Exports the scikit-learn handwritten-digits dataset as IDX file pairs.

Produces train/test image+label files in the same layout as the MNIST IDX
files (big-endian headers, unsigned-byte payloads), so the simulator's loader
consumes them unchanged. The 8x8 0..16 pixel values are rescaled to 0..255.

Usage: export_digits_idx.py <output-dir>
"""

import struct
import sys
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits

TRAIN_FRACTION = 0.8
SHUFFLE_SEED = 20240101


def write_idx_images(path: Path, images: np.ndarray) -> None:
    n, rows, cols = images.shape
    with path.open("wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path: Path, labels: np.ndarray) -> None:
    with path.open("wb") as f:
        f.write(struct.pack(">II", 0x00000801, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def main() -> int:
    if len(sys.argv) != 2:
        print(__doc__, file=sys.stderr)
        return 1
    out_dir = Path(sys.argv[1])
    out_dir.mkdir(parents=True, exist_ok=True)

    digits = load_digits()
    images = np.round(digits.images * (255.0 / 16.0)).astype(np.uint8)
    labels = digits.target.astype(np.uint8)

    order = np.random.RandomState(SHUFFLE_SEED).permutation(len(labels))
    images, labels = images[order], labels[order]
    split = int(len(labels) * TRAIN_FRACTION)

    write_idx_images(out_dir / "train-images-idx3-ubyte", images[:split])
    write_idx_labels(out_dir / "train-labels-idx1-ubyte", labels[:split])
    write_idx_images(out_dir / "t10k-images-idx3-ubyte", images[split:])
    write_idx_labels(out_dir / "t10k-labels-idx1-ubyte", labels[split:])
    print(f"wrote {split} train / {len(labels) - split} test examples to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
