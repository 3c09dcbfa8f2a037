#!/usr/bin/env python3
"""Export the scikit-learn handwritten digits set (8x8, 10 classes) as IDX files.

Regenerates tests/data/digits-images.idx3-ubyte and digits-labels.idx1-ubyte.
Pixel values 0..16 are rescaled to the 0..255 byte range.
"""
import struct
import sys
from pathlib import Path

from sklearn.datasets import load_digits


def main(out_dir: str) -> None:
    digits = load_digits()
    images = digits.images  # (n, 8, 8), float values 0..16
    labels = digits.target
    n, rows, cols = images.shape

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "digits-images.idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        scaled = (images * 255.0 / 16.0).round().astype("uint8")
        f.write(scaled.tobytes())

    with open(out / "digits-labels.idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.astype("uint8").tobytes())

    print(f"wrote {n} images ({rows}x{cols}) to {out}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data")
