#!/usr/bin/env python3
"""Build the 14x14 MNIST subset used by the acceptance test.

Reads the per-digit JSON files shipped in the npm `mnist` package
(src/digits/{0..9}.json, each {"data": [...]} holding 28x28 images flattened
with values in [0, 1]), average-pools 2x2 blocks and writes IDX files.

    python3 scripts/make_mnist_subset.py /path/to/mnist/src/digits crates/core/tests/data
"""
import json
import struct
import sys
from pathlib import Path

import numpy as np

PER_CLASS = 500


def main(src: Path, out: Path) -> None:
    images, labels = [], []
    per_digit = []
    for d in range(10):
        raw = np.asarray(json.loads((src / f"{d}.json").read_text())["data"], dtype=np.float64)
        imgs = raw.reshape(-1, 28, 28)[:PER_CLASS]
        pooled = imgs.reshape(-1, 14, 2, 14, 2).mean(axis=(2, 4))
        per_digit.append(np.rint(pooled * 255).clip(0, 255).astype(np.uint8))
    # interleave classes so any prefix is balanced
    for i in range(PER_CLASS):
        for d in range(10):
            images.append(per_digit[d][i])
            labels.append(d)
    out.mkdir(parents=True, exist_ok=True)
    n = len(images)
    with open(out / "mnist14-images.idx", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 14, 14))
        f.write(np.stack(images).tobytes())
    with open(out / "mnist14-labels.idx", "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(labels))
    print(f"wrote {n} images to {out}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
