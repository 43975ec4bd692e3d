#!/usr/bin/env python3
"""Convert the 10k-digit subset shipped in the `mnist` npm package to IDX files.

Usage:
    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/mnist_subset_to_idx.py package/src/digits data/mnist-10k

Writes gzip-compressed `images-idx3-ubyte.gz` and `labels-idx1-ubyte.gz`.
Rows are shuffled with a fixed seed so classes are interleaved.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def main(src: Path, dst: Path) -> None:
    rows = []
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        count = len(data) // 784
        for k in range(count):
            pixels = bytes(
                min(255, max(0, round(v * 255))) for v in data[k * 784 : (k + 1) * 784]
            )
            rows.append((pixels, digit))
    random.Random(20230101).shuffle(rows)
    dst.mkdir(parents=True, exist_ok=True)
    n = len(rows)
    images = struct.pack(">IIII", 0x00000803, n, 28, 28) + b"".join(p for p, _ in rows)
    labels = struct.pack(">II", 0x00000801, n) + bytes(l for _, l in rows)
    # mtime=0 keeps the archives byte-reproducible
    with open(dst / "images-idx3-ubyte.gz", "wb") as f:
        f.write(gzip.compress(images, mtime=0))
    with open(dst / "labels-idx1-ubyte.gz", "wb") as f:
        f.write(gzip.compress(labels, mtime=0))
    print(f"wrote {n} rows to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
