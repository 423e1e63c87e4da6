#!/usr/bin/env python3
"""Fetch a real-MNIST subset and write it as standard IDX files.

The npm package `mnist` bundles ~10k genuine 28x28 MNIST digits (roughly
1000 per class) as JSON, which makes it reachable from package mirrors even
when general network access is unavailable. This script downloads that
package with `npm pack`, converts the pixel data back to bytes, and emits

    <out>/images-idx3-ubyte
    <out>/labels-idx1-ubyte

in the classic big-endian IDX format the lab's loader consumes.

Usage: python3 tools/fetch_mnist.py [--out data/mnist]
"""

import argparse
import json
import struct
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path


def fetch_package(workdir: Path) -> Path:
    subprocess.run(
        ["npm", "pack", "mnist@1.1.0"],
        cwd=workdir,
        check=True,
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
    )
    tarball = next(workdir.glob("mnist-*.tgz"))
    with tarfile.open(tarball) as tar:
        tar.extractall(workdir)
    return workdir / "package" / "src" / "digits"


def write_idx(out_dir: Path, images: list, labels: list) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    n = len(labels)
    with open(out_dir / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(out_dir / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(labels))


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/mnist", help="output directory")
    args = parser.parse_args()

    images, labels = [], []
    with tempfile.TemporaryDirectory() as tmp:
        digits_dir = fetch_package(Path(tmp))
        for digit in range(10):
            flat = json.loads((digits_dir / f"{digit}.json").read_text())["data"]
            count = len(flat) // 784
            for i in range(count):
                pixels = flat[i * 784 : (i + 1) * 784]
                images.append([min(255, max(0, round(v * 255))) for v in pixels])
                labels.append(digit)

    out_dir = Path(args.out)
    write_idx(out_dir, images, labels)
    per_class = [labels.count(d) for d in range(10)]
    print(f"wrote {len(labels)} images to {out_dir} (per class: {per_class})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
