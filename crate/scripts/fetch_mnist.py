#!/usr/bin/env python3
"""Fetch MNIST into IDX files under data/mnist.

Tries the canonical gzipped IDX mirrors first. Where direct downloads are
unavailable, falls back to the digit samples shipped in the `mnist` npm
package (~10,000 real MNIST digits, MIT licensed) and writes them out as
IDX files: the first 1,000 interleaved samples become the test split, the
remainder the training split.
"""

import argparse
import gzip
import json
import os
import shutil
import struct
import subprocess
import sys
import tarfile
import tempfile
import urllib.request

FILES = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
]
MIRRORS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
]


def try_mirrors(out):
    for base in MIRRORS:
        try:
            for name in FILES:
                with urllib.request.urlopen(base + name + ".gz", timeout=20) as r:
                    raw = gzip.decompress(r.read())
                with open(os.path.join(out, name), "wb") as f:
                    f.write(raw)
            return True
        except Exception as e:  # noqa: BLE001
            print(f"mirror {base} unavailable: {e}", file=sys.stderr)
    return False


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def from_npm(out, test_count):
    tmp = tempfile.mkdtemp()
    try:
        subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True,
                       stdout=subprocess.DEVNULL)
        with tarfile.open(os.path.join(tmp, "mnist-1.1.0.tgz")) as tar:
            tar.extractall(tmp)
        per_digit = []
        for d in range(10):
            with open(os.path.join(tmp, "package", "src", "digits", f"{d}.json")) as f:
                flat = json.load(f)["data"]
            n = len(flat) // 784
            per_digit.append([
                [int(round(v * 255)) for v in flat[i * 784:(i + 1) * 784]]
                for i in range(n)
            ])
    finally:
        shutil.rmtree(tmp)

    images, labels = [], []
    for i in range(max(len(p) for p in per_digit)):
        for d in range(10):
            if i < len(per_digit[d]):
                images.append(per_digit[d][i])
                labels.append(d)

    write_images(os.path.join(out, "t10k-images-idx3-ubyte"), images[:test_count])
    write_labels(os.path.join(out, "t10k-labels-idx1-ubyte"), labels[:test_count])
    write_images(os.path.join(out, "train-images-idx3-ubyte"), images[test_count:])
    write_labels(os.path.join(out, "train-labels-idx1-ubyte"), labels[test_count:])
    print(f"wrote {len(images) - test_count} train / {test_count} test digits")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "mnist"))
    ap.add_argument("--npm-only", action="store_true")
    ap.add_argument("--test-count", type=int, default=1000)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    if not args.npm_only and try_mirrors(args.out):
        print("downloaded canonical MNIST")
        return
    from_npm(args.out, args.test_count)


if __name__ == "__main__":
    main()
