#!/usr/bin/env python3
"""Provision MNIST IDX files into a data directory.

Preferred source is the official IDX distribution: drop
train-images-idx3-ubyte(.gz), train-labels-idx1-ubyte(.gz),
t10k-images-idx3-ubyte(.gz), t10k-labels-idx1-ubyte(.gz) into the target
directory yourself and this script is a no-op.

When those files are absent, the script assembles a 10,000-sample subset of
the real MNIST digits from the npm package `mnist` (which bundles the pixel
data and is commonly reachable through offline registry mirrors). The subset
is shuffled with a fixed seed and split 8000 train / 2000 test, written as
standard IDX files under the canonical names. Output is byte-deterministic.
"""

import argparse
import json
import os
import struct
import subprocess
import sys
import tarfile
import tempfile


TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"
SHUFFLE_SEED = 12345
TRAIN_COUNT = 8000


def have_all(data_dir):
    def present(base):
        return os.path.exists(os.path.join(data_dir, base)) or os.path.exists(
            os.path.join(data_dir, base + ".gz")
        )

    return all(present(b) for b in (TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS))


def npm_fetch_package(tmpdir):
    subprocess.run(
        ["npm", "pack", "mnist", "--silent"],
        cwd=tmpdir,
        check=True,
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
    )
    tgz = [f for f in os.listdir(tmpdir) if f.startswith("mnist-") and f.endswith(".tgz")]
    if not tgz:
        raise RuntimeError("npm pack mnist produced no tarball")
    return os.path.join(tmpdir, tgz[0])


def load_digits_from_tgz(tgz_path):
    """Returns (pixels: list of bytes(784), labels: list of int)."""
    images = []
    labels = []
    with tarfile.open(tgz_path, "r:gz") as tf:
        for digit in range(10):
            member = tf.getmember(f"package/src/digits/{digit}.json")
            data = json.load(tf.extractfile(member))["data"]
            if len(data) % 784 != 0:
                raise RuntimeError(f"digit {digit}: pixel count not a multiple of 784")
            for off in range(0, len(data), 784):
                # Package stores u8/255 rounded to 3 decimals; this recovers
                # the original byte exactly (max rounding error 0.0005*255).
                px = bytes(int(round(v * 255.0)) for v in data[off : off + 784])
                images.append(px)
                labels.append(digit)
    return images, labels


def xorshift_permutation(n, seed):
    """Deterministic Fisher-Yates with a stdlib-free PRNG (splitmix64)."""
    state = seed & 0xFFFFFFFFFFFFFFFF

    def next_u64():
        nonlocal state
        state = (state + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
        return z ^ (z >> 31)

    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = next_u64() % (i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for px in images:
            f.write(px)


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data/mnist", help="target data directory")
    ap.add_argument("--tgz", default=None, help="use an existing mnist npm tarball")
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    if have_all(args.out):
        print(f"MNIST files already present in {args.out}; nothing to do.")
        return 0

    with tempfile.TemporaryDirectory() as tmp:
        tgz = args.tgz or npm_fetch_package(tmp)
        images, labels = load_digits_from_tgz(tgz)

    n = len(images)
    if n < TRAIN_COUNT + 1:
        raise RuntimeError(f"expected more than {TRAIN_COUNT} digits, got {n}")
    perm = xorshift_permutation(n, SHUFFLE_SEED)
    images = [images[i] for i in perm]
    labels = [labels[i] for i in perm]

    write_idx_images(os.path.join(args.out, TRAIN_IMAGES), images[:TRAIN_COUNT])
    write_idx_labels(os.path.join(args.out, TRAIN_LABELS), labels[:TRAIN_COUNT])
    write_idx_images(os.path.join(args.out, TEST_IMAGES), images[TRAIN_COUNT:])
    write_idx_labels(os.path.join(args.out, TEST_LABELS), labels[TRAIN_COUNT:])
    print(
        f"Wrote {TRAIN_COUNT} train / {n - TRAIN_COUNT} test MNIST samples to {args.out}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
