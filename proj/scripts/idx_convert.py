#!/usr/bin/env python3
"""Convert the JSON image dumps of the `mnist` and `fashion-mnist` npm
packages into IDX files (u8 pixels, big-endian headers).

Usage: idx_convert.py <mnist_pkg_dir> <fashion_pkg_dir> <out_dir>
"""
import json
import os
import struct
import sys

SIDE = 28
PIXELS = SIDE * SIDE


def write_idx(path, images, labels):
    n = len(images)
    assert n == len(labels)
    with open(path + "-images.idx3", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, SIDE, SIDE))
        for img in images:
            f.write(bytes(img))
    with open(path + "-labels.idx1", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(labels))
    print(f"wrote {n} images to {path}-images.idx3 / -labels.idx1")


def load_mnist(pkg_dir):
    """Per-digit JSON: {"data": flat float array in [0,1]}, 784 per image."""
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(pkg_dir, "src", "digits", f"{digit}.json")) as f:
            flat = json.load(f)["data"]
        assert len(flat) % PIXELS == 0, f"digit {digit}: ragged payload"
        for i in range(0, len(flat), PIXELS):
            images.append([min(255, max(0, round(v * 255))) for v in flat[i:i + PIXELS]])
            labels.append(digit)
    return images, labels


def load_fashion(pkg_dir, per_class):
    """Per-class JSON: {"data": list of 784-long u8 lists}; a few entries are
    empty lists and are skipped."""
    images, labels = [], []
    for cls in range(10):
        with open(os.path.join(pkg_dir, "src", "clothes", f"{cls}.json")) as f:
            rows = json.load(f)["data"]
        kept = 0
        for row in rows:
            if not isinstance(row, list) or len(row) != PIXELS:
                continue  # the packages ship a couple of empty placeholder rows
            images.append([min(255, max(0, int(v))) for v in row])
            labels.append(cls)
            kept += 1
            if kept == per_class:
                break
        assert kept == per_class, f"class {cls}: only {kept} usable images"
    return images, labels


def main():
    if len(sys.argv) != 4:
        sys.exit(__doc__)
    mnist_dir, fashion_dir, out_dir = sys.argv[1:]
    os.makedirs(out_dir, exist_ok=True)

    images, labels = load_mnist(mnist_dir)
    write_idx(os.path.join(out_dir, "mnist"), images, labels)

    images, labels = load_fashion(fashion_dir, per_class=1000)
    write_idx(os.path.join(out_dir, "fashion"), images, labels)


if __name__ == "__main__":
    main()
