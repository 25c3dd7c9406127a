#!/usr/bin/env python3
"""Build the bundled MNIST subset used by the acceptance suite and examples.

Source: the 5,000-image MNIST sample (500 images per digit) shipped inside the
mlxtend wheel as mlxtend/data/data/mnist_5k.csv.gz. The script splits it into
a stratified 4,000-image training set and a 1,000-image test set and writes
both as gzipped IDX files, the same layout as the official MNIST downloads.

    pip download --no-deps -d /tmp/wheels mlxtend
    python3 scripts/make_mnist_5k.py /tmp/wheels/mlxtend-*.whl data/mnist-5k
"""
import gzip
import io
import struct
import sys
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"
TEST_PER_CLASS = 100


def write_idx_images(path, images):
    buf = io.BytesIO()
    buf.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
    for img in images:
        buf.write(bytes(img))
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(buf.getvalue())


def write_idx_labels(path, labels):
    buf = io.BytesIO()
    buf.write(struct.pack(">II", 0x00000801, len(labels)))
    buf.write(bytes(labels))
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(buf.getvalue())


def main(wheel, out_dir):
    raw = zipfile.ZipFile(wheel).read(MEMBER)
    rows = gzip.decompress(raw).decode().strip().split("\n")
    by_class = {d: [] for d in range(10)}
    for row in rows:
        vals = [int(float(v)) for v in row.split(",")]
        by_class[vals[-1]].append(vals[:-1])

    # round-robin over digits so the files are not sorted by label
    train, test = [], []
    n_train = len(by_class[0]) - TEST_PER_CLASS
    for k in range(n_train):
        train += [(by_class[d][k], d) for d in range(10)]
    for k in range(n_train, n_train + TEST_PER_CLASS):
        test += [(by_class[d][k], d) for d in range(10)]

    for name, split in (("train", train), ("t10k", test)):
        write_idx_images(f"{out_dir}/{name}-images-idx3-ubyte.gz", [s[0] for s in split])
        write_idx_labels(f"{out_dir}/{name}-labels-idx1-ubyte.gz", [s[1] for s in split])
        print(f"{name}: {len(split)} images")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
