#!/usr/bin/env python3
"""Convert the 10,000 MNIST digits bundled in the npm `mnist` package into
gzipped IDX files (8,000 train / 2,000 held-out, seeded shuffle).

Usage: npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
       python3 scripts/mnist10k_from_npm.py package/src/digits data/mnist10k
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + bytes(payload))


def main(src, dst):
    samples = []
    for digit in range(10):
        data = json.loads(Path(src, f"{digit}.json").read_text())["data"]
        for i in range(len(data) // 784):
            pixels = [int(round(v * 255)) for v in data[i * 784:(i + 1) * 784]]
            samples.append((pixels, digit))
    random.Random(20191011).shuffle(samples)
    dst = Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", samples[:8000]), ("test", samples[8000:])):
        images = [p for pixels, _ in part for p in pixels]
        labels = [label for _, label in part]
        write_idx(dst / f"{name}-images-idx3-ubyte.gz", 0x00000803, (len(part), 28, 28), images)
        write_idx(dst / f"{name}-labels-idx1-ubyte.gz", 0x00000801, (len(part),), labels)
        print(name, len(part))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
