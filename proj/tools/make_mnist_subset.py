#!/usr/bin/env python3
"""Build a class-directory MNIST subset from the `mnist` npm package.

The npm package (MIT, github.com/cazala/mnist) ships 10,000 MNIST digits as
JSON arrays of 784 floats in [0, 1]. This script writes them out as 28x28
grayscale PNGs in the layout the loader expects:

    <out>/train/<digit>/<digit>_<index>.png
    <out>/test/<digit>/<digit>_<index>.png

The first `--train-per-class` digits of each class go to train, the next
`--test-per-class` to test.
"""
import argparse
import io
import json
import pathlib
import subprocess
import tarfile
import tempfile

from PIL import Image


def load_digits(tarball: pathlib.Path):
    digits = {}
    with tarfile.open(tarball, "r:gz") as tar:
        for d in range(10):
            member = tar.getmember(f"package/src/digits/{d}.json")
            data = json.load(tar.extractfile(member))["data"]
            digits[d] = [data[i:i + 784] for i in range(0, len(data), 784)]
    return digits


def fetch_tarball(workdir: pathlib.Path) -> pathlib.Path:
    out = subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir,
                         check=True, capture_output=True, text=True)
    return workdir / out.stdout.strip().splitlines()[-1]


def write_png(path: pathlib.Path, values):
    img = Image.new("L", (28, 28))
    img.putdata([int(round(v * 255.0)) for v in values])
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    path.write_bytes(buf.getvalue())


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="data/mnist-subset")
    ap.add_argument("--tarball", help="local mnist-1.1.0.tgz (skips npm pack)")
    ap.add_argument("--train-per-class", type=int, default=500)
    ap.add_argument("--test-per-class", type=int, default=100)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tarball = pathlib.Path(args.tarball) if args.tarball else fetch_tarball(pathlib.Path(tmp))
        digits = load_digits(tarball)

    out = pathlib.Path(args.out)
    for d, samples in digits.items():
        need = args.train_per_class + args.test_per_class
        if len(samples) < need:
            raise SystemExit(f"digit {d}: only {len(samples)} samples, need {need}")
        for split, lo, hi in (("train", 0, args.train_per_class),
                              ("test", args.train_per_class, need)):
            cls_dir = out / split / str(d)
            cls_dir.mkdir(parents=True, exist_ok=True)
            for i in range(lo, hi):
                write_png(cls_dir / f"{d}_{i:04d}.png", samples[i])
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
