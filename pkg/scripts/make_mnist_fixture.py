"""Build the 8,000/2,000 MNIST IDX fixture from the npm ``mnist`` package.

The npm package (https://www.npmjs.com/package/mnist, v1.1.0) ships 10,000
real MNIST digits as JSON arrays of 784 floats in [0, 1] rounded to three
decimals. They are mapped back to uint8 and split 80/20 per class.

    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python scripts/make_mnist_fixture.py package/src/digits tests/data/mnist
"""
import argparse
import json
from pathlib import Path

import numpy as np

from occamnas.dataio import Dataset, save_idx, split


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("digits_dir")
    parser.add_argument("out_dir")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    images, labels = [], []
    for digit in range(10):
        data = np.asarray(json.loads((Path(args.digits_dir) / f"{digit}.json").read_text())["data"])
        digits = data.reshape(-1, 28, 28)
        images.append(np.rint(digits * 255))
        labels.append(np.full(len(digits), digit))
    ds = Dataset(np.concatenate(images)[..., None].astype(np.float32), np.concatenate(labels),
                 [str(d) for d in range(10)])
    train, test = split(ds, 0.2, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", train), ("t10k", test)):
        order = rng.permutation(len(part))
        save_idx(out / f"{name}-images-idx3-ubyte.gz", out / f"{name}-labels-idx1-ubyte.gz",
                 part.images[order], part.labels[order])
        print(name, len(part))


if __name__ == "__main__":
    main()
