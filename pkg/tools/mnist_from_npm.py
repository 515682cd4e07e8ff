"""Convert the digit JSON files of the ``mnist`` npm package (v1.1.0) to IDX.

The package ships 10,000 MNIST digits as ``src/digits/<d>.json``, each a
``{"data": [...]}`` object holding the flattened 28x28 images of digit ``d``
as ``k / 255`` rounded to three decimals, which still identifies ``k``
exactly since the levels are 1/255 apart.  This writes the gzipped IDX
image/label pair that ``infoshape.data.load_mnist_idx`` reads::

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 tools/mnist_from_npm.py package/src/digits data/mnist-10k

Images are interleaved by a fixed seeded permutation so the file is not
sorted by digit.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from infoshape.data import write_idx


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    images, labels = [], []
    for d in range(10):
        flat = np.asarray(json.loads((args.digits_dir / f"{d}.json").read_text())["data"], dtype=np.float64)
        if flat.size % 784:
            raise SystemExit(f"{d}.json: {flat.size} values is not a multiple of 784")
        pix = np.rint(flat * 255.0)
        if pix.min() < 0 or pix.max() > 255 or np.abs(flat * 255.0 - pix).max() > 0.26:
            raise SystemExit(f"{d}.json: values are not rounded k/255 levels")
        images.append(pix.astype(np.uint8).reshape(-1, 28, 28))
        labels.append(np.full(images[-1].shape[0], d, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(args.seed).permutation(len(labels))

    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_idx(args.out_dir / "images-idx3-ubyte.gz", images[order])
    write_idx(args.out_dir / "labels-idx1-ubyte.gz", labels[order])
    print(f"wrote {len(labels)} digits to {args.out_dir}; per-digit counts {np.bincount(labels).tolist()}")


if __name__ == "__main__":
    main()
