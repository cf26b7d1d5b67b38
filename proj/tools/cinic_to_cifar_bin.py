#!/usr/bin/env python3
"""Pack a CINIC-10 split (class-named folders of 32x32 PNGs) into the
CIFAR-10 binary batch layout: one label byte followed by 3072 bytes of
R, G and B planes per record.

    cinic_to_cifar_bin.py CINIC10/test OUT_DIR

Writes OUT_DIR/test_batch.bin and OUT_DIR/batches.meta.txt so that the
directory loads as a cifar10:OUT_DIR dataset.
"""
import argparse
import pathlib
import sys

import numpy as np
from PIL import Image

CLASSES = ["airplane", "automobile", "bird", "cat", "deer",
           "dog", "frog", "horse", "ship", "truck"]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("split_dir", type=pathlib.Path)
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--name", default="test_batch.bin")
    args = ap.parse_args()

    records = []
    for label, cls in enumerate(CLASSES):
        for png in sorted((args.split_dir / cls).glob("*.png")):
            img = np.asarray(Image.open(png).convert("RGB"), dtype=np.uint8)
            if img.shape != (32, 32, 3):
                print(f"skipping {png}: shape {img.shape}", file=sys.stderr)
                continue
            records.append(bytes([label]) + img.transpose(2, 0, 1).tobytes())
    if not records:
        print(f"no images under {args.split_dir}", file=sys.stderr)
        return 1

    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / args.name).write_bytes(b"".join(records))
    (args.out_dir / "batches.meta.txt").write_text("\n".join(CLASSES) + "\n")
    print(f"wrote {len(records)} records to {args.out_dir / args.name}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
