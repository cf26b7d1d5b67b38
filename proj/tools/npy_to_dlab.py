#!/usr/bin/env python3
"""Convert a .npy array (e.g. CIFAR-10H cifar10h-counts.npy or -probs.npy)
into the DLABARR array container.

Layout: magic "DLABARR\\0", u32 version 1, u32 dtype (1 f32, 2 f64, 3 u8,
4 i64), u32 ndim, ndim x u64 shape, little-endian row-major payload.
"""
import argparse
import struct
import sys

import numpy as np

DTYPES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2, np.dtype("u1"): 3, np.dtype("<i8"): 4}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("src")
    ap.add_argument("dst")
    ap.add_argument("--dtype", choices=["f32", "f64", "u8", "i64"], default="f64")
    args = ap.parse_args()

    target = {"f32": "<f4", "f64": "<f8", "u8": "u1", "i64": "<i8"}[args.dtype]
    a = np.ascontiguousarray(np.load(args.src), dtype=target)
    header = b"DLABARR\0" + struct.pack("<III", 1, DTYPES[a.dtype], a.ndim)
    header += struct.pack(f"<{a.ndim}Q", *a.shape)
    with open(args.dst, "wb") as f:
        f.write(header)
        f.write(a.tobytes(order="C"))
    print(f"wrote {args.dst}: shape {list(a.shape)} dtype {args.dtype}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
