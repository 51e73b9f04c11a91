"""Convert a label-last MNIST CSV (784 pixels then label per row) into gzipped IDX files.

usage: mnist_csv_to_idx.py INPUT.csv[.gz] OUT_DIR PREFIX
"""
import gzip
import struct
import sys
from pathlib import Path


def main(src, out_dir, prefix):
    opener = gzip.open if src.endswith(".gz") else open
    with opener(src, "rt") as f:
        rows = [line.strip().split(",") for line in f if line.strip()]
    pixels = bytearray()
    labels = bytearray()
    for r in rows:
        if len(r) != 785:
            raise SystemExit(f"expected 785 columns, got {len(r)}")
        pixels.extend(int(v) for v in r[:784])
        labels.append(int(r[784]))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = len(rows)
    # mtime=0 keeps the archives byte-identical across runs.
    with open(out / f"{prefix}-images-idx3-ubyte.gz", "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as g:
        g.write(struct.pack(">IIII", 0x803, n, 28, 28) + bytes(pixels))
    with open(out / f"{prefix}-labels-idx1-ubyte.gz", "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as g:
        g.write(struct.pack(">II", 0x801, n) + bytes(labels))
    print(f"wrote {n} samples to {out}")


if __name__ == "__main__":
    if len(sys.argv) != 4:
        raise SystemExit(__doc__)
    main(*sys.argv[1:])
