#!/usr/bin/env python3
"""Regenerate the gzipped MNIST subsets under data/mnist/.

The raw IDX files are taken from the `mnist-data` npm package (which ships the
original LeCun files unmodified). The first N records of each split are kept and
re-encoded as IDX with a corrected record count.

Usage: tools/fetch_mnist.py [--train 10000] [--test 2000] [--out data/mnist]
"""
import argparse
import gzip
import io
import pathlib
import struct
import subprocess
import tarfile
import tempfile


def subset(raw: bytes, n: int) -> bytes:
    magic = raw[:4]
    ndim = magic[3]
    dims = list(struct.unpack(">" + "I" * ndim, raw[4 : 4 + 4 * ndim]))
    if n > dims[0]:
        raise SystemExit(f"requested {n} records, file has {dims[0]}")
    per = 1
    for d in dims[1:]:
        per *= d
    header = 4 + 4 * ndim
    dims[0] = n
    return magic + struct.pack(">" + "I" * ndim, *dims) + raw[header : header + n * per]


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--train", type=int, default=10000)
    ap.add_argument("--test", type=int, default=2000)
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data" / "mnist"))
    args = ap.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist-data@1.2.6"], cwd=tmp, check=True, capture_output=True)
        tgz = next(pathlib.Path(tmp).glob("mnist-data-*.tgz"))
        with tarfile.open(tgz) as tar:
            def member(name: str) -> bytes:
                return tar.extractfile(f"package/data/{name}").read()

            jobs = [
                ("train-images-idx3-ubyte", f"train-{args.train // 1000}k-images-idx3-ubyte.gz", args.train),
                ("train-labels-idx1-ubyte", f"train-{args.train // 1000}k-labels-idx1-ubyte.gz", args.train),
                ("t10k-images-idx3-ubyte", f"test-{args.test // 1000}k-images-idx3-ubyte.gz", args.test),
                ("t10k-labels-idx1-ubyte", f"test-{args.test // 1000}k-labels-idx1-ubyte.gz", args.test),
            ]
            for src, dst, n in jobs:
                buf = io.BytesIO()
                with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as gz:
                    gz.write(subset(member(src), n))
                (out / dst).write_bytes(buf.getvalue())
                print(f"wrote {out / dst}")


if __name__ == "__main__":
    main()
