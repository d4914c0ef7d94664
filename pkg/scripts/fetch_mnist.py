"""Download the four MNIST IDX files into ``data/mnist``.

Tries the public mirror first and falls back to the ``mnist-data`` npm
package, which ships the same raw IDX files.
"""
import argparse
import gzip
import shutil
import subprocess
import sys
import tarfile
import tempfile
import urllib.request
from pathlib import Path

FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
         "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
MIRROR = "https://ossci-datasets.s3.amazonaws.com/mnist/"


def from_mirror(out: Path) -> None:
    for name in FILES:
        with urllib.request.urlopen(MIRROR + name + ".gz", timeout=60) as r:
            (out / (name + ".gz")).write_bytes(r.read())


def from_npm(out: Path) -> None:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist-data", "--silent"], cwd=tmp, check=True,
                       stdout=subprocess.DEVNULL)
        archive = next(Path(tmp).glob("mnist-data-*.tgz"))
        with tarfile.open(archive) as tar:
            for name in FILES:
                src = tar.extractfile(f"package/data/{name}")
                with gzip.open(out / (name + ".gz"), "wb") as dst:
                    shutil.copyfileobj(src, dst)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="data/mnist")
    args = p.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for fetch in (from_mirror, from_npm):
        try:
            fetch(out)
            print(f"wrote {len(FILES)} files to {out}")
            return 0
        except Exception as exc:  # noqa: BLE001 - try the next source
            print(f"{fetch.__name__} failed: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
