"""Fetch and lay out the Boston housing and MNIST data under data/.

Boston comes from the CSV bundled in the scikit-learn 1.1.3 wheel (later releases drop it)
and is split 404/102 with the Keras protocol (RandomState(113) permutation, first 80% train).
MNIST comes from the raw IDX files in the npm package mnist-data@1.2.6.
Both downloads go through pip/npm, so a package mirror is enough.
"""
import argparse
import gzip
import hashlib
import shutil
import subprocess
import sys
import tarfile
import tempfile
import zipfile
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
SKLEARN = "scikit-learn==1.1.3"
NPM_MNIST = "mnist-data@1.2.6"

BOSTON_SHA256 = {
    "train.csv": "37195b1a93c31fbfe43d0fab62c485288f2ed636e198fb9ee67fdf3b59c12be9",
    "test.csv": "a085d5ea6ab85fd38fd32608d5eb8b6b397d1329810bd1aaf1e58f5aa77877b0",
}
# over the decompressed IDX bytes
MNIST_SHA256 = {
    "train-images-idx3-ubyte": "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    "train-labels-idx1-ubyte": "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    "t10k-images-idx3-ubyte": "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    "t10k-labels-idx1-ubyte": "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
}


def sha256(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def boston(out: Path, tmp: Path) -> None:
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "--only-binary=:all:",
         "--python-version", "3.10", "--platform", "manylinux2014_x86_64", SKLEARN, "-d", str(tmp)],
        check=True,
    )
    (wheel,) = tmp.glob("scikit_learn-*.whl")
    with zipfile.ZipFile(wheel) as z:
        (name,) = [n for n in z.namelist() if n.endswith("boston_house_prices.csv")]
        raw_csv = z.read(name)
    out.mkdir(parents=True, exist_ok=True)
    src = out / "boston_house_prices.csv"
    src.write_bytes(raw_csv)

    raw = np.genfromtxt(src, delimiter=",", skip_header=2)
    header = src.read_text().splitlines()[1].replace('"', "")
    idx = np.random.RandomState(113).permutation(len(raw))
    n = int(len(raw) * 0.8)
    for split, sel in (("train", idx[:n]), ("test", idx[n:])):
        lines = [header] + [",".join(fmt(v) for v in row) for row in raw[sel]]
        (out / f"{split}.csv").write_text("\n".join(lines) + "\n")


def mnist(out: Path, tmp: Path) -> None:
    subprocess.run(["npm", "pack", NPM_MNIST], cwd=tmp, check=True, stdout=subprocess.DEVNULL)
    (tgz,) = tmp.glob("mnist-data-*.tgz")
    out.mkdir(parents=True, exist_ok=True)
    with tarfile.open(tgz) as tar:
        for name in MNIST_SHA256:
            raw = tar.extractfile(f"package/data/{name}").read()
            with open(out / f"{name}.gz", "wb") as fh, gzip.GzipFile(fileobj=fh, mode="wb", mtime=0, filename="") as gz:
                gz.write(raw)


def verify(root: Path) -> list[str]:
    bad = []
    for name, want in BOSTON_SHA256.items():
        p = root / "boston" / name
        if not p.exists() or sha256(p.read_bytes()) != want:
            bad.append(str(p))
    for name, want in MNIST_SHA256.items():
        p = root / "mnist" / f"{name}.gz"
        if not p.exists() or sha256(gzip.decompress(p.read_bytes())) != want:
            bad.append(str(p))
    return bad


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=ROOT / "data")
    ap.add_argument("--verify-only", action="store_true")
    args = ap.parse_args(argv)
    if not args.verify_only:
        tmp = Path(tempfile.mkdtemp())
        try:
            boston(args.out / "boston", tmp)
            mnist(args.out / "mnist", tmp)
        finally:
            shutil.rmtree(tmp, ignore_errors=True)
    bad = verify(args.out)
    for p in bad:
        print(f"checksum mismatch: {p}", file=sys.stderr)
    print("ok" if not bad else f"{len(bad)} file(s) failed verification")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
