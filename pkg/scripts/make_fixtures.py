"""Regenerate tests/fixtures.  Uses only the stdlib and numpy (never the package itself)."""
import csv
import gzip
import hashlib
import struct
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures"


def idx_bytes(magic, array):
    a = np.asarray(array, dtype=np.uint8)
    return struct.pack(">I", magic) + struct.pack(f">{a.ndim}I", *a.shape) + a.tobytes()


def write(path, raw):
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".gz":
        with open(path, "wb") as fh, gzip.GzipFile(fileobj=fh, mode="wb", mtime=0, filename="") as gz:
            gz.write(raw)
    else:
        path.write_bytes(raw)


def write_csv(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def main():
    rng = np.random.default_rng(20240601)
    write_csv(OUT / "two_rows.csv", ["a", "b", "target"], [["1.5", "-2", "3.25"], ["0", "1e-3", "-7"]])
    (OUT / "ragged.csv").write_text("a,b,target\n1,2,3\n4,5\n", encoding="utf-8")
    (OUT / "text_cell.csv").write_text("a,b,target\n1,2,3\n4,x,6\n", encoding="utf-8")

    imgs = np.array([[[0, 255], [128, 1]], [[7, 8], [9, 10]], [[255, 255], [0, 0]]])
    write(OUT / "idx" / "images.idx", idx_bytes(0x803, imgs))
    write(OUT / "idx" / "labels.idx.gz", idx_bytes(0x801, [3, 0, 9]))
    write(OUT / "idx" / "bad_magic.idx", idx_bytes(0x802, imgs))

    # regression task whose target equals feature 0: the map (w = [1, 0], b = 0) is perfect after z-scoring
    for name, scale in (("reg_perfect", 1.0), ("reg_noisy", 1.0), ("reg_noisy_x1000", 1000.0)):
        for split, n in (("train", 30), ("test", 12)):
            g = np.random.default_rng(1 if split == "train" else 2)
            x = g.normal(size=(n, 2)) * [2.0, 0.5] + [1.0, -3.0]
            y = x[:, 0] + (0.0 if name == "reg_perfect" else 0.3 * g.normal(size=n))  # same draws for both noisy sets
            rows = [[repr(float(v * scale)) for v in (*r, t)] for r, t in zip(x, y)]
            write_csv(OUT / name / f"{split}.csv", ["x0", "x1", "y"], rows)

    # 4x4 "digits" with random labels: any predictor sits at chance
    for prefix, n in (("train", 50), ("t10k", 1000)):
        write(OUT / "cls_random" / f"{prefix}-images-idx3-ubyte.gz", idx_bytes(0x803, rng.integers(0, 256, (n, 4, 4))))
        write(OUT / "cls_random" / f"{prefix}-labels-idx1-ubyte.gz", idx_bytes(0x801, rng.integers(0, 10, n)))

    for p in sorted(OUT.rglob("*")):
        if p.is_file():
            print(hashlib.sha256(p.read_bytes()).hexdigest(), p.relative_to(OUT))


if __name__ == "__main__":
    main()
