#!/usr/bin/env python3
"""Fetch MovieLens-100k and write it as `user::item::rating::timestamp` lines.

The GroupLens archive is mirrored inside the RecBole wheel on PyPI, so this
works anywhere `pip download` does. Output: data/ml-100k/ratings.dat
"""
import pathlib
import subprocess
import sys
import tempfile
import zipfile

ROOT = pathlib.Path(__file__).resolve().parent.parent
OUT = ROOT / "data" / "ml-100k" / "ratings.dat"
MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def main() -> int:
    if OUT.exists():
        print(f"{OUT} already present")
        return 0
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-d", tmp, "recbole==1.2.1"],
            check=True,
        )
        wheel = next(pathlib.Path(tmp).glob("recbole-*.whl"))
        text = zipfile.ZipFile(wheel).read(MEMBER).decode()
    lines = text.splitlines()[1:]
    OUT.parent.mkdir(parents=True, exist_ok=True)
    with OUT.open("w") as f:
        for line in lines:
            user, item, rating, ts = line.split("\t")
            f.write(f"{user}::{item}::{int(float(rating))}::{int(float(ts))}\n")
    print(f"wrote {len(lines)} ratings to {OUT}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
