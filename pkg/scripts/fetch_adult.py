"""Fetch the UCI Adult census table and write it in the layout the pipeline reads.

The 48,842-row table (train + test, rows with unknown values kept as "?")
ships inside the ``ethicml`` wheel in one-hot form. This script downloads the
wheel with pip (no dependencies, nothing installed), folds the one-hot blocks
back into categorical columns and writes

    data/adult.csv           one row per person, strings
    data/adult_schema.yaml   column schema (S = sex, Y = income)

Usage: python scripts/fetch_adult.py [--wheel PATH] [--out DIR]
"""

import argparse
import io
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

import pandas as pd
import yaml

WHEEL = "ethicml==1.3.0"
MEMBER = "ethicml/data/csvs/adult_old.csv"
CONTINUOUS = ["age", "education-num", "capital-gain", "capital-loss", "hours-per-week"]
CATEGORICAL = ["workclass", "education", "marital-status", "occupation", "relationship", "race", "native-country"]


def download_wheel(dest: Path) -> Path:
    subprocess.run([sys.executable, "-m", "pip", "download", WHEEL, "--no-deps", "-d", str(dest), "-q"], check=True)
    return next(dest.glob("ethicml-*.whl"))


def fold(onehot: pd.DataFrame, prefix: str) -> pd.Series:
    cols = [c for c in onehot.columns if c.startswith(prefix + "_")]
    block = onehot[cols].to_numpy()
    names = [c[len(prefix) + 1:] for c in cols]
    out = pd.Series([names[i] for i in block.argmax(axis=1)], index=onehot.index)
    out[block.sum(axis=1) == 0] = "?"  # unknown in the raw table
    return out


def convert(raw: pd.DataFrame) -> pd.DataFrame:
    df = pd.DataFrame({c: raw[c].astype(int).astype(str) for c in CONTINUOUS})
    for c in CATEGORICAL:
        df[c] = fold(raw, c)
    df["sex"] = fold(raw, "sex")
    df["income"] = fold(raw, "salary")
    return df


def schema(df: pd.DataFrame) -> list:
    cols = [{"name": c, "kind": "continuous"} for c in CONTINUOUS]
    cols += [{"name": c, "kind": "categorical", "categories": sorted(df[c].unique().tolist())} for c in CATEGORICAL]
    cols.append({"name": "sex", "kind": "binary", "categories": ["Female", "Male"], "is_sensitive": True})
    cols.append({"name": "income", "kind": "binary", "categories": ["<=50K", ">50K"], "is_label": True})
    return cols


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--wheel", type=Path, help="use an already downloaded ethicml wheel")
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "data")
    args = ap.parse_args(argv)
    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or download_wheel(Path(tmp))
        raw = pd.read_csv(io.BytesIO(zipfile.ZipFile(wheel).read(MEMBER)))
    df = convert(raw)
    args.out.mkdir(parents=True, exist_ok=True)
    df.to_csv(args.out / "adult.csv", index=False)
    with open(args.out / "adult_schema.yaml", "w") as fh:
        yaml.safe_dump({"columns": schema(df)}, fh, sort_keys=False)
    print(f"wrote {len(df)} rows to {args.out / 'adult.csv'}")


if __name__ == "__main__":
    main()
