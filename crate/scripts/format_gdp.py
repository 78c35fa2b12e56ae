#!/usr/bin/env python3
"""Convert the comparative-case-study German reunification dataset
(repgermany.dta or a CSV export with country/year/gdp columns) into the
wide table read by configs/gdp.toml, and validate the result.

    python scripts/format_gdp.py repgermany.dta data/gdp.csv
    python scripts/format_gdp.py --check data/gdp.csv
"""

import argparse
import math
import sys

import pandas as pd

CODES = {
    "Austria": "AUT",
    "USA": "USA",
    "Netherlands": "NLD",
    "Portugal": "PRT",
    "Belgium": "BEL",
    "Norway": "NOR",
    "Australia": "AUS",
    "France": "FRA",
    "West Germany": "DEU",
    "Italy": "ITA",
    "Switzerland": "CHE",
    "Denmark": "DNK",
    "New Zealand": "NZL",
    "UK": "GBR",
    "Spain": "ESP",
    "Japan": "JPN",
}
ORDER = list(CODES.values())
YEARS = list(range(1960, 2004))


def load(path):
    if path.endswith(".dta"):
        return pd.read_stata(path)
    return pd.read_csv(path)


def convert(src, dst):
    df = load(src)
    missing = {"country", "year", "gdp"} - set(df.columns)
    if missing:
        sys.exit(f"{src}: missing columns {sorted(missing)}")
    df = df[df["country"].isin(CODES)].copy()
    df["code"] = df["country"].map(CODES)
    wide = df.pivot(index="year", columns="code", values="gdp")
    wide = wide.loc[wide.index.isin(YEARS), ORDER]
    wide.index = wide.index.astype(int)
    wide.index.name = "year"
    wide.to_csv(dst, float_format="%.10g")
    check(dst)


def check(path):
    df = pd.read_csv(path)
    errors = []
    if list(df.columns) != ["year"] + ORDER:
        errors.append(f"header {list(df.columns)} != year + {ORDER}")
    if list(df.get("year", [])) != YEARS:
        errors.append("years must run 1960..2003 without gaps")
    for col in df.columns[1:]:
        for year, v in zip(df["year"], df[col]):
            if not isinstance(v, (int, float)) or math.isnan(v) or v <= 0:
                errors.append(f"{col} {year}: {v!r} is not a positive level")
    if errors:
        sys.exit("\n".join(errors))
    print(f"{path}: {len(df)} years x {len(df.columns) - 1} series ok")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("src", nargs="?")
    ap.add_argument("dst", nargs="?")
    ap.add_argument("--check", metavar="CSV")
    a = ap.parse_args()
    if a.check:
        check(a.check)
    elif a.src and a.dst:
        convert(a.src, a.dst)
    else:
        ap.error("give SRC DST or --check CSV")


if __name__ == "__main__":
    main()
