"""Convert raw benchmark files into the headed CSVs the bundled schemas expect.

Usage::

    python tools/prepare_datasets.py --source RAW --out data/

``RAW`` is either a directory holding the original files or a wheel/zip
archive containing them anywhere inside (the ``responsibly`` package on
PyPI ships Adult, German Credit and Compas).  Recognised inputs:

* ``adult.data``                   -> ``adult.csv``
* ``german.data``                  -> ``german.csv`` (adds a ``sex`` column)
* ``compas-scores-two-years.csv``  -> ``compas.csv`` (standard screening filter)
* ``bank-full.csv``                -> ``bank.csv`` (semicolon file, re-delimited)

Files that are not found are skipped with a message.
"""

from __future__ import annotations

import argparse
import csv
import io
import zipfile
from pathlib import Path

ADULT_COLUMNS = ["age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
                 "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
                 "hours-per-week", "native-country", "income"]
GERMAN_COLUMNS = ["status", "duration", "credit_history", "purpose", "credit_amount", "savings",
                  "employment", "installment_rate", "personal_status", "other_debtors",
                  "residence_since", "property", "age", "installment_plans", "housing",
                  "existing_credits", "job", "people_liable", "telephone", "foreign_worker",
                  "credit"]
GERMAN_FEMALE = {"A92", "A95"}
COMPAS_KEEP = ["sex", "age", "race", "juv_fel_count", "juv_misd_count", "juv_other_count",
               "priors_count", "c_charge_degree", "two_year_recid"]


class Source:
    def __init__(self, path: Path):
        self.path = path
        self.archive = zipfile.ZipFile(path) if path.is_file() else None

    def read(self, name: str) -> str | None:
        if self.archive is not None:
            for member in self.archive.namelist():
                if member.rsplit("/", 1)[-1] == name:
                    return self.archive.read(member).decode("utf-8", errors="replace")
            return None
        hits = sorted(self.path.rglob(name))
        return hits[0].read_text(errors="replace") if hits else None


def _write(path: Path, header, rows) -> int:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        n = 0
        for row in rows:
            out.writerow(row)
            n += 1
    return n


def adult(text: str):
    for line in text.splitlines():
        parts = [p.strip() for p in line.split(",")]
        if len(parts) == len(ADULT_COLUMNS):
            yield parts


def german(text: str):
    for line in text.splitlines():
        parts = line.split()
        if len(parts) == len(GERMAN_COLUMNS):
            sex = "female" if parts[8] in GERMAN_FEMALE else "male"
            yield parts + [sex]


def compas(text: str):
    rows = csv.reader(io.StringIO(text))
    header = next(rows)
    col = {}
    for i, name in enumerate(header):
        col.setdefault(name, i)
    for row in rows:
        try:
            days = int(row[col["days_b_screening_arrest"]])
        except ValueError:
            continue
        if not -30 <= days <= 30 or row[col["is_recid"]] == "-1":
            continue
        if row[col["c_charge_degree"]] == "O" or row[col["score_text"]] == "N/A":
            continue
        yield [row[col[c]] for c in COMPAS_KEEP]


def bank(text: str):
    rows = csv.reader(io.StringIO(text), delimiter=";")
    header = next(rows)
    yield header
    yield from rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--source", type=Path, required=True)
    ap.add_argument("--out", type=Path, default=Path("data"))
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    src = Source(args.source)

    jobs = [("adult.data", "adult.csv", ADULT_COLUMNS, adult),
            ("german.data", "german.csv", GERMAN_COLUMNS + ["sex"], german),
            ("compas-scores-two-years.csv", "compas.csv", COMPAS_KEEP, compas)]
    for raw, target, header, convert in jobs:
        text = src.read(raw)
        if text is None:
            print(f"skip {target}: {raw} not found")
            continue
        n = _write(args.out / target, header, convert(text))
        print(f"wrote {args.out / target} ({n} rows)")
    text = src.read("bank-full.csv")
    if text is None:
        print("skip bank.csv: bank-full.csv not found")
    else:
        rows = bank(text)
        n = _write(args.out / "bank.csv", next(rows), rows)
        print(f"wrote {args.out / 'bank.csv'} ({n} rows)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
