#!/usr/bin/env python3
"""Convert the raw UCI Adult `adult.data` file into the workbench's CSV + schema.

Usage: prepare_census.py <adult.data> <out-dir>

The raw file has no header, pads fields with a space after each comma and
marks unknown values with "?". Unknown values are kept as a declared
category named "?" so every row survives loading.
"""
import csv
import json
import sys
from pathlib import Path

FEATURES = [
    ("age", None),
    ("workclass", ["Private", "Self-emp-not-inc", "Self-emp-inc", "Federal-gov", "Local-gov",
                   "State-gov", "Without-pay", "Never-worked", "?"]),
    ("fnlwgt", None),
    ("education", ["Bachelors", "Some-college", "11th", "HS-grad", "Prof-school", "Assoc-acdm",
                   "Assoc-voc", "9th", "7th-8th", "12th", "Masters", "1st-4th", "10th",
                   "Doctorate", "5th-6th", "Preschool"]),
    ("education-num", None),
    ("marital-status", ["Married-civ-spouse", "Divorced", "Never-married", "Separated",
                        "Widowed", "Married-spouse-absent", "Married-AF-spouse"]),
    ("occupation", ["Tech-support", "Craft-repair", "Other-service", "Sales", "Exec-managerial",
                    "Prof-specialty", "Handlers-cleaners", "Machine-op-inspct", "Adm-clerical",
                    "Farming-fishing", "Transport-moving", "Priv-house-serv", "Protective-serv",
                    "Armed-Forces", "?"]),
    ("relationship", ["Wife", "Own-child", "Husband", "Not-in-family", "Other-relative",
                      "Unmarried"]),
    ("race", ["White", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other", "Black"]),
    ("sex", ["Female", "Male"]),
    ("capital-gain", None),
    ("capital-loss", None),
    ("hours-per-week", None),
    ("native-country", ["United-States", "Cambodia", "England", "Puerto-Rico", "Canada",
                        "Germany", "Outlying-US(Guam-USVI-etc)", "India", "Japan", "Greece",
                        "South", "China", "Cuba", "Iran", "Honduras", "Philippines", "Italy",
                        "Poland", "Jamaica", "Vietnam", "Mexico", "Portugal", "Ireland", "France",
                        "Dominican-Republic", "Laos", "Ecuador", "Taiwan", "Haiti", "Columbia",
                        "Hungary", "Guatemala", "Nicaragua", "Scotland", "Thailand", "Yugoslavia",
                        "El-Salvador", "Trinadad&Tobago", "Peru", "Hong", "Holand-Netherlands",
                        "?"]),
]
LABEL = "income"


def main() -> None:
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    with src.open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            cells = [c.strip() for c in line.split(",")]
            assert len(cells) == len(FEATURES) + 1, line
            rows.append(cells)
    with (out / "adult.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([name for name, _ in FEATURES] + [LABEL])
        w.writerows(rows)
    schema = {
        "dataset_id": "census",
        "features": [
            {"name": name, "kind": "categorical", "categories": cats} if cats
            else {"name": name, "kind": "numerical"}
            for name, cats in FEATURES
        ],
        "label": {"name": LABEL, "positive_meaning": ">50K", "negative_meaning": "<=50K"},
    }
    (out / "schema.json").write_text(json.dumps(schema, indent=2) + "\n")
    print(f"wrote {len(rows)} rows to {out}")


if __name__ == "__main__":
    main()
