#!/usr/bin/env python3
"""Rebuild the 123-feature binary A9A encoding from the raw UCI Adult files.

Continuous columns are quantized into training-set quintiles (age, fnlwgt,
education-num, hours-per-week) or zero/non-zero indicators (capital-gain,
capital-loss); categorical columns are one-hot encoded with missing values
("?") mapped to the all-zeros code. Column order follows the LIBSVM a9a
feature numbering (f1..f123).

usage: make_a9a.py ADULT_DATA ADULT_TEST OUT_DIR
"""
import csv
import os
import sys

CATEGORIES = {
    "workclass": "Private, Self-emp-not-inc, Self-emp-inc, Federal-gov, Local-gov, State-gov, Without-pay, Never-worked",
    "education": "Bachelors, Some-college, 11th, HS-grad, Prof-school, Assoc-acdm, Assoc-voc, 9th, 7th-8th, 12th, Masters, 1st-4th, 10th, Doctorate, 5th-6th, Preschool",
    "marital-status": "Married-civ-spouse, Divorced, Never-married, Separated, Widowed, Married-spouse-absent, Married-AF-spouse",
    "occupation": "Tech-support, Craft-repair, Other-service, Sales, Exec-managerial, Prof-specialty, Handlers-cleaners, Machine-op-inspct, Adm-clerical, Farming-fishing, Transport-moving, Priv-house-serv, Protective-serv, Armed-Forces",
    "relationship": "Wife, Own-child, Husband, Not-in-family, Other-relative, Unmarried",
    "race": "White, Asian-Pac-Islander, Amer-Indian-Eskimo, Other, Black",
    "sex": "Female, Male",
    "native-country": "United-States, Cambodia, England, Puerto-Rico, Canada, Germany, Outlying-US(Guam-USVI-etc), India, Japan, Greece, South, China, Cuba, Iran, Honduras, Philippines, Italy, Poland, Jamaica, Vietnam, Mexico, Portugal, Ireland, France, Dominican-Republic, Laos, Ecuador, Taiwan, Haiti, Columbia, Hungary, Guatemala, Nicaragua, Scotland, Thailand, Yugoslavia, El-Salvador, Trinadad&Tobago, Peru, Hong, Holand-Netherlands",
}
CATEGORIES = {k: [c.strip() for c in v.split(",")] for k, v in CATEGORIES.items()}

COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
]
QUINTILE = {"age", "fnlwgt", "education-num", "hours-per-week"}
INDICATOR = {"capital-gain", "capital-loss"}


def read_rows(path):
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("|"):
                continue
            cells = [c.strip() for c in line.split(",")]
            if len(cells) != len(COLUMNS):
                continue
            rows.append(dict(zip(COLUMNS, cells)))
    return rows


def quintile_edges(values):
    values = sorted(values)
    n = len(values)
    return [values[min(n - 1, (n * q) // 5)] for q in range(1, 5)]


def encode(row, edges):
    out = []
    for col in COLUMNS[:-1]:
        if col in QUINTILE:
            v = float(row[col])
            code = [0] * 5
            code[sum(1 for e in edges[col] if v >= e)] = 1
            out += code
        elif col in INDICATOR:
            v = float(row[col])
            out += [1, 0] if v == 0 else [0, 1]
        else:
            code = [0] * len(CATEGORIES[col])
            if row[col] in CATEGORIES[col]:
                code[CATEGORIES[col].index(row[col])] = 1
            out += code
    label = 1 if row["income"].rstrip(".") == ">50K" else 0
    return out + [label]


def main():
    data_path, test_path, out_dir = sys.argv[1:4]
    train = read_rows(data_path)
    test = read_rows(test_path)
    edges = {c: quintile_edges([float(r[c]) for r in train]) for c in QUINTILE}
    os.makedirs(out_dir, exist_ok=True)
    header = [f"f{i}" for i in range(1, 124)] + ["label"]
    for name, rows in (("a9a_train.csv", train), ("a9a_test.csv", test)):
        with open(os.path.join(out_dir, name), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            for r in rows:
                enc = encode(r, edges)
                assert len(enc) == 124
                w.writerow(enc)
    with open(os.path.join(out_dir, "schema.toml"), "w") as f:
        f.write('task = "binary"\ntarget = "label"\nnumeric = [\n')
        for i in range(1, 124):
            f.write(f'    "f{i}",\n')
        f.write("]\n")
    print(f"train rows {len(train)}, test rows {len(test)}")


if __name__ == "__main__":
    main()
