"""Regenerate tests/expected/*.json from the bundled sample in exact arithmetic.

Reads the CSV with the csv module only (no package code), converts every
decimal token to a Fraction and computes in rationals:

* target_cov.json: cross-covariance of the row-paired coupling of the
  first three (X) and last three (Y) columns, 1/N normalization.
* markowitz.json: fully invested mean-variance weights at risk aversion 3
  for the annualized inputs mu = 252 mean / 100 and
  Sigma = 252 cov / 100^2 (1/N normalization), via the KKT system.

Run:  python3 scripts/freeze_expected.py
"""

import csv
import json
from fractions import Fraction
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "src" / "extremedep" / "data" / "sample_returns.csv"
OUT = ROOT / "tests" / "expected"
SPLIT = 3
RISK_AVERSION = Fraction(3)
PERIODS = Fraction(252)
UNIT = Fraction(100)


def read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = [h.strip() for h in rows[0]]
    data = [[Fraction(tok.strip()) for tok in row] for row in rows[1:] if row]
    return header, data


def column_means(data):
    n = len(data)
    return [sum(row[j] for row in data) / n for j in range(len(data[0]))]


def covariance(data):
    n, k = len(data), len(data[0])
    mean = column_means(data)
    dev = [[row[j] - mean[j] for j in range(k)] for row in data]
    return [[sum(d[a] * d[b] for d in dev) / n for b in range(k)] for a in range(k)]


def solve(A, b):
    """Gauss-Jordan elimination over the rationals."""
    n = len(b)
    aug = [list(A[i]) + [b[i]] for i in range(n)]
    for col in range(n):
        piv = next(r for r in range(col, n) if aug[r][col] != 0)
        aug[col], aug[piv] = aug[piv], aug[col]
        p = aug[col][col]
        aug[col] = [v / p for v in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [vr - f * vc for vr, vc in zip(aug[r], aug[col])]
    return [aug[i][n] for i in range(n)]


def main():
    header, data = read_table(DATA)
    cov = covariance(data)
    k = len(header)
    target = [[cov[i][SPLIT + j] for j in range(k - SPLIT)] for i in range(SPLIT)]

    mu = [PERIODS * m / UNIT for m in column_means(data)]
    sigma = [[PERIODS * v / UNIT**2 for v in row] for row in cov]
    kkt = [[RISK_AVERSION * sigma[i][j] for j in range(k)] + [Fraction(1)] for i in range(k)]
    kkt.append([Fraction(1)] * k + [Fraction(0)])
    sol = solve(kkt, mu + [Fraction(1)])

    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "target_cov.json").write_text(json.dumps({
        "source": "sample_returns.csv",
        "split": SPLIT,
        "x_names": header[:SPLIT],
        "y_names": header[SPLIT:],
        "target_cov": [[float(v) for v in row] for row in target],
    }, indent=2) + "\n")
    (OUT / "markowitz.json").write_text(json.dumps({
        "source": "sample_returns.csv",
        "risk_aversion": float(RISK_AVERSION),
        "periods": float(PERIODS),
        "unit": float(UNIT),
        "asset_names": header,
        "mu": [float(v) for v in mu],
        "weights": [float(v) for v in sol[:k]],
        "eta": float(sol[k]),
    }, indent=2) + "\n")


if __name__ == "__main__":
    main()
