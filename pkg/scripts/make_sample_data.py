"""Regenerate the bundled sample_returns.csv.

Synthetic daily returns in percent for two groups of three sectors,
drawn from a multivariate Student-t (5 dof) with the means, variances
and correlations fixed below.
Run from the repository root: ``python scripts/make_sample_data.py``.
"""

from pathlib import Path

import numpy as np

MEAN_PCT = 1e-2 * np.array([1.03, -1.13, 1.67, 1.16, -1.37, 3.99])
VAR_PCT = np.array([1.36, 7.65, 1.16, 1.14, 4.15, 1.12])
CORR = np.array([
    [1.00, 0.66, 0.76, 0.22, 0.26, 0.22],
    [0.66, 1.00, 0.62, 0.10, 0.33, 0.16],
    [0.76, 0.62, 1.00, 0.19, 0.25, 0.22],
    [0.22, 0.10, 0.19, 1.00, 0.49, 0.67],
    [0.26, 0.33, 0.25, 0.49, 1.00, 0.58],
    [0.22, 0.16, 0.22, 0.67, 0.58, 1.00],
])
NAMES = ["US_HEALTH", "US_FIN", "US_FOODBEV", "EU_HEALTH", "EU_FIN", "EU_FOODBEV"]
ROWS = 250
DOF = 5
SEED = 20100319


def main(out=Path("src/extremedep/data/sample_returns.csv")):
    rng = np.random.default_rng(SEED)
    chol = np.linalg.cholesky(CORR)
    z = rng.standard_normal((ROWS, 6)) @ chol.T
    # unit-variance Student-t scale mixture
    scale = np.sqrt((DOF - 2) / rng.chisquare(DOF, size=(ROWS, 1)))
    returns = MEAN_PCT + z * scale * np.sqrt(VAR_PCT)
    lines = [",".join(NAMES)]
    lines += [",".join(f"{x:.6f}" for x in row) for row in returns]
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
