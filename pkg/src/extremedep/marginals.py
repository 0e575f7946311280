"""Discrete marginal distributions: ingestion, centering and synthesis.

A marginal is a weighted cloud of atoms in R^d. The coupling machinery
assumes null first moments, so everything produced here can be centered
with :func:`center`; :func:`load_returns` centers on ingestion.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError

WEIGHT_SUM_TOL = 1e-12
CENTER_TOL = 1e-10
PSD_TOL = 1e-10


@dataclass(frozen=True)
class DiscreteMarginal:
    """Weighted atom cloud, one atom per row of ``atoms``.

    Zero-weight atoms are dropped on construction. Weights are renormalized
    when their sum is within 1e-9 of one; anything further off is rejected.
    """

    atoms: np.ndarray
    weights: np.ndarray
    centered: bool = False
    names: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        weights = np.asarray(self.weights, dtype=float).ravel()
        if atoms.ndim != 2 or atoms.shape[0] < 1 or atoms.shape[1] < 1:
            raise InputError(f"atoms must be a non-empty N x d array, got shape {atoms.shape}")
        if weights.shape[0] != atoms.shape[0]:
            raise InputError(f"{weights.shape[0]} weights for {atoms.shape[0]} atoms")
        if not np.all(np.isfinite(atoms)):
            bad = int(np.argwhere(~np.isfinite(atoms))[0, 0])
            raise InputError(f"atom {bad} has a non-finite coordinate")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise InputError("weights must be finite and nonnegative")
        keep = weights > 0
        if not keep.any():
            raise InputError("all weights are zero")
        atoms, weights = atoms[keep], weights[keep]
        total = weights.sum()
        if abs(total - 1.0) > 1e-9:
            raise InputError(f"weights sum to {total!r}, expected 1")
        weights = weights / total
        if self.names is not None and len(self.names) != atoms.shape[1]:
            raise InputError(f"{len(self.names)} names for dimension {atoms.shape[1]}")
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)
        if self.centered and np.max(np.abs(self.mean())) > CENTER_TOL:
            raise InputError("marginal flagged centered but has nonzero mean")

    @classmethod
    def uniform(cls, atoms, **kwargs) -> "DiscreteMarginal":
        atoms = np.asarray(atoms, dtype=float)
        n = atoms.shape[0]
        return cls(atoms, np.full(n, 1.0 / n), **kwargs)

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    def second_moment(self) -> np.ndarray:
        """Weighted E[X X'] (the covariance when centered)."""
        return (self.atoms * self.weights[:, None]).T @ self.atoms

    def std(self) -> np.ndarray:
        mu = self.mean()
        return np.sqrt(self.weights @ (self.atoms - mu) ** 2)

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "dim": self.dim,
            "centered": self.centered,
            "atoms": self.atoms.tolist(),
            "weights": self.weights.tolist(),
        }


def center(m: DiscreteMarginal) -> DiscreteMarginal:
    """Shift atoms so the weighted mean is zero; weights are untouched."""
    shifted = m.atoms - m.mean()
    # a second pass removes the O(eps) residue of the first
    shifted = shifted - m.weights @ shifted
    return DiscreteMarginal(shifted, m.weights, centered=True, names=m.names)


def _parse_float(token: str, line: int, col: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"column {col + 1}: cannot parse {token!r} as a number", line) from None
    if not math.isfinite(value):
        raise InputError(f"line {line}, column {col + 1}: non-finite entry {token!r}")
    return value


def read_numeric_csv(csv_path) -> tuple[list[str], np.ndarray]:
    """Read a headed, comma-separated numeric table."""
    path = Path(csv_path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    rows = csv.reader(text.splitlines())
    try:
        header = next(rows)
    except StopIteration:
        raise InputError(f"{path}: empty file") from None
    header = [h.strip() for h in header]
    ncol = len(header)
    data = []
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not tok.strip() for tok in row):
            continue
        if len(row) != ncol:
            raise ParseError(f"expected {ncol} fields, found {len(row)}", lineno)
        data.append([_parse_float(tok.strip(), lineno, j) for j, tok in enumerate(row)])
    if not data:
        raise InputError(f"{path}: no data rows")
    return header, np.array(data, dtype=float)


def load_returns(csv_path, group_split: int) -> tuple[DiscreteMarginal, DiscreteMarginal]:
    """Load paired return series and split columns into the X and Y groups.

    The first ``group_split`` columns form X, the rest Y. Each row becomes
    one atom of weight 1/N in both marginals, so row ``t`` of X and row
    ``t`` of Y stay paired (the empirical coupling). Both are centered.
    """
    header, data = read_numeric_csv(csv_path)
    ncol = data.shape[1]
    if not 1 <= group_split < ncol:
        raise InputError(f"group_split must lie in [1, {ncol - 1}], got {group_split}")
    n = data.shape[0]
    w = np.full(n, 1.0 / n)
    p = DiscreteMarginal(data[:, :group_split], w, names=tuple(header[:group_split]))
    q = DiscreteMarginal(data[:, group_split:], w, names=tuple(header[group_split:]))
    return center(p), center(q)


@dataclass(frozen=True)
class OptionMarginalSpec:
    """Lognormal martingale terminal law for ``n`` underlyings."""

    vols: np.ndarray
    corr: np.ndarray
    spot: np.ndarray | None = None
    maturity: float = 1.0
    atom_count: int = 200
    seed: int = 0

    def __post_init__(self):
        vols = np.atleast_1d(np.asarray(self.vols, dtype=float))
        n = vols.shape[0]
        corr = np.atleast_2d(np.asarray(self.corr, dtype=float))
        spot = np.ones(n) if self.spot is None else np.atleast_1d(np.asarray(self.spot, dtype=float))
        if corr.shape != (n, n):
            raise InputError(f"corr must be {n}x{n}, got {corr.shape}")
        if spot.shape != (n,):
            raise InputError(f"spot must have length {n}")
        if np.any(vols <= 0) or not np.all(np.isfinite(vols)):
            raise InputError("vols must be positive")
        if np.any(spot <= 0):
            raise InputError("spot levels must be positive")
        if not self.maturity > 0:
            raise InputError("maturity must be positive")
        if int(self.atom_count) < 2:
            raise InputError("atom_count must be at least 2")
        if not np.allclose(corr, corr.T, atol=1e-12, rtol=0):
            raise InputError("corr is not symmetric")
        if not np.allclose(np.diag(corr), 1.0, atol=1e-12, rtol=0):
            raise InputError("corr must have a unit diagonal")
        min_eig = float(np.linalg.eigvalsh(corr)[0])
        if min_eig < -PSD_TOL:
            raise InputError(f"corr is not positive semi-definite (eigenvalue {min_eig:.3e})")
        object.__setattr__(self, "vols", vols)
        object.__setattr__(self, "corr", corr)
        object.__setattr__(self, "spot", spot)
        object.__setattr__(self, "atom_count", int(self.atom_count))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def n(self) -> int:
        return self.vols.shape[0]

    @classmethod
    def from_dict(cls, d: dict) -> "OptionMarginalSpec":
        return cls(
            vols=d["vols"],
            corr=d["corr"],
            spot=d.get("spot"),
            maturity=d.get("maturity", 1.0),
            atom_count=d.get("atom_count", 200),
            seed=d.get("seed", 0),
        )

    @classmethod
    def from_json(cls, path) -> "OptionMarginalSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "vols": self.vols.tolist(),
            "corr": self.corr.tolist(),
            "spot": self.spot.tolist(),
            "maturity": self.maturity,
            "atom_count": self.atom_count,
            "seed": self.seed,
        }


def _psd_sqrt(corr: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(corr)
    return evecs * np.sqrt(np.clip(evals, 0.0, None))


def synthesize_lognormal(spec: OptionMarginalSpec) -> DiscreteMarginal:
    """Equal-weight Monte Carlo discretization of the terminal law.

    Atoms are ``spot * exp(vol * sqrt(tau) * Z - vol**2 * tau / 2)`` with
    ``Z`` Gaussian with correlation ``spec.corr``. Draws come from a
    Philox counter-based generator keyed by ``spec.seed``.
    """
    rng = np.random.Generator(np.random.Philox(spec.seed))
    z = rng.standard_normal((spec.atom_count, spec.n)) @ _psd_sqrt(spec.corr).T
    s = spec.vols * math.sqrt(spec.maturity)
    atoms = spec.spot * np.exp(s * z - 0.5 * s**2)
    return DiscreteMarginal.uniform(atoms)
