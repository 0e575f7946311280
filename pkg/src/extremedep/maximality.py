"""Conic orders on cross-covariances and positive extreme dependence.

A compact convex basis B (0 not in B) generates the dual cone
K(B) = {Y : M . Y >= 0 for all M in B}. A cross-covariance sigma is
maximal for the strict order of K(B) iff

    inf_{M in B} g(M) = 0,    g(M) = h(M) - sigma . M,

where h is the support function of the covariance set. g is convex and
polyhedral, each evaluation is one exact transport solve, and its
subgradient at M is ``s*(M) - sigma`` for the support point ``s*(M)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, minimize

from . import covset, transport
from .errors import InputError
from .marginals import DiscreteMarginal

KINDS = ("orthant", "loewner", "custom")
MIN_GENERATOR_NORM = 1e-9
MAX_FW_ITER = 2000


def _sign_fix(u: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(u) > 1e-14)
    return -u if nz.size and u[nz[0]] < 0 else u


@dataclass(frozen=True)
class ConicBasis:
    """Compact basis of a cone of matrices.

    ``orthant``: entrywise nonnegative matrices with unit entry sum.
    ``loewner``: symmetric PSD matrices with unit trace (square only).
    ``custom``: convex hull of ``custom_generators``.
    """

    kind: str
    dims: tuple[int, int]
    custom_generators: tuple[np.ndarray, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown basis kind {self.kind!r}; expected one of {KINDS}")
        dims = tuple(int(x) for x in self.dims)
        if len(dims) != 2 or min(dims) < 1:
            raise InputError(f"invalid dims {self.dims}")
        object.__setattr__(self, "dims", dims)
        if self.kind == "loewner" and dims[0] != dims[1]:
            raise InputError(f"the Loewner basis needs a square shape, got {dims}")
        if self.kind == "custom":
            if not self.custom_generators:
                raise InputError("a custom basis needs at least one generator")
            gens = tuple(np.atleast_2d(np.asarray(g, dtype=float)) for g in self.custom_generators)
            for g in gens:
                if g.shape != dims:
                    raise InputError(f"generator of shape {g.shape} in a {dims} basis")
                if np.linalg.norm(g) < MIN_GENERATOR_NORM:
                    raise InputError("generators must be nonzero")
            object.__setattr__(self, "custom_generators", gens)
            if self.min_norm() < MIN_GENERATOR_NORM:
                raise InputError("the convex hull of the generators contains 0")

    @classmethod
    def orthant(cls, i: int, j: int) -> "ConicBasis":
        return cls("orthant", (i, j))

    @classmethod
    def loewner(cls, n: int) -> "ConicBasis":
        return cls("loewner", (n, n))

    def barycenter(self) -> np.ndarray:
        i, j = self.dims
        if self.kind == "orthant":
            return np.full((i, j), 1.0 / (i * j))
        if self.kind == "loewner":
            return np.eye(i) / i
        return np.mean(self.custom_generators, axis=0)

    def vertices(self) -> list[np.ndarray]:
        """A finite set of extreme points (all of them unless Loewner)."""
        i, j = self.dims
        if self.kind == "orthant":
            out = []
            for a in range(i):
                for b in range(j):
                    E = np.zeros((i, j))
                    E[a, b] = 1.0
                    out.append(E)
            return out
        if self.kind == "loewner":
            return [np.outer(e, e) for e in np.eye(i)]
        return list(self.custom_generators)

    @property
    def is_polytope(self) -> bool:
        return self.kind != "loewner"

    def min_norm(self) -> float:
        """Smallest Frobenius norm over B."""
        i, j = self.dims
        if self.kind == "orthant":
            return 1.0 / np.sqrt(i * j)
        if self.kind == "loewner":
            return 1.0 / np.sqrt(i)
        A = np.array([g.ravel() for g in self.custom_generators]).T
        k = A.shape[1]
        res = minimize(
            lambda lam: 0.5 * float(np.sum((A @ lam) ** 2)),
            np.full(k, 1.0 / k),
            jac=lambda lam: A.T @ (A @ lam),
            bounds=[(0.0, 1.0)] * k,
            constraints=[{"type": "eq", "fun": lambda lam: lam.sum() - 1.0}],
            method="SLSQP",
            options={"ftol": 1e-15, "maxiter": 500},
        )
        return float(np.linalg.norm(A @ np.clip(res.x, 0.0, None) / np.clip(res.x, 0.0, None).sum()))

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "dims": list(self.dims)}
        if self.custom_generators is not None:
            out["custom_generators"] = [g.tolist() for g in self.custom_generators]
        return out


def linear_minimize_over_basis(B: ConicBasis, G) -> tuple[np.ndarray, float]:
    """Return ``argmin_{M in B} G . M`` and the minimal value.

    Orthant: the elementary matrix at the smallest entry of G (first in
    row-major order on ties). Loewner: ``u u'`` for a unit eigenvector of
    the smallest eigenvalue of ``(G + G') / 2``. Custom: best generator.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if G.shape != B.dims:
        raise InputError(f"G is {G.shape}, basis is {B.dims}")
    if B.kind == "orthant":
        k = int(np.argmin(G))
        M = np.zeros(B.dims)
        M.flat[k] = 1.0
        return M, float(G.flat[k])
    if B.kind == "loewner":
        evals, evecs = np.linalg.eigh(0.5 * (G + G.T))
        u = _sign_fix(evecs[:, 0])
        return np.outer(u, u), float(evals[0])
    values = [float(np.sum(G * g)) for g in B.custom_generators]
    k = int(np.argmin(values))
    return B.custom_generators[k].copy(), values[k]


@dataclass(frozen=True)
class GapResult:
    """Outcome of :func:`maximality_gap`.

    ``gap`` is the smallest g(M) found and ``witness_M`` attains it.
    ``lower_bound`` is a proven lower bound on ``inf_B g`` from the cuts.
    ``duality_gap`` is ``gap - max(lower_bound, 0)``; the clamp at 0 uses
    the precondition that sigma lies in the covariance set.

    Verdicts: ``"maximal"`` (|gap| <= gap_tol), ``"not-maximal"``
    (lower_bound > gap_tol), ``"outside"`` (gap < -gap_tol, which proves
    sigma is not attainable: ``witness_M`` separates it from the set) or
    ``"inconclusive"`` (iteration limit).
    """

    verdict: str
    gap: float
    witness_M: np.ndarray
    lower_bound: float
    duality_gap: float
    gap_tol: float
    iterations: int
    directions_probed: int

    def __iter__(self):
        # unpacks as (gap, witness_M)
        return iter((self.gap, self.witness_M))

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "gap": self.gap,
            "witness_M": self.witness_M.tolist(),
            "lower_bound": self.lower_bound,
            "duality_gap": self.duality_gap,
            "gap_tol": self.gap_tol,
            "iterations": self.iterations,
            "directions_probed": self.directions_probed,
        }


class _GapOracle:
    def __init__(self, P, Q, sigma):
        self.P, self.Q, self.sigma = P, Q, sigma
        self.cuts: list[np.ndarray] = []
        self.calls = 0
        # (g value, point, subgradient there)
        self.best = (np.inf, None, None)

    def __call__(self, M) -> float:
        value, c = transport.ot_exact(self.P, self.Q, M)
        self.calls += 1
        cut = transport.cross_cov(c, self.P, self.Q) - self.sigma
        self.cuts.append(cut.ravel())
        g = value - float(np.sum(self.sigma * M))
        if g < self.best[0]:
            self.best = (g, M, cut)
        return g


def _master(cuts, atoms):
    # min t  s.t.  sum_a lam_a (c_k . A_a) <= t,  lam in the simplex
    C = np.array(cuts) @ np.array(atoms).T
    n_cut, n_atom = C.shape
    A_ub = np.hstack([C, -np.ones((n_cut, 1))])
    A_eq = np.hstack([np.ones((1, n_atom)), np.zeros((1, 1))])
    cost = np.zeros(n_atom + 1)
    cost[-1] = 1.0
    res = linprog(
        cost, A_ub=A_ub, b_ub=np.zeros(n_cut), A_eq=A_eq, b_eq=[1.0],
        bounds=[(0, None)] * n_atom + [(None, None)], method="highs",
    )
    if res.status != 0:  # pragma: no cover - bounded and feasible by construction
        raise RuntimeError(f"maximality master problem failed: {res.message}")
    lam = np.clip(res.x[:n_atom], 0.0, None)
    mu = np.clip(-res.ineqlin.marginals, 0.0, None)
    return lam / lam.sum(), float(res.x[-1]), mu


def maximality_gap(
    P: DiscreteMarginal,
    Q: DiscreteMarginal,
    pi_sigma,
    B: ConicBasis,
    *,
    max_fw_iter: int = MAX_FW_ITER,
    gap_tol: float | None = None,
) -> GapResult:
    """Minimize ``g(M) = h(M) - sigma . M`` over the basis B.

    Fully corrective conditional gradient: each iteration calls the linear
    oracle of B at the subgradient of the best point so far, adds the
    answer to a set of atoms, then minimizes the cutting-plane model of g
    over the convex hull of the atoms (a small linear program). The
    multipliers of that program combine the cuts into one linear minorant
    whose minimum over B (linear oracle again) is a lower bound, so the
    verdict is certified in both directions.

    ``gap_tol`` defaults to ``1e-6 * (1 + ||sigma||)``.
    """
    sigma = np.atleast_2d(np.asarray(pi_sigma, dtype=float))
    if sigma.shape != (P.dim, Q.dim):
        raise InputError(f"sigma is {sigma.shape}, marginals need {(P.dim, Q.dim)}")
    if B.dims != sigma.shape:
        raise InputError(f"basis dims {B.dims} do not match sigma {sigma.shape}")
    if gap_tol is None:
        gap_tol = 1e-6 * (1.0 + float(np.linalg.norm(sigma)))

    oracle = _GapOracle(P, Q, sigma)
    atoms = [v.ravel() for v in B.vertices()]
    for M in [B.barycenter(), *B.vertices()]:
        oracle(M)
    lower = -np.inf
    verdict = "inconclusive"
    it = 0
    while True:
        upper, _, cut = oracle.best
        S, val = linear_minimize_over_basis(B, cut)
        lower = max(lower, val)
        if upper < -gap_tol:
            verdict = "outside"
            break
        if upper <= gap_tol:
            verdict = "maximal"
            break
        if lower > gap_tol:
            verdict = "not-maximal"
            break
        if it >= max_fw_iter:
            break
        if not any(np.array_equal(S.ravel(), a) for a in atoms):
            atoms.append(S.ravel())
        lam, t, mu = _master(oracle.cuts, atoms)
        if B.is_polytope:
            # the atoms span all of B, so the model minimum is a bound
            lower = max(lower, t)
        elif mu.sum() > 0:
            agg = (mu / mu.sum()) @ np.array(oracle.cuts)
            lower = max(lower, linear_minimize_over_basis(B, agg.reshape(B.dims))[1])
        oracle((lam @ np.array(atoms)).reshape(B.dims))
        it += 1

    upper, M_best, _ = oracle.best
    return GapResult(
        verdict=verdict,
        gap=float(upper),
        witness_M=np.array(M_best, dtype=float),
        lower_bound=float(lower),
        duality_gap=float(upper - max(lower, 0.0)),
        gap_tol=float(gap_tol),
        iterations=it,
        directions_probed=oracle.calls,
    )


def matched_tolerance(B: ConicBasis, gap_tol: float) -> float:
    """Slack tolerance for :func:`is_extreme` implied by a gap tolerance.

    ``g(M) <= gap_tol`` with ``M`` in B gives a slack of at most
    ``gap_tol / ||M||`` along the unit direction ``M / ||M||``.
    """
    return gap_tol / B.min_norm()


@dataclass(frozen=True)
class ExtremeVerdict:
    """Outcome of :func:`is_extreme`: ``"extreme"``, ``"not-extreme"`` or
    ``"outside"`` (sigma is not attainable). ``direction`` supports the
    covariance set at sigma when extreme."""

    verdict: str
    direction: np.ndarray | None
    membership: covset.Membership

    def to_dict(self) -> dict:
        out = self.membership.to_dict()
        out["membership"] = out.pop("verdict")
        out["verdict"] = self.verdict
        out["direction"] = None if self.direction is None else self.direction.tolist()
        return out


def is_extreme(
    P: DiscreteMarginal,
    Q: DiscreteMarginal,
    pi_sigma,
    tol: float = 1e-8,
    *,
    directions=None,
    **contains_opts,
) -> ExtremeVerdict:
    """Whether sigma lies on the boundary of the covariance set.

    Thin wrapper over :func:`covset.contains`; ``directions`` are extra
    candidate supporting directions (for instance a maximality witness).
    """
    m = covset.contains(P, Q, pi_sigma, tol, extra_directions=directions, **contains_opts)
    if m.verdict == "boundary":
        return ExtremeVerdict("extreme", m.direction, m)
    if m.verdict == "inside":
        return ExtremeVerdict("not-extreme", None, m)
    return ExtremeVerdict("outside", m.direction, m)


def classify(
    P: DiscreteMarginal,
    Q: DiscreteMarginal,
    pi_sigma,
    B: ConicBasis,
    *,
    max_fw_iter: int = MAX_FW_ITER,
    gap_tol: float | None = None,
    tol: float = 1e-8,
) -> dict:
    """Combined verdict used by the command line.

    ``"positive-extreme"`` when the maximality gap is certified below
    ``gap_tol``; otherwise ``"extreme"``, ``"not-extreme"`` or ``"outside"``
    from the boundary test, or ``"inconclusive"``.
    """
    gap = maximality_gap(P, Q, pi_sigma, B, max_fw_iter=max_fw_iter, gap_tol=gap_tol)
    ext = is_extreme(
        P, Q, pi_sigma, max(tol, matched_tolerance(B, gap.gap_tol)) if gap.verdict == "maximal" else tol,
        directions=[gap.witness_M],
    )
    if gap.verdict == "outside" or ext.verdict == "outside":
        verdict = "outside"
    elif gap.verdict == "maximal":
        verdict = "positive-extreme"
    elif gap.verdict == "inconclusive" and ext.verdict != "extreme":
        verdict = "inconclusive"
    else:
        verdict = ext.verdict
    return {
        "verdict": verdict,
        "gap": gap.gap,
        "witness_M": gap.witness_M.tolist(),
        "directions_probed": gap.directions_probed + ext.membership.directions_probed,
        "maximality": gap.to_dict(),
        "boundary": ext.to_dict(),
    }
