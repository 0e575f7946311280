"""Affinity-matrix fitting, dependence index and temperature trajectories.

Given a target cross-covariance ``sigma_hat`` (typically that of the
empirical pairing of two return series), the affinity matrix ``M_hat`` is
the minimizer of the convex function

    F(M) = W(M, 1) - sigma_hat . M,

whose gradient is ``cross_cov(pi_{M,1}) - sigma_hat``. Lowering the
temperature with ``M_hat`` fixed then moves the coupling continuously from
independence (large T) through the fitted coupling (T = 1) towards an
extreme coupling (T -> 0).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import transport
from .errors import ConvergenceError, InputError, UndefinedIndexError
from .marginals import DiscreteMarginal

log = logging.getLogger(__name__)

FIT_MARGINAL_TOL = 1e-12
FIT_MAX_ITER = 500
LBFGS_MEMORY = 10


def default_temperatures(n: int = 40, hi: float = 1e2, lo: float = 1e-3) -> np.ndarray:
    """Geometric grid from ``hi`` down to ``lo``."""
    return np.geomspace(hi, lo, n)


@dataclass(frozen=True)
class FitResult:
    """Outcome of :func:`fit_affinity`.

    ``history`` holds the objective F at every accepted iterate.
    """

    m_hat: np.ndarray
    fit_error: float
    iterations: int
    converged: bool
    dependence_index: float
    grad_norm: float
    sigma_fit: np.ndarray
    target: np.ndarray
    history: list[float] = field(default_factory=list, repr=False)
    coupling: transport.Coupling | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "m_hat": self.m_hat.tolist(),
            "fit_error": self.fit_error,
            "iterations": self.iterations,
            "converged": self.converged,
            "dependence_index": self.dependence_index,
            "grad_norm": self.grad_norm,
            "sigma_fit": self.sigma_fit.tolist(),
            "target": self.target.tolist(),
        }


@dataclass(frozen=True)
class TrajectoryPoint:
    temperature: float
    sigma: np.ndarray
    entropy: float
    objective: float
    iterations: int = 0
    coupling: transport.Coupling | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "sigma": self.sigma.tolist(),
            "entropy": self.entropy,
            "objective": self.objective,
            "iterations": self.iterations,
        }


def target_cov(P: DiscreteMarginal, Q: DiscreteMarginal, paired_rows: bool = True) -> np.ndarray:
    """Cross-covariance of the row-paired (empirical) coupling.

    Row ``t`` of P is matched with row ``t`` of Q, each pair carrying the
    common atom weight. With ``paired_rows=False`` the independence
    coupling is used instead, giving ``E[X] E[Y]'``.
    """
    if not paired_rows:
        return np.outer(P.mean(), Q.mean())
    if P.size != Q.size:
        raise InputError(f"paired rows need equal atom counts, got {P.size} and {Q.size}")
    if not np.array_equal(P.weights, Q.weights):
        raise InputError("paired rows need identical atom weights")
    return (P.atoms * P.weights[:, None]).T @ Q.atoms


def dependence_index(m_hat) -> float:
    """Effective temperature ``1 / ||M_hat||_F`` of the fitted coupling."""
    norm = float(np.linalg.norm(np.asarray(m_hat, dtype=float)))
    if norm == 0.0:
        raise UndefinedIndexError("dependence index is undefined for a zero affinity matrix")
    return 1.0 / norm


class _Objective:
    """F(M) = W(M,1) - sigma_hat . M with warm-started inner solves."""

    def __init__(self, P, Q, sigma_hat, marginal_tol, max_inner):
        self.P, self.Q = P, Q
        self.sigma_hat = sigma_hat
        self.shape = sigma_hat.shape
        self.opts = {"marginal_tol": marginal_tol, "max_iter": max_inner}
        self.last = None
        self.evaluations = 0

    def __call__(self, m_flat):
        M = m_flat.reshape(self.shape)
        c = transport.ipfp_solve(self.P, self.Q, M, 1.0, warm_start=self.last, **self.opts)
        self.last = c
        self.evaluations += 1
        sigma = transport.cross_cov(c, self.P, self.Q)
        f = transport.w_value(c, self.P, self.Q) - float(np.sum(self.sigma_hat * M))
        return f, (sigma - self.sigma_hat).ravel(), c, sigma


def _two_loop(grad, s_hist, y_hist):
    q = grad.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / (y @ s)
        alpha = rho * (s @ q)
        q -= alpha * y
        alphas.append((rho, alpha, s, y))
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= (s @ y) / (y @ y)
    for rho, alpha, s, y in reversed(alphas):
        beta = rho * (y @ q)
        q += (alpha - beta) * s
    return q


def fit_affinity(
    P: DiscreteMarginal,
    Q: DiscreteMarginal,
    sigma_hat,
    *,
    grad_tol: float | None = None,
    max_iter: int = FIT_MAX_ITER,
    marginal_tol: float = FIT_MARGINAL_TOL,
    max_inner: int = transport.MAX_ITER,
) -> FitResult:
    """Find ``M_hat`` whose temperature-1 coupling reproduces ``sigma_hat``.

    Minimizes ``W(M, 1) - sigma_hat . M`` from ``M = 0`` with L-BFGS and an
    Armijo backtracking line search. Stops when the Frobenius norm of the
    gradient ``cross_cov(pi_M) - sigma_hat`` is at most ``grad_tol``
    (default ``1e-8 * (1 + ||sigma_hat||)``).

    On line-search failure or when ``max_iter`` is reached, the best
    iterate is returned with ``converged=False``.
    """
    sigma_hat = np.atleast_2d(np.asarray(sigma_hat, dtype=float))
    if sigma_hat.shape != (P.dim, Q.dim):
        raise InputError(f"target is {sigma_hat.shape}, marginals need {(P.dim, Q.dim)}")
    target_norm = float(np.linalg.norm(sigma_hat))
    if grad_tol is None:
        grad_tol = 1e-8 * (1.0 + target_norm)

    obj = _Objective(P, Q, sigma_hat, marginal_tol, max_inner)
    x = np.zeros(sigma_hat.size)
    f, g, coupling, sigma = obj(x)
    history = [f]
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    converged = False
    it = 0
    while True:
        gnorm = float(np.linalg.norm(g))
        if gnorm <= grad_tol:
            converged = True
            break
        if it >= max_iter:
            break
        d = -_two_loop(g, s_hist, y_hist)
        slope = g @ d
        if slope >= 0:
            # curvature pairs went stale; restart from steepest descent
            s_hist.clear()
            y_hist.clear()
            d = -g
            slope = -gnorm**2
        if not s_hist:
            # first step: unit length in M, a natural scale for F
            d = d / max(1.0, float(np.linalg.norm(d)))
            slope = g @ d
        t = 1.0
        accepted = False
        for _ in range(60):
            f_new, g_new, c_new, sigma_new = obj(x + t * d)
            if f_new <= f + 1e-4 * t * slope:
                accepted = True
                break
            # F is flat to rounding near the minimum; accept gradient progress
            if abs(f_new - f) <= 1e-13 * max(1.0, abs(f)) and np.linalg.norm(g_new) < gnorm:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            log.warning("line search failed at iteration %d (gradient norm %.3e)", it, gnorm)
            obj.last = coupling
            break
        s = t * d
        y = g_new - g
        if y @ s > 1e-16 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > LBFGS_MEMORY:
                s_hist.pop(0)
                y_hist.pop(0)
        x = x + s
        f, g, coupling, sigma = f_new, g_new, c_new, sigma_new
        history.append(f)
        it += 1

    m_hat = x.reshape(sigma_hat.shape)
    err = float(np.linalg.norm(sigma - sigma_hat))
    fit_error = err / target_norm if target_norm > 0 else err
    norm = float(np.linalg.norm(m_hat))
    index = 1.0 / norm if norm > 0 else math.inf
    return FitResult(
        m_hat=m_hat,
        fit_error=fit_error,
        iterations=it,
        converged=converged,
        dependence_index=index,
        grad_norm=float(np.linalg.norm(g)),
        sigma_fit=sigma,
        target=sigma_hat,
        history=history,
        coupling=coupling,
    )


def _point(P, Q, m_hat, c):
    sigma = transport.cross_cov(c, P, Q)
    return TrajectoryPoint(
        temperature=c.temperature,
        sigma=sigma,
        entropy=transport.entropy(c),
        objective=float(np.sum(sigma * m_hat)),
        iterations=c.iterations,
        coupling=c,
    )


def trajectory(
    P: DiscreteMarginal,
    Q: DiscreteMarginal,
    m_hat,
    temps=None,
    *,
    marginal_tol: float = transport.MARGINAL_TOL,
    max_iter: int = transport.MAX_ITER,
    parallel: bool = False,
    workers: int | None = None,
) -> list[TrajectoryPoint]:
    """Couplings ``pi_{M_hat, T}`` along a strictly decreasing temperature grid.

    Sequential mode warm-starts each solve from the previous temperature.
    ``parallel=True`` solves every temperature from a cold start in a
    thread pool; results keep the grid order.
    """
    m_hat = np.atleast_2d(np.asarray(m_hat, dtype=float))
    temps = default_temperatures() if temps is None else np.asarray(temps, dtype=float).ravel()
    if temps.size == 0 or np.any(temps <= 0):
        raise InputError("temperatures must be positive")
    if np.any(np.diff(temps) >= 0):
        raise InputError("temperatures must be strictly decreasing")
    opts = {"marginal_tol": marginal_tol, "max_iter": max_iter}

    def cold(T):
        try:
            return transport.ipfp_solve(P, Q, m_hat, T, **opts)
        except ConvergenceError as exc:
            exc.temperature = float(T)
            exc.args = (f"T={T:.6g}: {exc.args[0]}",)
            raise

    if parallel:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            couplings = list(pool.map(cold, temps))
        return [_point(P, Q, m_hat, c) for c in couplings]

    points = []
    prev = None
    for T in temps:
        try:
            c = transport.ipfp_solve(P, Q, m_hat, float(T), warm_start=prev, **opts)
        except ConvergenceError as exc:
            exc.temperature = float(T)
            exc.args = (f"T={T:.6g}: {exc.args[0]}",)
            raise
        prev = c
        points.append(_point(P, Q, m_hat, c))
    return points


def trajectory_rows(points: list[TrajectoryPoint]) -> tuple[list[str], list[list[float]]]:
    """Plot-ready table: T, sigma_11 .. sigma_IJ, entropy, objective."""
    i, j = points[0].sigma.shape
    header = ["T"] + [f"sigma_{a + 1}{b + 1}" for a in range(i) for b in range(j)]
    header += ["entropy", "objective"]
    rows = [[p.temperature, *p.sigma.ravel().tolist(), p.entropy, p.objective] for p in points]
    return header, rows
