"""Entropy-penalized and exact couplings between two discrete marginals.

The entropic problem

    W(M, T) = max_{pi in Pi(P, Q)}  E_pi[X' M Y] + T * Ent(pi)

has a Gibbs-form solution ``log pi(x, y) = x'My / T + u(x) + v(y)``. The
scalings ``u, v`` are found by iterative proportional fitting (alternate
row and column rescaling), run entirely in log space. When the sweeps
stall, which happens at low temperature, the solver switches to damped
Newton steps on the same dual variables; the fixed point is identical.

``T = 0`` is the unregularized linear program over the transport polytope
and is routed to :func:`ot_exact`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import linear_sum_assignment, linprog

from .errors import ConvergenceError, ShapeError
from .marginals import DiscreteMarginal

MARGINAL_TOL = 1e-10
MAX_ITER = 100_000
# sweeps before switching to Newton polishing
NEWTON_AFTER = 10
# Newton builds an L x L system; beyond this size only sweeps are used
NEWTON_MAX_SIZE = 3000
# cold starts anneal from a temperature where the log kernel spans this much
ANNEAL_SPAN = 30.0
# temperature ratio between consecutive annealing stages
ANNEAL_FACTOR = 4.0
# iteration cap for intermediate annealing stages
ANNEAL_STAGE_ITER = 2000


@dataclass(frozen=True)
class Coupling:
    """Joint probability table over atom pairs.

    Rows index atoms of P, columns atoms of Q. For ``temperature > 0`` the
    log potentials satisfy ``log probs = gains / T + u[:, None] + v[None, :]``
    where ``gains[x, y] = x' M y``. Exact couplings (``temperature == 0``)
    carry no potentials.
    """

    probs: np.ndarray
    temperature: float
    u: np.ndarray | None = None
    v: np.ndarray | None = None
    iterations: int = 0
    newton_steps: int = 0
    residual: float = 0.0

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape

    def marginal_residual(self, P: DiscreteMarginal, Q: DiscreteMarginal) -> float:
        """Sum of the L1 deviations of both marginals."""
        rows = np.abs(self.probs.sum(axis=1) - P.weights).sum()
        cols = np.abs(self.probs.sum(axis=0) - Q.weights).sum()
        return float(rows + cols)

    def to_dict(self) -> dict:
        n, l = self.probs.shape
        out = {
            "rows": n,
            "cols": l,
            "temperature": self.temperature,
            "probs": self.probs.ravel().tolist(),
            "iterations": self.iterations,
            "newton_steps": self.newton_steps,
            "residual": self.residual,
        }
        if self.u is not None:
            out["u"] = self.u.tolist()
            out["v"] = self.v.tolist()
        return out


def _check_dims(P: DiscreteMarginal, Q: DiscreteMarginal, M) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != (P.dim, Q.dim):
        raise ShapeError(f"affinity matrix is {M.shape}, marginals need {(P.dim, Q.dim)}")
    if not np.all(np.isfinite(M)):
        raise ShapeError("affinity matrix has non-finite entries")
    return M


def gains(P: DiscreteMarginal, Q: DiscreteMarginal, M) -> np.ndarray:
    """Table of bilinear gains ``x' M y`` over all atom pairs."""
    M = _check_dims(P, Q, M)
    return P.atoms @ M @ Q.atoms.T


def kernel(P: DiscreteMarginal, Q: DiscreteMarginal, M, T: float) -> np.ndarray:
    """Log of the Gibbs kernel ``exp(x'My / T)``, shifted so its maximum is 0."""
    if not T > 0:
        raise ValueError("kernel needs a positive temperature")
    logk = gains(P, Q, M) / T
    return logk - logk.max()


def _lse(x, axis):
    m = x.max(axis=axis, keepdims=True)
    out = np.log(np.exp(x - m).sum(axis=axis)) + np.squeeze(m, axis=axis)
    return out


def _row_potential(logk, v, log_a):
    return log_a - _lse(logk + v[None, :], axis=1)


def _col_potential(logk, u, log_b):
    return log_b - _lse(logk + u[:, None], axis=0)


def _semidual(logk, v, a, b, log_a):
    # concave in v; its maximizer is the entropic solution
    u = _row_potential(logk, v, log_a)
    return a @ u + b @ v, u


def _newton_direction(probs, a, b, r):
    # Hessian of the semi-dual is a graph Laplacian; assembling it from the
    # off-diagonal weights avoids cancellation when probs is near-sparse.
    w = probs.T @ (probs / a[:, None])
    np.fill_diagonal(w, 0.0)
    lap = np.diag(w.sum(axis=1)) - w
    # b b' pins the constant (gauge) direction
    lap += np.outer(b, b)
    try:
        return cho_solve(cho_factor(lap, check_finite=False), r, check_finite=False)
    except LinAlgError:
        ridge = 1e-12 * max(float(np.max(np.diag(lap))), 1e-300)
        return np.linalg.lstsq(lap + ridge * np.eye(len(r)), r, rcond=None)[0]


def solve_gibbs(
    logk: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    *,
    v0: np.ndarray | None = None,
    max_iter: int = MAX_ITER,
    marginal_tol: float = MARGINAL_TOL,
    method: str = "auto",
):
    """Scale ``exp(logk)`` to marginals ``a`` (rows) and ``b`` (columns).

    Returns ``(probs, u, v, sweeps, newton_steps, residual)`` with
    ``probs = exp(logk + u[:, None] + v[None, :])``. Rows are exact after
    every update; ``residual`` is the L1 column error plus the L1 row error.

    ``method="ipfp"`` uses only the alternating updates; ``"auto"`` switches
    to Newton steps on ``v`` after ``NEWTON_AFTER`` sweeps.
    """
    out = _scale(logk, a, b, v0, max_iter, marginal_tol, method)
    if not out[-1]:
        sweeps, newton, resid = out[3], out[4], out[5]
        raise ConvergenceError(
            f"marginal scaling did not converge in {max_iter} iterations (residual {resid:.3e})",
            residual=resid,
            iterations=sweeps + newton,
        )
    return out[:-1]


def _scale(logk, a, b, v0, max_iter, marginal_tol, method):
    if method not in ("auto", "ipfp"):
        raise ValueError(f"unknown method {method!r}")
    log_a, log_b = np.log(a), np.log(b)
    v = np.zeros(len(b)) if v0 is None else np.array(v0, dtype=float)
    use_newton = method == "auto" and len(b) <= NEWTON_MAX_SIZE
    sweeps = newton = 0
    resid = math.inf
    for it in range(max_iter + 1):
        u = _row_potential(logk, v, log_a)
        probs = np.exp(logk + u[:, None] + v[None, :])
        colsum = probs.sum(axis=0)
        resid = float(np.abs(colsum - b).sum() + np.abs(probs.sum(axis=1) - a).sum())
        if resid <= marginal_tol:
            return probs, u, v, sweeps, newton, resid, True
        if it == max_iter:
            break
        if use_newton and sweeps >= NEWTON_AFTER:
            v = _newton_step(logk, v, u, probs, colsum, a, b, log_a, resid)
            newton += 1
        else:
            # column rescaling; with the row update at the top of the loop
            # this is one IPFP sweep
            if np.all(colsum > 0):
                v = v + log_b - np.log(colsum)
            else:
                v = _col_potential(logk, u, log_b)
            sweeps += 1
    return probs, u, v, sweeps, newton, resid, False


def _anneal_schedule(T_start: float, T: float) -> list[float]:
    """Geometric temperatures from ``T_start`` down to ``T`` (inclusive)."""
    if T_start <= T * ANNEAL_FACTOR:
        return [T]
    n = math.ceil(math.log(T_start / T) / math.log(ANNEAL_FACTOR))
    return [T * (T_start / T) ** (k / n) for k in range(n, 0, -1)] + [T]


def _newton_step(logk, v, u, probs, colsum, a, b, log_a, resid):
    r = b - colsum
    d = _newton_direction(probs, a, b, r)
    slope = r @ d
    if not np.isfinite(slope) or slope <= 0:
        # ill-conditioned solve gave no ascent direction
        return _col_potential(logk, u, np.log(b))
    s0 = a @ u + b @ v
    flat = 1e-12 * (1.0 + abs(s0))
    t = 1.0
    while t > 1e-12:
        trial = v + t * d
        s1, u1 = _semidual(logk, trial, a, b, log_a)
        if s1 >= s0 + 1e-4 * t * slope:
            return trial
        if s1 >= s0 - flat:
            # near the fixed point the dual value is flat to rounding; fall
            # back to residual decrease
            p1 = np.exp(logk + u1[:, None] + trial[None, :])
            r1 = float(np.abs(p1.sum(axis=0) - b).sum() + np.abs(p1.sum(axis=1) - a).sum())
            if r1 < resid:
                return trial
        t *= 0.5
    # no progress along the Newton direction: take a plain sweep instead
    return _col_potential(logk, u, np.log(b))


def ipfp_solve(
    P: DiscreteMarginal,
    Q: DiscreteMarginal,
    M,
    T: float,
    *,
    max_iter: int = MAX_ITER,
    marginal_tol: float = MARGINAL_TOL,
    warm_start: Coupling | None = None,
    method: str = "auto",
) -> Coupling:
    """Entropy-penalized optimal coupling at temperature ``T > 0``.

    Parameters
    ----------
    P, Q : DiscreteMarginal
    M : array_like, shape (P.dim, Q.dim)
        Affinity matrix of the bilinear gain ``x' M y``.
    T : float
        Temperature (weight of the entropy term).
    max_iter : int
        Budget shared by scaling sweeps and Newton steps.
    marginal_tol : float
        Convergence threshold on the summed L1 marginal residual.
    warm_start : Coupling, optional
        A previous solution on the same marginals (any temperature);
        its column potential is rescaled to ``T``.
    method : {"auto", "ipfp"}

    Returns
    -------
    Coupling

    Raises
    ------
    ConvergenceError
        If the residual is still above ``marginal_tol`` after ``max_iter``.
    """
    if not T > 0:
        raise ValueError("ipfp_solve needs T > 0; use ot_exact for T = 0")
    g = gains(P, Q, M)
    v = None
    if warm_start is not None and warm_start.v is not None and warm_start.temperature > 0:
        # T * v is the potential in gain units and varies smoothly with T
        T_prev, v = warm_start.temperature, warm_start.v
        stages = _anneal_schedule(T_prev, T) if T_prev > T else [T]
    else:
        T_prev = T
        stages = _anneal_schedule(float(np.ptp(g)) / ANNEAL_SPAN, T)
    sweeps = newton = 0
    for k, T_k in enumerate(stages):
        last = k == len(stages) - 1
        v0 = None if v is None else v * (T_prev / T_k)
        budget = max_iter - sweeps - newton if last else min(ANNEAL_STAGE_ITER, max_iter)
        # intermediate stages only need a rough potential
        tol = marginal_tol if last else max(marginal_tol, 1e-6)
        probs, u, v, n_sweep, n_newton, resid, ok = _scale(
            g / T_k, P.weights, Q.weights, v0, max(budget, 0), tol, method
        )
        sweeps += n_sweep
        newton += n_newton
        T_prev = T_k
    if not ok:
        raise ConvergenceError(
            f"marginal scaling did not converge in {max_iter} iterations (residual {resid:.3e})",
            residual=resid,
            iterations=sweeps + newton,
        )
    return Coupling(probs, float(T), u, v, sweeps + newton, newton, resid)


def solve(P, Q, M, T: float, **opts) -> Coupling:
    """Dispatch on temperature: exact transport at ``T == 0``, IPFP otherwise."""
    if T == 0:
        return ot_exact(P, Q, M)[1]
    return ipfp_solve(P, Q, M, T, **opts)


def product_coupling(P: DiscreteMarginal, Q: DiscreteMarginal) -> Coupling:
    """Independence coupling ``P(x) Q(y)`` (the ``T -> inf`` limit)."""
    return Coupling(np.outer(P.weights, Q.weights), math.inf)


def ot_exact(P: DiscreteMarginal, Q: DiscreteMarginal, M) -> tuple[float, Coupling]:
    """Maximize ``E_pi[X' M Y]`` over the transport polytope.

    Equal-weight marginals of equal size go through the Hungarian
    algorithm (the optimum is a permutation). Everything else is solved as
    a linear program with the HiGHS dual simplex, whose answer is a basic
    solution, hence a vertex of the polytope.
    """
    g = gains(P, Q, M)
    n, l = g.shape
    if n == l and P.is_uniform and Q.is_uniform:
        rows, cols = linear_sum_assignment(g, maximize=True)
        probs = np.zeros((n, l))
        probs[rows, cols] = 1.0 / n
        value = float(g[rows, cols].sum() / n)
        return value, Coupling(probs, 0.0)
    return _ot_linprog(g, P.weights, Q.weights)


def _ot_linprog(g, a, b):
    n, l = g.shape
    # x is the row-major flattening of the coupling
    a_rows = np.kron(np.eye(n), np.ones((1, l)))
    a_cols = np.kron(np.ones((1, n)), np.eye(l))
    # one column constraint is implied by the others
    a_eq = np.vstack([a_rows, a_cols[:-1]])
    b_eq = np.concatenate([a, b[:-1]])
    res = linprog(-g.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs-ds")
    if res.status != 0:  # pragma: no cover - polytope is never empty
        raise RuntimeError(f"transport LP failed: {res.message}")
    probs = np.clip(res.x.reshape(n, l), 0.0, None)
    return float(np.sum(probs * g)), Coupling(probs, 0.0)


def cross_cov(c: Coupling, P: DiscreteMarginal, Q: DiscreteMarginal) -> np.ndarray:
    """Cross second-moment matrix ``sigma_ij = E_pi[X_i Y_j]``."""
    if c.probs.shape != (P.size, Q.size):
        raise ShapeError(f"coupling is {c.probs.shape}, marginals have {(P.size, Q.size)} atoms")
    return P.atoms.T @ c.probs @ Q.atoms


def entropy(c: Coupling) -> float:
    """Discrete Shannon entropy ``-sum pi log pi`` with ``0 log 0 = 0``."""
    p = c.probs[c.probs > 0]
    return float(-np.sum(p * np.log(p)))


def objective(c: Coupling, P, Q, M) -> float:
    """``E_pi[X' M Y]`` evaluated by summation over atom pairs."""
    return float(np.sum(c.probs * gains(P, Q, M)))


def w_value(c: Coupling, P: DiscreteMarginal, Q: DiscreteMarginal) -> float:
    """Entropic objective ``E[X'MY] + T Ent`` of a converged Gibbs coupling.

    Uses the dual expression ``-T (P.u + Q.v)``, which is stationary at
    the solution and therefore less sensitive to the marginal residual
    than summing the primal terms.
    """
    if c.u is None or not c.temperature > 0:
        raise ValueError("w_value needs a Gibbs coupling with T > 0")
    return float(-c.temperature * (P.weights @ c.u + Q.weights @ c.v))


def eval_W(P: DiscreteMarginal, Q: DiscreteMarginal, M, T: float, **opts) -> float:
    """Optimal value of the entropy-penalized problem at ``(M, T)``."""
    return w_value(ipfp_solve(P, Q, M, T, **opts), P, Q)
