"""Applications: covariance stress tests, rainbow option pricing, saliency.

All three reuse the fitted affinity matrix and its temperature trajectory.
Lowering the temperature strengthens the fitted dependence while keeping
the marginals fixed, so every stressed cross-covariance is attained by an
actual coupling and the assembled covariance matrix stays admissible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import affinity, covset, transport
from .errors import InfeasibleGuessError, InputError, SingularCovarianceError
from .marginals import DiscreteMarginal, OptionMarginalSpec, center, synthesize_lognormal

PSD_TOL = 1e-10
RIDGE_TOL = 1e-10


# ---------------------------------------------------------------- Markowitz


@dataclass(frozen=True)
class PortfolioSpec:
    """Mean-variance inputs over the concatenated assets (X then Y).

    ``cov_scale`` multiplies sample covariances before allocation, for
    instance to annualize daily percent returns (``252 / 1e4``).
    """

    mu: np.ndarray
    risk_aversion: float = 3.0
    asset_names: tuple[str, ...] | None = None
    cov_scale: float = 1.0

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        if mu.ndim != 1 or not np.all(np.isfinite(mu)):
            raise InputError("mu must be a finite vector")
        if not self.risk_aversion > 0:
            raise InputError("risk aversion must be positive")
        if not self.cov_scale > 0:
            raise InputError("cov_scale must be positive")
        if self.asset_names is not None and len(self.asset_names) != mu.size:
            raise InputError(f"{len(self.asset_names)} names for {mu.size} assets")
        object.__setattr__(self, "mu", mu)

    @classmethod
    def from_returns(
        cls, data: np.ndarray, risk_aversion: float = 3.0, *, periods: float = 252.0,
        unit: float = 100.0, asset_names=None,
    ) -> "PortfolioSpec":
        """Annualized spec from per-period returns expressed in ``1 / unit``."""
        data = np.asarray(data, dtype=float)
        mu = periods * data.mean(axis=0) / unit
        return cls(mu, risk_aversion, asset_names, periods / unit**2)

    def to_dict(self) -> dict:
        return {
            "mu": self.mu.tolist(),
            "risk_aversion": self.risk_aversion,
            "asset_names": None if self.asset_names is None else list(self.asset_names),
            "cov_scale": self.cov_scale,
        }


def markowitz(mu, Sigma, risk_aversion: float) -> np.ndarray:
    """Fully invested mean-variance weights.

    Maximizes ``mu . w - (lambda / 2) w' Sigma w`` subject to
    ``sum(w) = 1`` (no bounds) by solving the KKT system

        [lambda Sigma  1] [w  ]   [mu]
        [1'            0] [eta] = [1 ].

    A matrix with smallest eigenvalue in ``(-1e-10, 0)`` is nudged onto
    the PSD cone first; anything more negative, or a singular system, is
    rejected.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    n = mu.size
    if Sigma.shape != (n, n):
        raise InputError(f"Sigma is {Sigma.shape}, mu has {n} entries")
    if not risk_aversion > 0:
        raise InputError("risk aversion must be positive")
    Sigma = 0.5 * (Sigma + Sigma.T)
    min_eig = float(np.linalg.eigvalsh(Sigma)[0])
    if min_eig < -RIDGE_TOL:
        raise SingularCovarianceError(f"covariance is not PSD (eigenvalue {min_eig:.3e})")
    if min_eig < 0:
        Sigma = Sigma + (-min_eig) * np.eye(n)
    kkt = np.zeros((n + 1, n + 1))
    kkt[:n, :n] = risk_aversion * Sigma
    kkt[:n, n] = 1.0
    kkt[n, :n] = 1.0
    rhs = np.append(mu, 1.0)
    scale = max(float(np.max(np.abs(kkt[:n, :n]))), 1.0)
    if np.linalg.cond(kkt) > 1e12 * scale:
        raise SingularCovarianceError(
            "covariance is numerically singular; add a ridge (Sigma + r I) before allocating"
        )
    sol = np.linalg.solve(kkt, rhs)
    return sol[:n]


def kkt_residual(w, mu, Sigma, risk_aversion: float) -> float:
    """Max-norm residual of the Markowitz KKT system at ``w``."""
    w = np.asarray(w, dtype=float)
    mu = np.asarray(mu, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    grad = mu - risk_aversion * Sigma @ w
    # stationarity holds with eta equal to the mean of the gradient
    eta = grad.mean()
    return float(max(np.max(np.abs(grad - eta)), abs(w.sum() - 1.0)))


# ------------------------------------------------------------ stress test


@dataclass(frozen=True)
class StressPoint:
    temperature: float
    stressed_variance: float
    reopt_weights: np.ndarray
    opportunity_cost: float
    min_eigenvalue: float
    utility_gain: float = 0.0

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "stressed_variance": self.stressed_variance,
            "reopt_weights": self.reopt_weights.tolist(),
            "opportunity_cost": self.opportunity_cost,
            "min_eigenvalue": self.min_eigenvalue,
            "utility_gain": self.utility_gain,
        }


@dataclass(frozen=True)
class StressReport:
    """Stress test of a fixed allocation along a temperature trajectory.

    ``weights`` is the allocation chosen on the unstressed covariance and
    ``baseline_variance`` its variance there.
    """

    weights: np.ndarray
    baseline_variance: float
    points: list[StressPoint] = field(default_factory=list)
    covariances: list[np.ndarray] = field(default_factory=list, repr=False)

    def rows(self) -> tuple[list[str], list[list[float]]]:
        n = self.weights.size
        header = ["T", "stressed_variance", "opportunity_cost", "utility_gain", "min_eigenvalue"]
        header += [f"w_T_{k + 1}" for k in range(n)]
        rows = [
            [p.temperature, p.stressed_variance, p.opportunity_cost, p.utility_gain,
             p.min_eigenvalue,
             *p.reopt_weights.tolist()]
            for p in self.points
        ]
        return header, rows

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "baseline_variance": self.baseline_variance,
            "points": [p.to_dict() for p in self.points],
        }


def assemble_covariance(P: DiscreteMarginal, Q: DiscreteMarginal, sigma) -> np.ndarray:
    """Full covariance ``[[S_XX, sigma], [sigma', S_YY]]`` of (X, Y)."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    sxx = P.second_moment() - np.outer(P.mean(), P.mean())
    syy = Q.second_moment() - np.outer(Q.mean(), Q.mean())
    top = np.hstack([sxx, sigma])
    bottom = np.hstack([sigma.T, syy])
    return np.vstack([top, bottom])


def stress_portfolio(
    P: DiscreteMarginal,
    Q: DiscreteMarginal,
    spec: PortfolioSpec,
    m_hat,
    temps=None,
    *,
    sigma_hat=None,
    marginal_tol: float = transport.MARGINAL_TOL,
) -> StressReport:
    """Variance and reallocation of a fixed portfolio as dependence is stressed.

    The allocation ``w`` is chosen once on the unstressed covariance, whose
    cross block is ``sigma_hat`` (default: the fitted temperature-1
    cross-covariance, which reproduces the target within the fit error).
    At each temperature the cross block is replaced by the trajectory's
    ``sigma_T``; the report gives ``w' Sigma_T w``, the reoptimized
    ``w_T`` and the opportunity cost ``mu . w_T - mu . w``.

    The opportunity cost compares expected returns only and can take
    either sign. ``utility_gain`` is the mean-variance objective of
    ``w_T`` minus that of ``w``, both under ``Sigma_T``; it is never
    negative because ``w_T`` maximizes that objective.
    """
    if not (P.centered and Q.centered):
        raise InputError("stress testing needs centered marginals")
    if spec.mu.size != P.dim + Q.dim:
        raise InputError(f"mu has {spec.mu.size} entries, marginals have {P.dim + Q.dim} assets")
    m_hat = np.atleast_2d(np.asarray(m_hat, dtype=float))
    temps = affinity.default_temperatures() if temps is None else np.asarray(temps, dtype=float)
    points = affinity.trajectory(P, Q, m_hat, temps, marginal_tol=marginal_tol)
    if sigma_hat is None:
        c1 = transport.ipfp_solve(P, Q, m_hat, 1.0, marginal_tol=marginal_tol)
        sigma_hat = transport.cross_cov(c1, P, Q)
    lam, scale = spec.risk_aversion, spec.cov_scale
    base = scale * assemble_covariance(P, Q, sigma_hat)
    w = markowitz(spec.mu, base, lam)
    out, covs = [], []
    for p in points:
        cov = scale * assemble_covariance(P, Q, p.sigma)
        min_eig = float(np.linalg.eigvalsh(cov)[0])
        w_t = markowitz(spec.mu, cov, lam)
        out.append(
            StressPoint(
                temperature=p.temperature,
                stressed_variance=float(w @ cov @ w),
                reopt_weights=w_t,
                opportunity_cost=float(spec.mu @ w_t - spec.mu @ w),
                min_eigenvalue=min_eig,
                utility_gain=_utility(spec.mu, cov, lam, w_t) - _utility(spec.mu, cov, lam, w),
            )
        )
        covs.append(cov)
    return StressReport(w, float(w @ base @ w), out, covs)


def _utility(mu, cov, lam, w) -> float:
    return float(mu @ w - 0.5 * lam * w @ cov @ w)


def flat_rho_bound(n: int, m: int) -> float:
    """Largest rho keeping ``[[I_n, rho J], [rho J', I_m]]`` PSD.

    The nonzero eigenvalues of the off-diagonal part are ``+-rho sqrt(nm)``,
    so the smallest eigenvalue of the whole matrix is ``1 - rho sqrt(nm)``.
    """
    if int(n) < 1 or int(m) < 1:
        raise InputError("n and m must be positive")
    return 1.0 / math.sqrt(n * m)


def flat_rho_matrix(n: int, m: int, rho: float, corr_x=None, corr_y=None) -> np.ndarray:
    """Correlation matrix with a constant cross block ``rho``."""
    cx = np.eye(n) if corr_x is None else np.asarray(corr_x, dtype=float)
    cy = np.eye(m) if corr_y is None else np.asarray(corr_y, dtype=float)
    J = np.full((n, m), float(rho))
    return np.block([[cx, J], [J.T, cy]])


def flat_rho_scan(rhos, n: int, m: int, corr_x=None, corr_y=None) -> np.ndarray:
    """Smallest eigenvalue of the flat-rho matrix for each rho."""
    return np.array(
        [float(np.linalg.eigvalsh(flat_rho_matrix(n, m, r, corr_x, corr_y))[0]) for r in rhos]
    )


# ---------------------------------------------------------------- rainbow


@dataclass(frozen=True)
class RainbowSpec:
    """Option on the worse of two best-of baskets.

    Payoff ``min((max_i X_i - K)+, (max_j Y_j - K)+)``; ``corr_guess`` is
    the n x m cross-correlation guess that sets the dependence to stress.
    """

    x: OptionMarginalSpec
    y: OptionMarginalSpec
    strike: float
    corr_guess: np.ndarray

    def __post_init__(self):
        if not self.strike > 0:
            raise InputError("strike must be positive")
        A = np.atleast_2d(np.asarray(self.corr_guess, dtype=float))
        if A.shape != (self.x.n, self.y.n):
            raise InputError(f"corr_guess is {A.shape}, expected {(self.x.n, self.y.n)}")
        if np.any(np.abs(A) > 1):
            raise InputError("cross-correlations must lie in [-1, 1]")
        object.__setattr__(self, "corr_guess", A)

    @classmethod
    def from_dict(cls, d: dict) -> "RainbowSpec":
        common = {k: d[k] for k in ("maturity", "atom_count") if k in d}
        seed = int(d.get("seed", 0))

        def leg(key, default_seed):
            sub = dict(d[key])
            sub.setdefault("corr", np.eye(len(sub["vols"])).tolist())
            sub.setdefault("seed", default_seed)
            for k, v in common.items():
                sub.setdefault(k, v)
            return OptionMarginalSpec.from_dict(sub)

        return cls(leg("x", seed), leg("y", seed + 1), float(d["strike"]), d["corr_guess"])

    @classmethod
    def from_json(cls, path) -> "RainbowSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "x": self.x.to_dict(),
            "y": self.y.to_dict(),
            "strike": self.strike,
            "corr_guess": self.corr_guess.tolist(),
        }


@dataclass(frozen=True)
class RainbowPrices:
    """Price curve along the trajectory plus the two reference prices."""

    temperatures: np.ndarray
    prices: np.ndarray
    independence_price: float
    extreme_price: float
    fit: affinity.FitResult = field(repr=False)

    def rows(self) -> tuple[list[str], list[list[float]]]:
        return ["T", "value"], [[float(t), float(p)] for t, p in zip(self.temperatures, self.prices)]

    def to_dict(self) -> dict:
        return {
            "temperatures": self.temperatures.tolist(),
            "prices": self.prices.tolist(),
            "independence_price": self.independence_price,
            "extreme_price": self.extreme_price,
            "m_hat": self.fit.m_hat.tolist(),
            "fit_error": self.fit.fit_error,
        }


def rainbow_payoff(x_atoms: np.ndarray, y_atoms: np.ndarray, strike: float) -> np.ndarray:
    """Payoff table over atom pairs."""
    bx = np.maximum(np.max(x_atoms, axis=1) - strike, 0.0)
    by = np.maximum(np.max(y_atoms, axis=1) - strike, 0.0)
    return np.minimum(bx[:, None], by[None, :])


def rainbow_target(Px: DiscreteMarginal, Py: DiscreteMarginal, corr_guess) -> np.ndarray:
    """Cross-covariance implied by a cross-correlation guess."""
    return np.asarray(corr_guess, dtype=float) * np.outer(Px.std(), Py.std())


def price_rainbow(
    spec: RainbowSpec,
    temps=None,
    *,
    marginal_tol: float = transport.MARGINAL_TOL,
    fit_opts: dict | None = None,
) -> RainbowPrices:
    """Rainbow option prices along the trajectory of the fitted guess.

    Both terminal laws are discretized, centered copies feed the coupling
    machinery and the payoff is evaluated on the original atoms as the
    finite sum ``sum pi_T(x, y) payoff(x, y)``. No discounting.

    Raises
    ------
    InfeasibleGuessError
        When no temperature-1 coupling reproduces the guess: the implied
        target is outside (or on the boundary of) the covariance set, or
        the fit does not converge.
    """
    temps = affinity.default_temperatures() if temps is None else np.asarray(temps, dtype=float)
    Px, Py = synthesize_lognormal(spec.x), synthesize_lognormal(spec.y)
    Cx, Cy = center(Px), center(Py)
    target = rainbow_target(Px, Py, spec.corr_guess)
    membership = covset.contains(Cx, Cy, target, tol=0.0)
    if membership.verdict != "inside":
        raise InfeasibleGuessError(
            f"the cross-correlation guess is {membership.verdict} the covariance set of the "
            f"discretized marginals (slack {membership.min_slack:.3e} along direction "
            f"{np.round(membership.direction, 6).tolist()})"
        )
    fit = affinity.fit_affinity(Cx, Cy, target, **(fit_opts or {}))
    if not fit.converged:
        raise InfeasibleGuessError(
            f"no coupling reproduces the cross-correlation guess "
            f"(relative fit error {fit.fit_error:.3e} after {fit.iterations} iterations)"
        )
    payoff = rainbow_payoff(Px.atoms, Py.atoms, spec.strike)
    points = affinity.trajectory(Cx, Cy, fit.m_hat, temps, marginal_tol=marginal_tol)
    prices = np.array([float(np.sum(p.coupling.probs * payoff)) for p in points])
    indep = float(np.sum(transport.product_coupling(Cx, Cy).probs * payoff))
    _, c0 = transport.ot_exact(Cx, Cy, fit.m_hat)
    extreme = float(np.sum(c0.probs * payoff))
    return RainbowPrices(np.array([p.temperature for p in points]), prices, indep, extreme, fit)


# --------------------------------------------------------------- saliency


@dataclass(frozen=True)
class SaliencyResult:
    """SVD ``m_hat = U diag(S) V'`` and the derived index weights.

    Row k of ``x_weights`` (``sqrt(S) U'``) and of ``y_weights``
    (``sqrt(S) V'``) define the k-th pair of maximally correlated indices.
    """

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    x_weights: np.ndarray
    y_weights: np.ndarray

    def reconstruct(self) -> np.ndarray:
        k = self.S.size
        return (self.U[:, :k] * self.S) @ self.V[:, :k].T

    def to_dict(self) -> dict:
        return {
            "U": self.U.tolist(),
            "S": self.S.tolist(),
            "V": self.V.tolist(),
            "x_weights": self.x_weights.tolist(),
            "y_weights": self.y_weights.tolist(),
        }


def saliency(m_hat) -> SaliencyResult:
    """Singular value decomposition of the affinity matrix.

    Full (square) ``U`` and ``V``; singular values descending. Signs are
    fixed so the first nonzero entry of each column of ``U`` is positive,
    with the matching column of ``V`` flipped alongside.
    """
    m_hat = np.atleast_2d(np.asarray(m_hat, dtype=float))
    if not np.any(m_hat):
        raise InputError("saliency needs a nonzero affinity matrix")
    U, S, Vt = np.linalg.svd(m_hat, full_matrices=True)
    V = Vt.T
    k = S.size
    for c in range(U.shape[1]):
        nz = np.flatnonzero(np.abs(U[:, c]) > 1e-14)
        if nz.size and U[nz[0], c] < 0:
            U[:, c] = -U[:, c]
            if c < V.shape[1]:
                V[:, c] = -V[:, c]
    root = np.sqrt(S)
    return SaliencyResult(U, S, V, root[:, None] * U[:, :k].T, root[:, None] * V[:, :k].T)
