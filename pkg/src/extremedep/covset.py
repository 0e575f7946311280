"""Geometry of the covariance set F(P, Q).

F(P, Q) is the convex compact set of cross-covariance matrices attained by
couplings of P and Q. Its support function

    h(M) = max_{pi} sigma_pi . M

is an exact optimal transport value, so the boundary is reachable one
direction at a time. Two-dimensional pictures are projections (shadows)
of F onto a pair of matrix entries, not slices.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import transport
from .errors import InputError
from .marginals import DiscreteMarginal

Pair = tuple[tuple[int, int], tuple[int, int]]


def support(P: DiscreteMarginal, Q: DiscreteMarginal, M) -> tuple[float, np.ndarray]:
    """Support function value ``h(M)`` and a supporting cross-covariance."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.any(M):
        raise InputError("support direction must be nonzero")
    value, c = transport.ot_exact(P, Q, M)
    return value, transport.cross_cov(c, P, Q)


def _direction(shape, pair: Pair, theta: float) -> np.ndarray:
    (i, j), (k, l) = pair
    M = np.zeros(shape)
    M[i, j] += np.cos(theta)
    M[k, l] += np.sin(theta)
    return M


def project(sigmas, pair: Pair) -> np.ndarray:
    """Coordinates of one or many cross-covariances in the section plane."""
    s = np.asarray(sigmas, dtype=float)
    (i, j), (k, l) = pair
    return np.stack([s[..., i, j], s[..., k, l]], axis=-1)


@dataclass(frozen=True)
class CovSection:
    """Boundary of the 2-D projection of F(P, Q) onto two matrix entries.

    ``boundary[n]`` is the projected support point for the unit direction
    ``directions[n] = (cos angles[n], sin angles[n])``, and ``values[n]``
    the support value in that direction.
    """

    coord_pair: Pair
    angles: np.ndarray
    directions: np.ndarray
    boundary: np.ndarray
    values: np.ndarray
    sigmas: np.ndarray = field(repr=False)

    def convexity_margin(self) -> float:
        """Smallest cross product of consecutive edges (>= 0 when convex)."""
        pts = self.boundary
        e = np.roll(pts, -1, axis=0) - pts
        e_next = np.roll(e, -1, axis=0)
        cross = e[:, 0] * e_next[:, 1] - e[:, 1] * e_next[:, 0]
        return float(cross.min())

    def is_convex(self, tol: float = 1e-9) -> bool:
        return self.convexity_margin() >= -tol

    def slack(self, points) -> np.ndarray:
        """Per point, ``min_n (values[n] - directions[n] . p)``.

        Nonnegative slack means the point satisfies every supporting
        half-plane of the section.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.min(self.values[None, :] - p @ self.directions.T, axis=1)

    def contains(self, points, tol: float = 1e-8) -> np.ndarray:
        return self.slack(points) >= -tol

    def polygon_contains(self, points, tol: float = 1e-8) -> np.ndarray:
        """Point-in-polygon test against the boundary polygon itself.

        The polygon through the support points is inscribed in the
        projection, so this is the stricter of the two containment tests.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        verts = self.boundary
        e = np.roll(verts, -1, axis=0) - verts
        keep = np.hypot(e[:, 0], e[:, 1]) > 1e-14
        v, e = verts[keep], e[keep]
        if len(v) < 3:
            return np.zeros(len(p), dtype=bool)
        # counter-clockwise polygon: inside means left of every edge
        rel = p[:, None, :] - v[None, :, :]
        cross = e[None, :, 0] * rel[..., 1] - e[None, :, 1] * rel[..., 0]
        lengths = np.hypot(e[:, 0], e[:, 1])
        return np.all(cross / lengths[None, :] >= -tol, axis=1)

    def rows(self) -> tuple[list[str], list[list[float]]]:
        header = ["angle", "boundary_x", "boundary_y", "support_value"]
        rows = [
            [float(a), float(b[0]), float(b[1]), float(v)]
            for a, b, v in zip(self.angles, self.boundary, self.values)
        ]
        return header, rows

    def to_dict(self) -> dict:
        return {
            "coord_pair": [list(self.coord_pair[0]), list(self.coord_pair[1])],
            "kind": "projection",
            "angles": self.angles.tolist(),
            "boundary": self.boundary.tolist(),
            "values": self.values.tolist(),
        }


def _check_pair(P, Q, pair: Pair) -> Pair:
    pair = tuple(tuple(int(x) for x in ij) for ij in pair)
    for i, j in pair:
        if not (0 <= i < P.dim and 0 <= j < Q.dim):
            raise InputError(f"entry ({i}, {j}) is out of range for a {P.dim}x{Q.dim} matrix")
    return pair


def section(
    P: DiscreteMarginal,
    Q: DiscreteMarginal,
    coord_pair: Pair = ((0, 0), (1, 1)),
    n_dirs: int = 360,
    *,
    workers: int | None = None,
) -> CovSection:
    """Trace the projection of F(P, Q) onto two entries.

    For ``n_dirs`` angles equally spaced on [0, 2 pi) the direction
    matrix has ``cos(theta)`` at the first entry and ``sin(theta)`` at the
    second; each exact transport solve gives one boundary point.
    """
    if n_dirs < 8:
        raise InputError("n_dirs must be at least 8")
    pair = _check_pair(P, Q, coord_pair)
    angles = 2.0 * np.pi * np.arange(n_dirs) / n_dirs
    shape = (P.dim, Q.dim)

    def one(theta):
        M = _direction(shape, pair, theta)
        value, c = transport.ot_exact(P, Q, M)
        return transport.cross_cov(c, P, Q)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sigmas = list(pool.map(one, angles))
    else:
        sigmas = [one(t) for t in angles]
    sigmas = np.array(sigmas)
    boundary = project(sigmas, pair)
    directions = np.column_stack([np.cos(angles), np.sin(angles)])
    values = np.sum(boundary * directions, axis=1)
    return CovSection(pair, angles, directions, boundary, values, sigmas)


def scatter(
    P: DiscreteMarginal,
    Q: DiscreteMarginal,
    n_draws: int = 1000,
    T_low: float = 0.05,
    seed: int = 0,
    *,
    include_zero: bool = False,
    marginal_tol: float = transport.MARGINAL_TOL,
    workers: int | None = None,
) -> np.ndarray:
    """Cross-covariances of entropic couplings for random affinity matrices.

    Entries of each ``M`` are uniform on [-1, 1]; every solve is at
    temperature ``T_low``. Returns an array of shape ``(n_draws, I, J)``.
    With ``include_zero`` the first draw is forced to ``M = 0``.
    """
    if not T_low > 0:
        raise InputError("T_low must be positive")
    rng = np.random.default_rng(seed)
    Ms = rng.uniform(-1.0, 1.0, size=(n_draws, P.dim, Q.dim))
    if include_zero and n_draws > 0:
        Ms[0] = 0.0

    def one(M):
        c = transport.ipfp_solve(P, Q, M, T_low, marginal_tol=marginal_tol)
        return transport.cross_cov(c, P, Q)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(one, Ms))
    else:
        out = [one(M) for M in Ms]
    return np.array(out).reshape(n_draws, P.dim, Q.dim)


@dataclass(frozen=True)
class Membership:
    """Verdict of :func:`contains`.

    ``min_slack`` is the smallest ``h(D) - sigma . D`` found over unit
    (Frobenius) directions ``D``; ``direction`` attains it and is a
    separating certificate when the verdict is ``"outside"``.
    ``certified`` is True when the verdict is backed by a proof: a
    violated direction for ``"outside"``, a positive lower bound on every
    direction for ``"inside"``, and for ``"boundary"`` a lower bound of at
    least ``-tol``.
    """

    verdict: str
    min_slack: float
    direction: np.ndarray
    directions_probed: int
    lower_bound: float = -np.inf
    certified: bool = False

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "min_slack": self.min_slack,
            "lower_bound": self.lower_bound,
            "certified": self.certified,
            "direction": self.direction.tolist(),
            "directions_probed": self.directions_probed,
        }


class _Cuts:
    """Support-oracle calls with every answer kept as a linear minorant.

    For any direction D, ``h(D) - sigma . D >= (s_k - sigma) . D`` where
    ``s_k`` is any support point found so far.
    """

    def __init__(self, P, Q, sigma):
        self.P, self.Q = P, Q
        self.sigma = sigma.ravel()
        self.rows: list[np.ndarray] = []
        self.count = 0
        self.best = (np.inf, None)

    def probe(self, D) -> float:
        D = np.asarray(D, dtype=float).ravel()
        norm = float(np.linalg.norm(D))
        value, c = transport.ot_exact(self.P, self.Q, D.reshape(self.P.dim, self.Q.dim))
        s_star = transport.cross_cov(c, self.P, self.Q).ravel()
        self.count += 1
        self.rows.append(s_star - self.sigma)
        slack = (value - float(self.sigma @ D)) / norm
        if slack < self.best[0]:
            self.best = (slack, D / norm)
        return slack


def _face_master(rows, d, idx, sign):
    # min t  s.t.  c_k . D <= t,  D_idx = sign,  |D_j| <= 1
    A = np.hstack([np.array(rows), -np.ones((len(rows), 1))])
    bounds = [(-1.0, 1.0)] * d + [(None, None)]
    bounds[idx] = (sign, sign)
    cost = np.zeros(d + 1)
    cost[-1] = 1.0
    res = linprog(cost, A_ub=A, b_ub=np.zeros(len(rows)), bounds=bounds, method="highs")
    if res.status != 0:  # pragma: no cover - bounded and feasible by construction
        raise RuntimeError(f"cutting-plane master failed: {res.message}")
    return res.x[:d], float(res.x[-1])


def contains(
    P: DiscreteMarginal,
    Q: DiscreteMarginal,
    sigma,
    tol: float = 1e-8,
    *,
    n_random: int = 16,
    max_probes: int = 400,
    extra_directions=None,
    seed: int = 0,
) -> Membership:
    """Membership of ``sigma`` in F(P, Q) by support-function separation.

    ``sigma`` lies in F iff ``sigma . D <= h(D)`` for every direction D.
    Directions are searched on the faces of the unit max-norm cube: on the
    face ``D_ij = +-1`` the slack ``h(D) - sigma . D`` is convex, so a
    cutting-plane (Kelley) method drives it to its minimum while the
    linear-programming master problem gives a lower bound. The faces cover
    every direction. Probes are seeded with the coordinate directions,
    ``n_random`` Gaussian directions and any ``extra_directions``.

    Slacks are reported per unit Frobenius norm. Verdicts: ``"outside"``
    if some slack is below ``-tol``; ``"boundary"`` if the smallest slack
    found is within ``tol`` of zero; ``"inside"`` otherwise. When the probe
    budget runs out before every face is settled the verdict is returned
    with ``certified=False``.
    """
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if sigma.shape != (P.dim, Q.dim):
        raise InputError(f"sigma is {sigma.shape}, marginals need {(P.dim, Q.dim)}")
    d = sigma.size
    cuts = _Cuts(P, Q, sigma)
    rng = np.random.default_rng(seed)

    seeds = list(np.vstack([np.eye(d), -np.eye(d)]))
    seeds += list(rng.standard_normal((n_random, d)))
    if extra_directions is not None:
        seeds += [np.asarray(D, dtype=float).ravel() for D in extra_directions]
    face_start = {}
    for D in seeds:
        if not np.any(D):
            continue
        slack = cuts.probe(D)
        k = int(np.argmax(np.abs(D)))
        key = (k, 1.0 if D[k] > 0 else -1.0)
        face_start[key] = min(face_start.get(key, np.inf), slack)
        if slack < -tol:
            break

    faces = [(k, sgn) for k in range(d) for sgn in (1.0, -1.0)]
    faces.sort(key=lambda f: face_start.get(f, np.inf))
    root_d = np.sqrt(d)
    lower = np.inf
    settled = 0
    for k, sgn in faces:
        if cuts.best[0] < -tol:
            break
        face_lower = -np.inf
        while cuts.count < max_probes:
            D, t = _face_master(cuts.rows, d, k, sgn)
            # per unit Frobenius norm; 1 <= ||D|| <= sqrt(d) on the face
            face_lower = t / root_d if t >= 0 else t
            # a face is settled once it cannot beat what is already known
            target = tol if cuts.best[0] > tol else -tol
            if face_lower > target:
                break
            slack = cuts.probe(D)
            norm = float(np.linalg.norm(D))
            if slack * norm - t <= 1e-12 * (1.0 + abs(t)):
                # master is exact at its minimizer: the face minimum is t
                face_lower = min(face_lower, slack)
                break
            if slack < -tol:
                break
        else:
            lower = min(lower, face_lower)
            break
        lower = min(lower, face_lower)
        settled += 1

    slack, D = cuts.best
    complete = settled == len(faces)
    if slack < -tol:
        verdict, certified = "outside", True
    elif slack <= tol:
        verdict, certified = "boundary", complete and lower >= -tol
    else:
        verdict, certified = "inside", complete and lower > tol
    return Membership(
        verdict,
        float(slack),
        D.reshape(sigma.shape),
        cuts.count,
        float(lower) if np.isfinite(lower) else -np.inf,
        bool(certified),
    )
