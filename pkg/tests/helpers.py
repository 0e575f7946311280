import itertools

import numpy as np

import extremedep as ed


def random_marginal(rng, n, d, centered=True):
    m = ed.DiscreteMarginal.uniform(rng.normal(size=(n, d)))
    return ed.center(m) if centered else m


def brute_force_ot(P, Q, M):
    """Best permutation coupling for equal-weight marginals of equal size."""
    g = P.atoms @ np.asarray(M, dtype=float) @ Q.atoms.T
    n = g.shape[0]
    best = max(sum(g[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))
    return best / n
