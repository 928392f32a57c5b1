"""Minimum-cost perfect matching on a square cost matrix (Kuhn-Munkres).

Shortest-augmenting-path form with row/column potentials, O(n^3).
+inf entries are replaced by a large sentinel; a matching that has to use
one of them means no finite perfect matching exists.
"""
import math

import numpy as np

from .errors import NoPerfectMatching

SENTINEL = 1e18


def _solve(cost):
    """Core O(n^3) solver on a list-of-lists matrix; returns row -> column."""
    n = len(cost)
    INF = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)       # p[j]: row matched to column j (1-based, 0 = free)
    way = [0] * (n + 1)
    cols = range(1, n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = cost[i0 - 1]
            ui = u[i0]
            delta = INF
            j1 = 0
            for j in cols:
                if not used[j]:
                    cur = row[j - 1] - ui - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assign = [0] * n
    for j in cols:
        assign[p[j] - 1] = j - 1
    return assign


def _prepare(costs):
    C = np.array(costs, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] == 0:
        raise ValueError("cost matrix must be square and non-empty")
    if np.any(np.isnan(C)) or np.any(C == -np.inf):
        raise ValueError("cost entries must be finite or +inf")
    return np.where(np.isinf(C), SENTINEL, C)


def _total(C, perm):
    # correctly rounded, so the reported cost does not depend on summation order
    return math.fsum(C[i, j] for i, j in enumerate(perm))


def min_cost_assignment(costs):
    """(permutation, total) for one minimum-cost matching, no tie-breaking."""
    C = _prepare(costs)
    perm = _solve(C.tolist())
    if any(C[i, j] >= SENTINEL for i, j in enumerate(perm)):
        raise NoPerfectMatching("every perfect matching uses an infinite-cost edge")
    return perm, _total(C, perm)


def hungarian_assign(costs, tie_tol=1e-12):
    """Minimum-cost permutation beta (row i -> column beta[i]).

    Among matchings whose cost is within ``tie_tol`` (relative) of the
    optimum, the lexicographically smallest permutation is returned.
    """
    C = _prepare(costs)
    perm, best = min_cost_assignment(C)
    n = C.shape[0]
    slack = tie_tol * max(1.0, abs(best))
    ident_cost = _total(C, range(n))
    if ident_cost <= best + slack:
        return list(range(n)), ident_cost

    # greedy lexicographic reconstruction: fix rows in order, smallest column first
    chosen = []
    free = list(range(n))
    fixed = 0.0
    for i in range(n):
        for c in list(free):
            rest_cols = [x for x in free if x != c]
            rest_cost = 0.0
            if rest_cols:
                sub = C[np.ix_(range(i + 1, n), rest_cols)]
                sp = _solve(sub.tolist())
                rest_cost = float(sum(sub[a, b] for a, b in enumerate(sp)))
            if fixed + C[i, c] + rest_cost <= best + slack:
                chosen.append(c)
                free.remove(c)
                fixed += C[i, c]
                break
        else:  # numerical corner: keep the solver's own answer
            return perm, best
    return chosen, _total(C, chosen)
