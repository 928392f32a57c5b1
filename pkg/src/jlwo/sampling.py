"""Drawing k distinct racks with prescribed inclusion probabilities."""
import numpy as np

from .errors import BadMarginals

SUM_TOL = 1e-7


def _check(marginals, k):
    p = np.asarray(marginals, dtype=float)
    if p.ndim != 1 or not np.all(np.isfinite(p)):
        raise BadMarginals("marginals must be a finite 1-d vector")
    if np.any(p < -SUM_TOL) or np.any(p > 1 + SUM_TOL):
        raise BadMarginals("marginals must lie in [0, 1]")
    if not isinstance(k, (int, np.integer)) or k < 0 or k > p.size:
        raise BadMarginals(f"k={k} is not a valid subset size for {p.size} racks")
    if abs(p.sum() - k) > SUM_TOL:
        raise BadMarginals(f"marginals sum to {p.sum():.9g}, expected {k}")
    return np.clip(p, 0.0, 1.0)


def systematic_draws(marginals, k, u):
    """Vectorised systematic sampling: one k-subset per entry of ``u`` in [0, 1).

    Marginals are laid end to end on [0, k); the racks whose intervals hold
    u, u+1, ..., u+k-1 are selected. Each interval is at most 1 long, so the
    k points always land in k different racks.
    """
    p = np.asarray(marginals, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if k == 0:
        return np.zeros((u.size, 0), dtype=int)
    edges = np.cumsum(p)
    edges *= k / edges[-1]               # absorb round-off so the line is exactly k long
    points = u[:, None] + np.arange(k)[None, :]
    idx = np.searchsorted(edges, points, side="right")
    last = int(np.flatnonzero(p > 0)[-1])
    return np.minimum(idx, last)


def sample_k_subset(marginals, k, rng) -> set:
    """k distinct rack indices; rack j is included with probability marginals[j]."""
    p = _check(marginals, k)
    if k == 0:
        return set()
    return {int(j) for j in systematic_draws(p, k, rng.random(1))[0]}
