"""Euclidean projection onto capped simplices {x : 0 <= x <= u, sum(x) = s}.

The projection is clip(v - tau, 0, u) for the unique tau with
sum(clip(v - tau, 0, u)) = s. That sum is piecewise linear and nonincreasing
in tau with breakpoints at v_i and v_i - u_i, so tau is found exactly by
locating the bracketing breakpoints and interpolating. Every row of the
input is projected independently.
"""
import numpy as np


def project_capped_simplex(V, total=1.0, upper=np.inf):
    V = np.asarray(V, dtype=float)
    squeeze = V.ndim == 1
    V = np.atleast_2d(V)
    m, n = V.shape
    s = np.broadcast_to(np.asarray(total, dtype=float), (m,)).astype(float)
    U = np.broadcast_to(np.asarray(upper, dtype=float), (m,)).astype(float)
    if np.any(s < 0) or np.any(U <= 0):
        raise ValueError("need total >= 0 and upper > 0")
    if np.any(n * U < s * (1 - 1e-12)):
        raise ValueError("capped simplex is empty: n * upper < total")
    U = np.minimum(U, s)  # caps above the total can never bind

    cand = np.sort(np.concatenate([V, V - U[:, None]], axis=1), axis=1)   # (m, 2n)
    g = np.minimum(np.maximum(V[:, None, :] - cand[:, :, None], 0.0), U[:, None, None]).sum(axis=2)
    # g is nonincreasing along the sorted candidates; first index with g <= s
    t = np.argmax(g <= s[:, None], axis=1)
    rows = np.arange(m)
    t0 = np.maximum(t - 1, 0)
    c0, c1 = cand[rows, t0], cand[rows, t]
    g0, g1 = g[rows, t0], g[rows, t]
    span = g0 - g1
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = np.where((t > 0) & (span > 0), c0 + (g0 - s) * (c1 - c0) / span, c1)
    X = np.minimum(np.maximum(V - tau[:, None], 0.0), U[:, None])
    return X[0] if squeeze else X


def project_simplex(v, total=1.0):
    """Projection onto the plain simplex {x >= 0, sum(x) = total}."""
    return project_capped_simplex(v, total, np.inf)
