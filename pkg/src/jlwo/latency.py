"""Analytical latency bound for k-of-n chunk retrieval over weighted queues.

Each queue (i, j, d) is an M/G/1 queue whose service time is X * B / B_eff.
A chunk's combined delay D = connection delay + queueing delay has closed-form
mean and variance; the per-file latency bound mixes those moments through
an auxiliary scalar z:

    T[i, r] = z + sum_j pi[i, j, r] / 2 * (H + sqrt(H^2 + G)),
    H = E[D_ij] - z,  G = Var[D_ij].
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import ServiceDistribution
from .errors import UnstableQueue
from .model import (CAP_RTOL, ClusterTopology, DesignPoint, IntraResidualMode, WorkloadSpec,
                    class_onehot, effective_bandwidths,
                    residual_tor_bandwidth)

Z_TOL = 1e-9
BRACKET_SD = 10.0


@dataclass(frozen=True)
class DelayMoments:
    mean: float
    variance: float


@dataclass(frozen=True)
class BoundTerms:
    H: float
    G: float
    f_value: float


@dataclass(frozen=True)
class LatencyReport:
    per_file_bounds: np.ndarray     # (N, R)
    per_class_means: np.ndarray     # (D,), normalised by the all-class rate
    objective: float
    per_class_conditional: np.ndarray  # (D,), normalised by the class rate


def _pk_terms(lam, x, mu, G2, G3, B):
    """Mean and variance of the queueing delay; +inf when unstable, 0 when idle."""
    lam = np.asarray(lam, dtype=float)
    x = np.asarray(x, dtype=float)
    s = x - lam * mu * B
    ok = (lam > 0) & (s > 0) & (x > 0)
    xs = np.where(ok, x, 1.0)
    ss = np.where(ok, s, 1.0)
    M = lam * G2 * B ** 2 / (2 * xs * ss)
    V = (lam * G3 * B ** 3 / (3 * xs ** 2 * ss)
         + lam * G2 ** 2 * B ** 4 / (4 * xs ** 2 * ss ** 2))
    idle = lam <= 0
    M = np.where(ok, M, np.where(idle, 0.0, np.inf))
    V = np.where(ok, V, np.where(idle, 0.0, np.inf))
    return M, V


def bound_value(H, G):
    """H + sqrt(H^2 + G), evaluated without cancellation for H < 0."""
    H = np.asarray(H, dtype=float)
    G = np.asarray(G, dtype=float)
    S = np.sqrt(H * H + G)
    neg = H < 0
    with np.errstate(divide="ignore", invalid="ignore"):
        alt = G / (S - H)
    return np.where(neg, alt, H + S)


def _slope_H(H, G):
    """d f / d H = 1 + H / S, with the S = 0 corner mapped to 1."""
    S = np.sqrt(H * H + G)
    with np.errstate(divide="ignore", invalid="ignore"):
        neg = G / ((S - H) * S)
        pos = 1 + H / S
    out = np.where(H < 0, neg, pos)
    return np.where(S > 0, out, 1.0)


def _masked(weight, partial):
    """weight * partial with 0 * inf treated as 0."""
    return np.where(weight > 0, weight * partial, 0.0)


def combined_delay_moments(eta: float, xi2: float, lam: float, beff: float,
                           dist: ServiceDistribution, B: float) -> DelayMoments:
    if lam > 0 and beff <= lam * dist.mean * B:
        raise UnstableQueue(f"B_eff={beff:.6g} <= Lambda*mu*B={lam * dist.mean * B:.6g}")
    M, V = _pk_terms(lam, beff, dist.mean, dist.second_moment, dist.third_moment, B)
    return DelayMoments(eta + float(M), xi2 + float(V))


def bound_f(z: float, eta: float, xi2: float, lam: float, beff: float,
            dist: ServiceDistribution, B: float) -> BoundTerms:
    m = combined_delay_moments(eta, xi2, lam, beff, dist, B)
    H = m.mean - z
    return BoundTerms(H, m.variance, float(bound_value(H, m.variance)))


class LatencyModel:
    """Vectorised objective, bounds and gradients for one (topology, workload) pair.

    Design variables are passed as plain arrays so the optimizer can probe
    candidate points without building validated value objects.
    """

    def __init__(self, topology: ClusterTopology, workload: WorkloadSpec,
                 rho_max: float = 0.999, mode=None):
        self.topology = topology
        self.workload = workload
        self.rho_max = rho_max
        self.mode = IntraResidualMode(mode or topology.intra_residual)
        self.N = topology.num_racks
        self.R = workload.num_files
        self.D = workload.num_classes
        self.rates = np.asarray(workload.rates)
        self.cls = np.asarray(workload.file_class)
        self.onehot = class_onehot(self.cls, self.D)
        self.lam_all = workload.total_rate
        cw = np.asarray(workload.classes.weights)
        with np.errstate(divide="ignore", invalid="ignore"):
            self.share = self.rates / self.lam_all if self.lam_all > 0 else np.zeros_like(self.rates)
        self.coef = cw[self.cls][None, :] * self.share
        self.eta = np.asarray(topology.connection_delay_mean)
        self.xi2 = np.asarray(topology.connection_delay_var)
        self.B = topology.aggregate_bandwidth
        self.C = topology.port_capacity
        d = workload.service
        self.mu, self.G2, self.G3 = d.mean, d.second_moment, d.third_moment
        self.sign = 1.0 if self.mode is IntraResidualMode.AS_WRITTEN else -1.0
        self._diag = np.arange(self.N)

    # -- building blocks -------------------------------------------------
    def bandwidths(self, W, w):
        b_res = residual_tor_bandwidth(self.topology, W, self.mode)
        return effective_bandwidths(self.topology, W, w, self.mode), b_res

    def arrivals(self, pi):
        N = self.N
        flow = (self.rates[:, None, :] * pi).reshape(N * N, self.R)
        return (flow @ self.onehot).reshape(N, N, self.D)

    def moments(self, lam, x):
        M, V = _pk_terms(lam, x, self.mu, self.G2, self.G3, self.B)
        return self.eta[:, :, None] + M, self.xi2[:, :, None] + V

    def feasible(self, lam, x, b_res) -> bool:
        if np.any(b_res <= 0):
            return False
        if np.any(x > self.C * (1 + CAP_RTOL)):
            return False
        used = lam > 0
        if not np.any(used):
            return True
        xu = x[used]
        if np.any(xu <= 0):
            return False
        return bool(np.all(lam[used] * self.mu * self.B < self.rho_max * xu))

    def _gather(self, A):
        """(N, N, D) -> (N, N, R) using each file's class."""
        return A[:, :, self.cls]

    # -- objective -------------------------------------------------------
    def objective(self, pi, W, w, z, lam=None) -> float:
        """Weighted latency objective; +inf outside the admissible region.

        ``lam`` may carry precomputed queue arrivals for this ``pi``.
        """
        lam = self.arrivals(pi) if lam is None else lam
        x, b_res = self.bandwidths(W, w)
        if not self.feasible(lam, x, b_res):
            return math.inf
        return self._objective(pi, z, lam, x)

    def _objective(self, pi, z, lam, x):
        E, V = self.moments(lam, x)
        wt = self.coef[:, None, :] * pi
        live = wt > 0
        H = np.where(live, self._gather(E) - z[:, None, :], 0.0)
        G = np.where(live, self._gather(V), 0.0)
        f = bound_value(H, G)
        return float(np.sum(self.coef * z) + 0.5 * np.sum(np.where(live, wt * f, 0.0)))

    def file_bounds(self, pi, W, w, z):
        """T[i, r] for every pair; +inf where a used queue is unstable."""
        lam = self.arrivals(pi)
        x, _ = self.bandwidths(W, w)
        E, V = self.moments(lam, x)
        live = pi > 0
        H = np.where(live, self._gather(E) - z[:, None, :], 0.0)
        G = np.where(live, self._gather(V), 0.0)
        f = np.where(live, bound_value(H, G), 0.0)
        return z + 0.5 * np.sum(pi * f, axis=1)

    def class_means(self, T):
        """Per-class sum_i sum_{r in class} rate/lam_all * T."""
        contrib = np.where(self.rates > 0, self.share * T, 0.0)
        return contrib.sum(axis=0) @ self.onehot

    # -- gradients -------------------------------------------------------
    def gradient(self, pi, W, w, z, lam=None):
        """Analytic partials (g_pi, g_W, g_w, g_z) at a feasible point."""
        lam = self.arrivals(pi) if lam is None else lam
        x, b_res = self.bandwidths(W, w)
        E, V = self.moments(lam, x)
        Eg, Vg = self._gather(E), self._gather(V)
        wt = 0.5 * self.coef[:, None, :] * pi
        live = (wt > 0) | (self.coef[:, None, :] > 0)
        H = np.where(live, Eg - z[:, None, :], 0.0)
        G = np.where(live, Vg, 0.0)
        f = np.where(live, bound_value(H, G), 0.0)
        fh = np.where(live, _slope_H(H, G), 0.0)
        S = np.sqrt(H * H + G)
        with np.errstate(divide="ignore"):
            fg = np.where(live & (S > 0), 0.5 / np.where(S > 0, S, 1.0), 0.0)

        used = wt > 0
        g_z = self.coef * (1.0 - np.sum(np.where(used, pi * 0.5 * fh, 0.0), axis=1))

        A = np.where(used, wt * fh, 0.0) @ self.onehot
        Q = np.where(used, wt * fg, 0.0) @ self.onehot
        dM_dl, dM_dx, dV_dl, dV_dx = self._moment_partials(lam, x)
        with np.errstate(invalid="ignore"):
            psi_l = _masked(A, dM_dl) + _masked(Q, dV_dl)
            psi_x = _masked(A, dM_dx) + _masked(Q, dV_dx)

        g_pi = 0.5 * self.coef[:, None, :] * f + self.rates[:, None, :] * self._gather(psi_l)

        N, B, dg = self.N, self.B, self._diag
        g_W = B * psi_x.copy()
        P = np.sum(psi_x[dg, dg, :] * w, axis=1)           # dO/db_res per rack
        g_W += -B * P[:, None, None] + self.sign * B * P[None, :, None]
        g_W[dg, dg, :] = 0.0
        g_w = psi_x[dg, dg, :] * b_res[:, None]
        return g_pi, g_W, g_w, g_z

    def _moment_partials(self, lam, x):
        B, mu = self.B, self.mu
        a, c3, c4 = self.G2 * B ** 2, self.G3 * B ** 3, self.G2 ** 2 * B ** 4
        s = x - lam * mu * B
        ok = (s > 0) & (x > 0)
        xs, ss = np.where(ok, x, 1.0), np.where(ok, s, 1.0)
        dM_dl = a / (2 * ss ** 2)
        dM_dx = -lam * a * (xs + ss) / (2 * xs ** 2 * ss ** 2)
        dV_dl = c3 / (3 * xs * ss ** 2) + c4 * (ss + 2 * lam * mu * B) / (4 * xs ** 2 * ss ** 3)
        dV_dx = (-lam * c3 * (2 * ss + xs) / (3 * xs ** 3 * ss ** 2)
                 - lam * c4 * (ss + xs) / (2 * xs ** 3 * ss ** 3))
        bad = ~ok
        return (np.where(bad, np.inf, dM_dl), np.where(bad, -np.inf, dM_dx),
                np.where(bad, np.inf, dV_dl), np.where(bad, -np.inf, dV_dx))

    # -- z ---------------------------------------------------------------
    def optimal_z(self, pi, W, w):
        """Bisection on the (monotone) z-derivative of every T[i, r] at once."""
        lam = self.arrivals(pi)
        x, _ = self.bandwidths(W, w)
        E, V = self.moments(lam, x)
        return minimize_z_from_moments(pi, self._gather(E), self._gather(V))


def minimize_z_from_moments(pi, Eg, Vg, tol=Z_TOL):
    """Minimise z + sum_j pi_j/2 f(E_j - z, V_j) over z for each (i, r) column.

    ``pi``, ``Eg`` and ``Vg`` are (N, N, R) with the hosting rack on axis 1.
    Pairs that touch an unstable queue, or have no hosting rack, get z = 0.
    """
    live = pi > 0
    bad = np.any(live & ~(np.isfinite(Eg) & np.isfinite(Vg)), axis=1) | ~np.any(live, axis=1)
    E = np.where(live, Eg, np.nan)
    V = np.where(live, Vg, np.nan)
    with np.errstate(invalid="ignore"):
        sd = np.sqrt(np.nanmax(np.where(live, V, -np.inf), axis=1).clip(min=0))
        lo = np.nanmin(np.where(live, E, np.inf), axis=1) - BRACKET_SD * sd
        hi = np.nanmax(np.where(live, E, -np.inf), axis=1) + BRACKET_SD * sd
    lo = np.where(bad, 0.0, lo)
    hi = np.where(bad, 0.0, hi)
    E0 = np.where(live, Eg, 0.0)
    V0 = np.where(live, Vg, 0.0)

    def slope(zz):
        H = E0 - zz[:, None, :]
        return 1.0 - 0.5 * np.sum(np.where(live, pi * _slope_H(H, V0), 0.0), axis=1)

    at_lo = slope(lo) >= 0
    width = float(np.max(hi - lo)) if hi.size else 0.0
    steps = int(math.ceil(math.log2(width / tol))) + 1 if width > tol else 0
    a, b = lo.copy(), hi.copy()
    for _ in range(min(steps, 200)):
        m = 0.5 * (a + b)
        neg = slope(m) < 0
        a = np.where(neg, m, a)
        b = np.where(neg, b, m)
    return np.where(at_lo | bad, lo, b)


# ---------------------------------------------------------------------------
# public operations on validated designs

def _check_pair_stability(model: LatencyModel, design: DesignPoint, i=None, r=None):
    lam = model.arrivals(design.pi)
    x, _ = model.bandwidths(design.weights.inter, design.weights.intra)
    unstable = (lam > 0) & (x <= lam * model.mu * model.B)
    if i is not None:
        js = np.flatnonzero(design.pi[i, :, r] > 0)
        d = int(model.cls[r])
        for j in js:
            if unstable[i, j, d] or (lam[i, j, d] > 0 and x[i, j, d] <= 0):
                raise UnstableQueue(f"queue ({i},{j},{d}) is unstable", queue=(i, int(j), d))
        return
    hot = unstable & (np.einsum("ir,ijr,rd->ijd", model.rates > 0, design.pi > 0, model.onehot) > 0)
    if np.any(hot):
        q = tuple(int(v) for v in np.argwhere(hot)[0])
        raise UnstableQueue(f"queue {q} is unstable", queue=q)


def file_latency_bound(topology, workload, design: DesignPoint, i: int, r: int) -> float:
    model = LatencyModel(topology, workload)
    _check_pair_stability(model, design, i, r)
    T = model.file_bounds(design.pi, design.weights.inter, design.weights.intra, design.z)
    return float(T[i, r])


def _total_rate_or_raise(workload):
    if not workload.total_rate > 0:
        raise ValueError("workload has zero total request rate")


def class_mean_latency(topology, workload, design: DesignPoint, d: int) -> float:
    _total_rate_or_raise(workload)
    return float(latency_report(topology, workload, design).per_class_means[d])


def objective(topology, workload, design: DesignPoint) -> float:
    return latency_report(topology, workload, design).objective


def latency_report(topology, workload, design: DesignPoint) -> LatencyReport:
    _total_rate_or_raise(workload)
    model = LatencyModel(topology, workload)
    _check_pair_stability(model, design)
    T = model.file_bounds(design.pi, design.weights.inter, design.weights.intra, design.z)
    means = model.class_means(T)
    cw = np.asarray(workload.classes.weights)
    class_rates = np.array([workload.class_rate(d) for d in range(model.D)])
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(class_rates > 0, means * model.lam_all / class_rates, np.nan)
    return LatencyReport(T, means, float(np.dot(cw, means)), cond)


def minimize_z(topology, workload, design: DesignPoint, i: int, r: int) -> float:
    model = LatencyModel(topology, workload)
    _check_pair_stability(model, design, i, r)
    z = model.optimal_z(design.pi, design.weights.inter, design.weights.intra)
    return float(z[i, r])
