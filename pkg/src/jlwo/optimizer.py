"""Alternating minimisation of the weighted latency bound.

One outer iteration solves, in order: inter-rack weights, intra-rack weights,
scheduling marginals, chunk placement (one bipartite matching per file) and
the per-(rack, file) z values. Each block keeps every other block fixed and
never increases the objective, so the outer sequence is monotone.

The continuous blocks use projected gradient descent with Armijo
backtracking. Points outside the stable region evaluate to +inf, so the
line search never leaves it.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (InfeasibleInitialization, NoFeasibleSchedule, NoFeasibleWeights,
                     UnstableQueue)
from .hungarian import hungarian_assign
from .latency import LatencyModel, _pk_terms, bound_value
from .model import (BandwidthWeights, DesignPoint, PlacementAndSchedule,
                    round_robin_placement, uniform_schedule, validate_design)
from .projection import project_capped_simplex

log = logging.getLogger(__name__)

MONOTONE_TOL = 1e-9
STAGES = ("inter", "intra", "scheduling", "placement", "z")


@dataclass(frozen=True)
class OptConfig:
    epsilon: float = 0.01
    max_iterations: int = 200
    initial_step: float = 1.0
    backtracking: float = 0.5
    armijo: float = 1e-4
    max_inner_iterations: int = 200
    inner_tolerance: float = 1e-7
    rho_max: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.max_iterations < 1 or self.max_inner_iterations < 1:
            raise ValueError("iteration limits must be >= 1")
        if not 0 < self.backtracking < 1:
            raise ValueError("backtracking factor must lie in (0, 1)")
        if not 0 < self.rho_max < 1:
            raise ValueError("rho_max must lie in (0, 1)")


@dataclass
class OptTrace:
    objective: list = field(default_factory=list)      # O[0] is the initial design
    deltas: list = field(default_factory=list)         # per iteration: stage -> decrease
    stage_values: list = field(default_factory=list)   # (iteration, stage, before, after)
    wall_times: list = field(default_factory=list)
    termination_reason: str = ""
    reverted: list = field(default_factory=list)       # (iteration, stage, before, raw after)

    @property
    def iterations(self) -> int:
        return len(self.objective) - 1

    def is_monotone(self, tol=MONOTONE_TOL) -> bool:
        outer = all(b <= a + tol for a, b in zip(self.objective, self.objective[1:]))
        inner = all(after <= before + tol for _, _, before, after in self.stage_values)
        return outer and inner


# ---------------------------------------------------------------------------
# internal state

@dataclass
class _State:
    pi: np.ndarray
    W: np.ndarray
    w: np.ndarray
    z: np.ndarray
    support: np.ndarray          # (R, n) hosting racks per file, ascending

    @classmethod
    def from_design(cls, design: DesignPoint):
        return cls(np.array(design.pi), np.array(design.weights.inter),
                   np.array(design.weights.intra), np.array(design.z),
                   np.array(design.schedule.placements, dtype=int))

    def to_design(self) -> DesignPoint:
        sched = PlacementAndSchedule(tuple(map(tuple, self.support)), self.pi)
        return DesignPoint(sched, BandwidthWeights(self.W, self.w), self.z)

    def copy(self):
        return _State(self.pi.copy(), self.W.copy(), self.w.copy(), self.z.copy(),
                      self.support.copy())


def _value(model, s: _State) -> float:
    return model.objective(s.pi, s.W, s.w, s.z)


def _descend(x0, f0, fun, grad, project, cfg: OptConfig, scale=None):
    """Projected gradient with Armijo backtracking; returns (x, f).

    ``scale`` optionally rescales the gradient blockwise (same shape as x);
    it must be constant on every constraint block so the projection stays
    the one of the scaled metric.
    """
    x, f = x0, f0
    t = cfg.initial_step
    for _ in range(cfg.max_inner_iterations):
        g = np.nan_to_num(grad(x), nan=0.0, posinf=1e20, neginf=-1e20)
        d = g if scale is None else g * scale
        moved = False
        for _ in range(60):
            y = project(x - t * d)
            step = y - x
            if not np.any(np.abs(step) > 1e-15 * (1 + np.abs(x))):
                return x, f
            fy = fun(y)
            if fy <= f + cfg.armijo * float(np.sum(g * step)) and fy <= f:
                moved = True
                break
            t *= cfg.backtracking
        if not moved:
            break
        rel = (f - fy) / max(abs(f), 1e-300)
        x, f = y, fy
        t = min(t / cfg.backtracking, 1e12)
        if rel < cfg.inner_tolerance:
            break
    return x, f


# ---------------------------------------------------------------------------
# continuous blocks

def _inter_step(model: LatencyModel, s: _State, cfg: OptConfig) -> float:
    f0 = _value(model, s)
    N, D = model.N, model.D
    if N == 1:
        return f0
    off = ~np.eye(N, dtype=bool)
    cap = min(model.topology.weight_cap, 1.0)

    def unpack(v):
        W = np.zeros((N, N, D))
        W[off] = v.reshape(-1, D)
        return W

    lam = model.arrivals(s.pi)

    def fun(v):
        return model.objective(s.pi, unpack(v), s.w, s.z, lam)

    def grad(v):
        return model.gradient(s.pi, unpack(v), s.w, s.z, lam)[1][off].ravel()

    if not math.isfinite(f0):
        raise NoFeasibleWeights("current design is outside the stable region")
    v, f = _descend(s.W[off].ravel(), f0, fun, grad,
                    lambda u: project_capped_simplex(u, 1.0, cap), cfg)
    s.W = unpack(v)
    return f


def _intra_caps(model, s):
    _, b_res = model.bandwidths(s.W, s.w)
    return np.minimum(1.0, model.C / np.maximum(b_res, 1e-300))


def _intra_step(model: LatencyModel, s: _State, cfg: OptConfig) -> float:
    f0 = _value(model, s)
    if model.D == 1:
        return f0
    if not math.isfinite(f0):
        raise NoFeasibleWeights("current design is outside the stable region")
    caps = _intra_caps(model, s)

    lam = model.arrivals(s.pi)

    def fun(w):
        return model.objective(s.pi, s.W, w, s.z, lam)

    def grad(w):
        return model.gradient(s.pi, s.W, w, s.z, lam)[2]

    w, f = _descend(s.w, f0, fun, grad, lambda u: project_capped_simplex(u, 1.0, caps), cfg)
    s.w = w
    return f


def _support_index(model, s):
    N, R = model.N, model.R
    ii = np.arange(N)[:, None, None]
    jj = s.support[None, :, :]
    rr = np.arange(R)[None, :, None]
    return ii, jj, rr


def _scheduling_step(model: LatencyModel, s: _State, cfg: OptConfig, k: int) -> float:
    f0 = _value(model, s)
    n = s.support.shape[1]
    if k > n:
        raise NoFeasibleSchedule(f"k={k} exceeds support size {n}")
    if k == n:
        return f0
    if not math.isfinite(f0):
        raise NoFeasibleSchedule("current design is outside the stable region")
    idx = _support_index(model, s)
    active = model.coef > 0                                  # (N, R)
    if not np.any(active):
        return f0
    base = s.pi.copy()
    scale = np.where(active, 1.0 / np.where(active, model.coef, 1.0), 0.0)[:, :, None]
    scale = np.broadcast_to(scale, base[idx].shape)

    def unpack(c):
        pi = base.copy()
        pi[idx] = c
        return pi

    def fun(c):
        return model.objective(unpack(c), s.W, s.w, s.z)

    def grad(c):
        return model.gradient(unpack(c), s.W, s.w, s.z)[0][idx]

    def project(c):
        out = project_capped_simplex(c.reshape(-1, n), float(k), 1.0).reshape(c.shape)
        return np.where(active[:, :, None], out, base[idx])

    c, f = _descend(base[idx], f0, fun, grad, project, cfg, scale=scale)
    s.pi = unpack(c)
    return f


def _z_step(model: LatencyModel, s: _State) -> float:
    f0 = _value(model, s)
    znew = model.optimal_z(s.pi, s.W, s.w)
    T_old = model.file_bounds(s.pi, s.W, s.w, s.z)
    T_new = model.file_bounds(s.pi, s.W, s.w, znew)
    better = np.isfinite(T_new) & ~(T_new > T_old)
    s.z = np.where(better, znew, s.z)
    f = _value(model, s)
    return f if f <= f0 else f0


# ---------------------------------------------------------------------------
# placement

class _QueueCache:
    """Per-queue loads and bandwidths kept in sync during a placement pass."""

    def __init__(self, model, s):
        self.lam = model.arrivals(s.pi)
        self.x, _ = model.bandwidths(s.W, s.w)


def placement_costs(model: LatencyModel, s: _State, r: int, cache=None) -> np.ndarray:
    """K[c, j]: objective contribution when column c of file r's marginals moves to rack j.

    Only source racks with traffic for file r are counted; the remaining
    terms are identical for every perfect matching. Infeasible relocations
    cost +inf.
    """
    cache = cache or _QueueCache(model, s)
    d = int(model.cls[r])
    N = model.N
    src = np.flatnonzero(model.rates[:, r] > 0)
    if src.size == 0:
        return np.zeros((N, N))
    same = np.flatnonzero(model.cls == d)
    others = same[same != r]
    lam_r = model.rates[src, r]                             # (I,)
    cols = s.pi[src][:, :, r]                               # (I, N): column c at [:, c]
    lam_q = cache.lam[src][:, :, d]                         # (I, N)
    x_q = cache.x[src][:, :, d]                             # (I, N)
    background = lam_q - lam_r[:, None] * cols              # (I, N) per target rack j

    # load[c, i, j] after moving column c onto rack j
    load = np.maximum(background[None, :, :] + (lam_r[:, None] * cols).T[:, :, None], 0.0)
    M, V = _pk_terms(load, x_q[None], model.mu, model.G2, model.G3, model.B)
    E = model.eta[src][None] + M
    G = model.xi2[src][None] + V
    unstable = (load > 0) & ~(load * model.mu * model.B < model.rho_max * x_q[None])

    # other class-d files already sitting on queue (i, j), one entry per (i, j, r') in use
    cost = np.zeros((N, len(src), N))
    if others.size:
        wt_o = 0.5 * model.coef[src][:, others][:, None, :] * s.pi[src][:, :, others]  # (I, N, Ro)
        ii, jj, oo = np.nonzero(wt_o > 0)
        if ii.size:
            H = E[:, ii, jj] - s.z[src[ii], others[oo]][None, :]                       # (c, L)
            contrib = wt_o[ii, jj, oo][None, :] * bound_value(H, G[:, ii, jj])
            flat = (np.arange(N)[:, None] * len(src) + ii[None, :]) * N + jj[None, :]
            cost += np.bincount(flat.ravel(), contrib.ravel(),
                                minlength=cost.size).reshape(cost.shape)
    wt_r = 0.5 * model.coef[src, r][None, :] * cols.T                                # (c, I)
    H_r = E - s.z[src, r][None, :, None]
    f_r = np.where(wt_r[:, :, None] > 0, bound_value(H_r, G), 0.0)
    cost += wt_r[:, :, None] * f_r
    cost = np.where(unstable, np.inf, cost)
    return cost.sum(axis=1)


def _placement_step(model: LatencyModel, s: _State) -> float:
    f0 = _value(model, s)
    cache = _QueueCache(model, s)
    for d in range(model.D):
        for r in np.flatnonzero(model.cls == d):
            K = placement_costs(model, s, r, cache)
            beta, total = hungarian_assign(K)
            if beta == list(range(model.N)):
                continue
            old = s.pi[:, :, r].copy()
            new = np.zeros_like(old)
            new[:, beta] = old
            s.pi[:, :, r] = new
            cache.lam[:, :, d] += model.rates[:, r, None] * (new - old)
            s.support[r] = np.sort(np.asarray(beta)[s.support[r]])
    return _value(model, s)


# ---------------------------------------------------------------------------
# public sub-solvers on DesignPoints

def _model(topology, workload, cfg):
    return LatencyModel(topology, workload, rho_max=cfg.rho_max)


def solve_inter_weights(topology, workload, state: DesignPoint, cfg=OptConfig()) -> BandwidthWeights:
    model = _model(topology, workload, cfg)
    s = _State.from_design(state)
    if not math.isfinite(_value(model, s)):
        trial = s.copy()
        trial.W = BandwidthWeights.uniform(model.N, model.D).inter
        if not math.isfinite(_value(model, trial)):
            raise NoFeasibleWeights("uniform inter-rack weights are unstable")
        s = trial
    _inter_step(model, s, cfg)
    return BandwidthWeights(s.W, s.w)


def solve_intra_weights(topology, workload, state: DesignPoint, cfg=OptConfig()) -> BandwidthWeights:
    model = _model(topology, workload, cfg)
    s = _State.from_design(state)
    _intra_step(model, s, cfg)
    return BandwidthWeights(s.W, s.w)


def solve_scheduling(topology, workload, state: DesignPoint, cfg=OptConfig()) -> PlacementAndSchedule:
    model = _model(topology, workload, cfg)
    s = _State.from_design(state)
    _scheduling_step(model, s, cfg, workload.code.k)
    return PlacementAndSchedule(tuple(map(tuple, s.support)), s.pi)


def placement_edge_weights(topology, workload, state: DesignPoint, r: int, cfg=OptConfig()) -> np.ndarray:
    model = _model(topology, workload, cfg)
    return placement_costs(model, _State.from_design(state), r)


def solve_placement(topology, workload, state: DesignPoint, cfg=OptConfig()) -> PlacementAndSchedule:
    model = _model(topology, workload, cfg)
    s = _State.from_design(state)
    _placement_step(model, s)
    return PlacementAndSchedule(tuple(map(tuple, s.support)), s.pi)


# ---------------------------------------------------------------------------
# initialisation

def _active_share_weights(model, lam, mix=0.0):
    """Inter weights: uniform over loaded queues (mix=0) or load-proportional (mix>0)."""
    N, D = model.N, model.D
    if N == 1:
        return np.zeros((1, 1, D))
    off = ~np.eye(N, dtype=bool)
    load = lam[off].ravel()
    if mix > 0 and load.sum() > 0:
        target = (1 - mix) * load / load.sum() + mix / load.size
    else:
        active = load > 0
        target = active.astype(float) if active.any() else np.ones_like(load)
        target = target / target.sum()
    cap = min(model.topology.weight_cap, 1.0)
    W = np.zeros((N, N, D))
    W[off] = project_capped_simplex(target, 1.0, cap).reshape(-1, D)
    return W


def _intra_weights(model, lam, proportional):
    N, D = model.N, model.D
    if not proportional:
        return np.full((N, D), 1.0 / D)
    diag = lam[np.arange(N), np.arange(N), :]
    tot = diag.sum(axis=1, keepdims=True)
    w = np.where(tot > 0, 0.9 * diag / np.where(tot > 0, tot, 1) + 0.1 / D, 1.0 / D)
    return w / w.sum(axis=1, keepdims=True)


def _least_loaded_placement(model, n, rng=None):
    N = model.N
    load = np.zeros(N)
    order = np.argsort(-model.rates.sum(axis=0), kind="stable")
    placement = [None] * model.R
    for r in order:
        noise = rng.random(N) * 1e-9 if rng is not None else 0.0
        pick = np.lexsort((np.arange(N), load + noise))[:n]
        placement[r] = tuple(sorted(int(j) for j in pick))
        load[pick] += model.rates[:, r].sum()
    return tuple(placement)


def _build(model, placements, k, proportional, mix, blend=0.0):
    """Uniform-pi design on ``placements``; ``blend`` mixes in weights uniform over all slots."""
    pi = uniform_schedule(placements, model.N, k)
    lam = model.arrivals(pi)
    W = _active_share_weights(model, lam, mix)
    if blend > 0:
        W = (1 - blend) * W + blend * BandwidthWeights.uniform(model.N, model.D).inter
    w = _intra_weights(model, lam, proportional)
    z = np.zeros((model.N, model.R))
    s = _State(pi, W, w, z, np.array(placements, dtype=int))
    if math.isfinite(_value(model, s)):
        s.z = model.optimal_z(s.pi, s.W, s.w)
    return s


_WEIGHT_RECIPES = ((False, 0.0, 0.0), (True, 0.1, 0.0), (True, 0.1, 0.5), (False, 0.0, 1.0))


def initial_design(topology, workload, cfg=OptConfig()) -> DesignPoint:
    """Feasible starting point.

    Placements are tried in the order round-robin, least-loaded, then 10
    random draws; for each, weights uniform over the loaded queues come
    first, then load-proportional ones, then blends towards weights uniform
    over every slot (symmetric, so the ToR residual cannot go negative in
    the as-written convention).
    """
    model = _model(topology, workload, cfg)
    n, k = workload.code.n, workload.code.k
    rng = np.random.default_rng(cfg.seed)
    placements = [lambda: round_robin_placement(model.N, model.R, n),
                  lambda: _least_loaded_placement(model, n)]
    placements += [lambda: tuple(tuple(sorted(rng.choice(model.N, n, replace=False)))
                                 for _ in range(model.R))] * 10
    for make in placements:
        pl = make()
        for proportional, mix, blend in _WEIGHT_RECIPES:
            s = _build(model, pl, k, proportional, mix, blend)
            if math.isfinite(_value(model, s)):
                design = s.to_design()
                if not validate_design(topology, workload, design, cfg.rho_max):
                    return design
    raise InfeasibleInitialization("no stable starting design found")


# ---------------------------------------------------------------------------
# main loop

def jlwo_run(topology, workload, init: DesignPoint | None = None, cfg=OptConfig(),
             on_stage=None):
    """Run the alternating optimisation; returns (DesignPoint, OptTrace).

    ``on_stage(iteration, stage, design)`` is called after every block.
    """
    if not workload.total_rate > 0:
        raise ValueError("workload has zero total request rate")
    model = _model(topology, workload, cfg)
    if init is None:
        init = initial_design(topology, workload, cfg)
    else:
        bad = validate_design(topology, workload, init, cfg.rho_max)
        if bad:
            raise InfeasibleInitialization("initial design invalid: " + "; ".join(map(str, bad[:5])))
    s = _State.from_design(init)
    k = workload.code.k
    trace = OptTrace()
    current = _value(model, s)
    if not math.isfinite(current):
        raise InfeasibleInitialization("initial design is outside the stable region")
    trace.objective.append(current)
    steps = {
        "inter": lambda: _inter_step(model, s, cfg),
        "intra": lambda: _intra_step(model, s, cfg),
        "scheduling": lambda: _scheduling_step(model, s, cfg, k),
        "placement": lambda: _placement_step(model, s),
        "z": lambda: _z_step(model, s),
    }
    trace.termination_reason = "max_iterations"
    for t in range(1, cfg.max_iterations + 1):
        start = time.perf_counter()
        deltas = {}
        for stage in STAGES:
            before = current
            backup = s.copy()
            after = steps[stage]()
            if not after <= before + MONOTONE_TOL:
                log.warning("stage %s raised the objective (%g -> %g); reverted", stage, before, after)
                trace.reverted.append((t, stage, before, after))
                s.pi, s.W, s.w, s.z, s.support = backup.pi, backup.W, backup.w, backup.z, backup.support
                after = before
            current = after
            deltas[stage] = before - after
            trace.stage_values.append((t, stage, before, after))
            if on_stage is not None:
                on_stage(t, stage, s.to_design())
        trace.objective.append(current)
        trace.deltas.append(deltas)
        trace.wall_times.append(time.perf_counter() - start)
        log.debug("iteration %d objective %.9g", t, current)
        if trace.objective[-2] - current <= cfg.epsilon:
            trace.termination_reason = "converged"
            break
    design = s.to_design()
    bad = validate_design(topology, workload, design, cfg.rho_max)
    if bad:
        raise UnstableQueue("optimizer produced an invalid design: " + "; ".join(map(str, bad[:5])))
    return design, trace
