"""Discrete-event simulation of the per-(source, destination, class) queue network.

File requests arrive as independent Poisson streams per (source rack, file).
Each request draws k hosting racks by systematic sampling and sends one chunk
request into FCFS queue (i, j, d). Chunk service takes X * B / B_eff; the
connection delay is drawn per chunk and added outside the queue. A request
completes when its slowest chunk does.

Queues never feed each other, so every queue sees a fixed, precomputed
arrival sequence. The default engine therefore evaluates each queue's FCFS
waiting times with the Lindley recursion in closed form; the "events" engine
runs the same network through an explicit time-ordered event list and is
kept for cross-checks and small runs.
"""
from __future__ import annotations

import csv
import heapq
import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import HorizonTooShort, InvalidDesign, UnstableQueue
from .latency import LatencyModel, latency_report
from .model import DesignPoint, validate_design
from .sampling import systematic_draws

MIN_COMPLETIONS = 100
WAITING = "waiting"
SOJOURN = "sojourn"


@dataclass(frozen=True)
class SimConfig:
    """Simulation horizon and options.

    Exactly one of ``num_requests`` (request budget) or ``duration`` (seconds)
    sets the horizon.
    """
    num_requests: int | None = 100_000
    duration: float | None = None
    warmup: float = 0.2
    seed: int = 0
    connection_delay_family: str = "shifted-exponential"
    metrics_mode: str = WAITING
    batches: int = 20
    engine: str = "lindley"

    def __post_init__(self):
        if (self.num_requests is None) == (self.duration is None):
            raise ValueError("set exactly one of num_requests and duration")
        if self.num_requests is not None and self.num_requests <= 0:
            raise ValueError("num_requests must be > 0")
        if self.duration is not None and not self.duration > 0:
            raise ValueError("duration must be > 0")
        if not 0 <= self.warmup <= 0.5:
            raise ValueError("warmup must lie in [0, 0.5]")
        if self.connection_delay_family not in ("deterministic", "shifted-exponential"):
            raise ValueError(f"unknown connection delay family {self.connection_delay_family!r}")
        if self.metrics_mode not in (WAITING, SOJOURN):
            raise ValueError(f"metrics_mode must be {WAITING!r} or {SOJOURN!r}")
        if self.batches < 2:
            raise ValueError("need at least 2 batches")
        if self.engine not in ("lindley", "events"):
            raise ValueError(f"unknown engine {self.engine!r}")


@dataclass
class SimResult:
    per_class_mean: np.ndarray          # (D,) seconds, nan for classes without samples
    per_class_half_width: np.ndarray    # (D,) 95% batch-means half-width
    per_class_count: np.ndarray         # (D,) post-warmup completions
    utilization: np.ndarray             # (N, N, D) busy fraction
    mean_service: np.ndarray            # (N, N, D) nan where unused
    mean_waiting: np.ndarray            # (N, N, D) nan where unused
    request_count: int
    records: dict = field(default_factory=dict, repr=False)

    def service_ratio(self, d: int) -> float:
        """Mean inter-rack over mean intra-rack chunk service time for class d."""
        N = self.mean_service.shape[0]
        off = ~np.eye(N, dtype=bool)
        inter = self.records["service_sum"][off, d].sum() / self.records["service_count"][off, d].sum()
        diag = np.arange(N)
        intra = self.records["service_sum"][diag, diag, d].sum() / self.records["service_count"][diag, diag, d].sum()
        return float(inter / intra)

    def write_records(self, path) -> None:
        """Per-request CSV: class, file_id, source_rack, arrival_time_s, latency_s."""
        rec = self.records
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["class", "file_id", "source_rack", "arrival_time_s", "latency_s"])
            for row in zip(rec["class"], rec["file_id"], rec["source"], rec["arrival"], rec["latency"]):
                w.writerow([int(row[0]), row[1], int(row[2]), repr(float(row[3])), repr(float(row[4]))])


@dataclass(frozen=True)
class ClassValidation:
    empirical_mean: float
    half_width: float
    bound: float

    @property
    def slack(self) -> float:
        return self.bound - self.empirical_mean

    @property
    def holds(self) -> bool:
        return self.slack >= -self.half_width


@dataclass(frozen=True)
class BoundValidation:
    classes: tuple
    result: SimResult

    @property
    def holds(self) -> bool:
        return all(c.holds for c in self.classes if math.isfinite(c.empirical_mean))


# ---------------------------------------------------------------------------
# event-list engine

class EventQueueState:
    """Pending events keyed by (time, insertion sequence) plus per-queue FCFS buffers."""

    def __init__(self):
        self._heap = []
        self._seq = 0
        self.buffers = {}
        self.busy = {}
        self.last_time = -math.inf
        self.trace = []

    def push(self, time, kind, payload):
        heapq.heappush(self._heap, (time, self._seq, kind, payload))
        self._seq += 1

    def pop(self):
        time, seq, kind, payload = heapq.heappop(self._heap)
        if time < self.last_time:
            raise RuntimeError("event time went backwards")
        self.last_time = time
        return time, seq, kind, payload

    def __len__(self):
        return len(self._heap)


def _run_events(queue_of, arrival, service, record_trace=False):
    """FCFS service of every chunk via an explicit event list; returns waiting times."""
    state = EventQueueState()
    wait = np.empty(len(arrival))
    for c in range(len(arrival)):
        state.push(float(arrival[c]), 0, c)
    while len(state):
        t, seq, kind, c = state.pop()
        q = int(queue_of[c])
        if record_trace:
            state.trace.append((t, seq, kind, c))
        buf = state.buffers.setdefault(q, deque())
        if kind == 0:                       # chunk arrival
            if state.busy.get(q, False):
                buf.append(c)
            else:
                state.busy[q] = True
                wait[c] = 0.0
                state.push(t + float(service[c]), 1, c)
        else:                               # service completion
            if buf:
                nxt = buf.popleft()
                wait[nxt] = t - arrival[nxt]
                state.push(t + float(service[nxt]), 1, nxt)
            else:
                state.busy[q] = False
    return wait, state


def _run_lindley(queue_of, arrival, service):
    """Closed-form FCFS waiting times per queue: W = U - running min(U), U_0 = 0."""
    order = np.lexsort((np.arange(len(arrival)), arrival, queue_of))
    q_sorted = queue_of[order]
    wait = np.empty(len(arrival))
    bounds = np.flatnonzero(np.diff(q_sorted)) + 1
    for seg in np.split(order, bounds):
        if seg.size == 0:
            continue
        a = arrival[seg]
        s = service[seg]
        U = np.empty(seg.size)
        U[0] = 0.0
        np.cumsum(s[:-1] - np.diff(a), out=U[1:])
        wait[seg] = U - np.minimum.accumulate(U)
    return wait


# ---------------------------------------------------------------------------
# main entry point

def _precheck(topology, workload, design):
    violations = validate_design(topology, workload, design)
    for v in violations:
        if v.kind == "stability":
            raise UnstableQueue(str(v), queue=v.where)
    if violations:
        raise InvalidDesign("; ".join(str(v) for v in violations[:3]))


def _arrivals(rates, cfg, rng):
    """Merged Poisson arrivals: (times, flat (rack, file) stream index)."""
    flat = rates.ravel()
    total = flat.sum()
    if total <= 0:
        return np.zeros(0), np.zeros(0, dtype=int)
    if cfg.num_requests is not None:
        count = int(cfg.num_requests)
    else:
        count = int(rng.poisson(total * cfg.duration))
    times = np.cumsum(rng.exponential(1.0 / total, size=count))
    streams = rng.choice(flat.size, size=count, p=flat / total)
    return times, streams


def _connection_delays(eta, xi2, family, rng):
    if family == "deterministic":
        return eta.copy()
    sd = np.sqrt(xi2)
    if np.any(sd > eta * (1 + 1e-12)):
        raise ValueError("shifted-exponential delay needs variance <= mean^2")
    return np.maximum(eta - sd, 0.0) + sd * rng.exponential(1.0, size=eta.shape)


def _batch_means(x, batches):
    n = x.size
    if n == 0:
        return math.nan, math.nan
    if n < 2:
        return float(x[0]), math.nan
    b = min(batches, n)
    means = np.array([math.fsum(part) / part.size for part in np.array_split(x, b)])
    hw = stats.t.ppf(0.975, b - 1) * means.std(ddof=1) / math.sqrt(b)
    return math.fsum(x) / n, float(hw)


def simulate(topology, workload, design: DesignPoint, cfg: SimConfig = SimConfig(), *,
             check=True, record_trace=False) -> SimResult:
    if check:
        _precheck(topology, workload, design)
    rng = np.random.default_rng(cfg.seed)
    model = LatencyModel(topology, workload)
    N, D, R = model.N, model.D, model.R
    k = workload.code.k
    x, _ = model.bandwidths(design.weights.inter, design.weights.intra)
    pi = design.pi

    times, streams = _arrivals(model.rates, cfg, rng)
    m = times.size
    src, fidx = np.divmod(streams, R)
    cls = model.cls[fidx]

    # k hosting racks per request, drawn per (source, file) group
    racks = np.zeros((m, k), dtype=int)
    u = rng.random(m)
    order = np.argsort(streams, kind="stable")
    cuts = np.flatnonzero(np.diff(streams[order])) + 1
    for grp in np.split(order, cuts) if m else []:
        i, r = divmod(int(streams[grp[0]]), R)
        racks[grp] = systematic_draws(pi[i, :, r], k, u[grp])

    # one chunk per (request, selected rack)
    c_req = np.repeat(np.arange(m), k)
    c_src = src[c_req]
    c_dst = racks.ravel()
    c_cls = cls[c_req]
    queue_of = (c_src * N + c_dst) * D + c_cls
    c_arr = times[c_req]
    scale = model.B / x[c_src, c_dst, c_cls]
    service = workload.service.sample(rng, c_req.size) * scale
    conn = _connection_delays(model.eta[c_src, c_dst], model.xi2[c_src, c_dst],
                              cfg.connection_delay_family, rng)

    trace_state = None
    if cfg.engine == "events":
        wait, trace_state = _run_events(queue_of, c_arr, service, record_trace)
    else:
        wait = _run_lindley(queue_of, c_arr, service)

    chunk_lat = conn + wait + (service if cfg.metrics_mode == SOJOURN else 0.0)
    latency = chunk_lat.reshape(m, k).max(axis=1) if m else np.zeros(0)

    start = int(math.floor(cfg.warmup * m))
    keep = np.arange(m) >= start
    means = np.full(D, math.nan)
    hws = np.full(D, math.nan)
    counts = np.zeros(D, dtype=int)
    for d in range(D):
        sel = latency[keep & (cls == d)]
        counts[d] = sel.size
        means[d], hws[d] = _batch_means(sel, cfg.batches)
    if np.any(counts < MIN_COMPLETIONS):
        warnings.warn(f"post-warmup completions per class {counts.tolist()} below "
                      f"{MIN_COMPLETIONS}", HorizonTooShort, stacklevel=2)

    # per-queue statistics over post-warmup chunks; utilisation over the whole run
    ckeep = keep[c_req]
    nq = N * N * D
    cnt = np.bincount(queue_of[ckeep], minlength=nq).reshape(N, N, D)
    ssum = np.bincount(queue_of[ckeep], service[ckeep], minlength=nq).reshape(N, N, D)
    wsum = np.bincount(queue_of[ckeep], wait[ckeep], minlength=nq).reshape(N, N, D)
    span = float(times[-1]) if m else 0.0
    busy = np.bincount(queue_of, service, minlength=nq).reshape(N, N, D)
    util = np.clip(busy / span, 0.0, 1.0) if span > 0 else np.zeros((N, N, D))
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_s = np.where(cnt > 0, ssum / cnt, np.nan)
        mean_w = np.where(cnt > 0, wsum / cnt, np.nan)

    ids = np.empty(R, dtype=object)
    ids[:] = [f.file_id for f in workload.files]
    records = {"class": cls, "file_id": ids[fidx],
               "source": src, "arrival": times, "latency": latency,
               "service_sum": ssum, "service_count": cnt}
    if trace_state is not None:
        records["trace"] = trace_state.trace
    return SimResult(means, hws, counts, util, mean_s, mean_w, m, records)


def validate_bound(topology, workload, design: DesignPoint, cfg: SimConfig = SimConfig()) -> BoundValidation:
    """Simulated per-class means against the class-conditional analytical bounds."""
    res = simulate(topology, workload, design, cfg)
    rep = latency_report(topology, workload, design)
    rows = tuple(ClassValidation(float(res.per_class_mean[d]), float(res.per_class_half_width[d]),
                                 float(rep.per_class_conditional[d]))
                 for d in range(workload.num_classes))
    return BoundValidation(rows, res)
