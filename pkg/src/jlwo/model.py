"""Domain types for the rack-level storage model and the bandwidth equations.

Array conventions used throughout the package (N racks, R files, D classes):

* ``rates[i, r]``   request rate for file r generated in rack i
* ``pi[i, j, r]``   probability that a rack-i request for file r uses rack j
* ``W[i, j, d]``    aggregate-switch weight of queue (i, j, d), i != j
* ``w[i, d]``       ToR weight of the intra-rack class-d queue of rack i
* ``z[i, r]``       auxiliary scalar of the order-statistic bound
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .distributions import ServiceDistribution
from .errors import NegativeResidualBandwidth, PortCapacityExceeded

WEIGHT_TOL = 1e-9
PI_TOL = 1e-7
# slack on capacity comparisons so that W = C/B exactly passes
CAP_RTOL = 1e-12


class IntraResidualMode(str, Enum):
    """How inter-rack reservations reduce the ToR bandwidth left for intra traffic.

    AS_WRITTEN subtracts (outgoing - incoming); SUM_BOTH subtracts
    (outgoing + incoming).
    """

    AS_WRITTEN = "as-written"
    SUM_BOTH = "sum"


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ClusterTopology:
    num_racks: int
    servers_per_rack: int
    aggregate_bandwidth: float
    tor_bandwidth: float
    port_capacity: float
    connection_delay_mean: np.ndarray
    connection_delay_var: np.ndarray
    intra_residual: IntraResidualMode = IntraResidualMode.AS_WRITTEN

    def __post_init__(self):
        n = int(self.num_racks)
        if n < 1 or self.servers_per_rack < 1:
            raise ValueError("num_racks and servers_per_rack must be >= 1")
        for name in ("aggregate_bandwidth", "tor_bandwidth", "port_capacity"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("connection_delay_mean", "connection_delay_var"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim == 0:
                arr = np.full((n, n), float(arr))
            if arr.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}")
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} entries must be finite and >= 0")
            object.__setattr__(self, name, _frozen(arr))
        object.__setattr__(self, "intra_residual", IntraResidualMode(self.intra_residual))

    @classmethod
    def uniform(cls, num_racks, servers_per_rack, aggregate_bandwidth, tor_bandwidth,
                port_capacity, inter_delay=0.0, inter_var=0.0, intra_delay=None,
                intra_var=None, intra_residual=IntraResidualMode.AS_WRITTEN):
        """Topology whose connection delays only distinguish intra from inter."""
        eta = np.full((num_racks, num_racks), float(inter_delay))
        xi2 = np.full((num_racks, num_racks), float(inter_var))
        np.fill_diagonal(eta, inter_delay if intra_delay is None else intra_delay)
        np.fill_diagonal(xi2, inter_var if intra_var is None else intra_var)
        return cls(num_racks, servers_per_rack, aggregate_bandwidth, tor_bandwidth,
                   port_capacity, eta, xi2, intra_residual)

    @property
    def weight_cap(self) -> float:
        """Largest admissible inter-rack weight, C / B."""
        return self.port_capacity / self.aggregate_bandwidth


@dataclass(frozen=True)
class ErasureCode:
    n: int
    k: int

    def __post_init__(self):
        if not 1 <= self.k <= self.n:
            raise ValueError(f"erasure code needs 1 <= k <= n, got ({self.n},{self.k})")


@dataclass(frozen=True)
class ServiceClassSet:
    weights: tuple

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if len(w) < 1:
            raise ValueError("at least one service class is required")
        if any(x < 0 for x in w) or not any(x > 0 for x in w):
            raise ValueError("class weights must be >= 0 with at least one > 0")
        object.__setattr__(self, "weights", w)

    @property
    def num_classes(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class FileSpec:
    file_id: int
    class_id: int
    arrival_rates: tuple

    def __post_init__(self):
        rates = tuple(float(x) for x in self.arrival_rates)
        if any(not (x >= 0 and np.isfinite(x)) for x in rates):
            raise ValueError(f"file {self.file_id}: arrival rates must be finite and >= 0")
        object.__setattr__(self, "arrival_rates", rates)


@dataclass(frozen=True)
class WorkloadSpec:
    """File catalog plus code, service distribution and class weights.

    Files are kept sorted by ``file_id``; the array index r of a file is its
    position in that order.
    """

    files: tuple
    code: ErasureCode
    service: ServiceDistribution
    classes: ServiceClassSet
    _rates: np.ndarray = field(init=False, repr=False, compare=False)
    _cls: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        files = tuple(sorted(self.files, key=lambda f: f.file_id))
        if not files:
            raise ValueError("workload has no files")
        ids = [f.file_id for f in files]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate file ids")
        widths = {len(f.arrival_rates) for f in files}
        if len(widths) != 1:
            raise ValueError("all files need one arrival rate per rack")
        D = self.classes.num_classes
        for f in files:
            if not 0 <= f.class_id < D:
                raise ValueError(f"file {f.file_id}: class_id {f.class_id} outside [0, {D})")
        object.__setattr__(self, "files", files)
        object.__setattr__(self, "_rates", _frozen([f.arrival_rates for f in files]).T)
        object.__setattr__(self, "_cls", _frozen([f.class_id for f in files], dtype=int))

    @property
    def rates(self) -> np.ndarray:
        """(N, R) request rates."""
        return self._rates

    @property
    def file_class(self) -> np.ndarray:
        return self._cls

    @property
    def num_files(self) -> int:
        return len(self.files)

    @property
    def num_classes(self) -> int:
        return self.classes.num_classes

    @property
    def total_rate(self) -> float:
        return float(self._rates.sum())

    def class_rate(self, d: int) -> float:
        return float(self._rates[:, self._cls == d].sum())

    def index_of(self, file_id) -> int:
        for r, f in enumerate(self.files):
            if f.file_id == file_id:
                return r
        raise KeyError(file_id)


@dataclass(frozen=True)
class BandwidthWeights:
    """Inter-rack weights ``inter[i, j, d]`` (diagonal unused, zero) and
    intra-rack weights ``intra[i, d]``."""

    inter: np.ndarray
    intra: np.ndarray

    def __post_init__(self):
        W = np.array(self.inter, dtype=float)
        w = np.array(self.intra, dtype=float)
        if W.ndim != 3 or W.shape[0] != W.shape[1] or w.shape != (W.shape[0], W.shape[2]):
            raise ValueError("inter must be (N, N, D) and intra (N, D)")
        N = W.shape[0]
        W[np.arange(N), np.arange(N), :] = 0.0
        if np.any(W < 0) or np.any(w < 0):
            raise ValueError("bandwidth weights must be >= 0")
        if N > 1 and abs(W.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"inter-rack weights sum to {W.sum():.12g}, expected 1")
        if np.any(np.abs(w.sum(axis=1) - 1.0) > WEIGHT_TOL):
            raise ValueError("intra-rack weights of every rack must sum to 1")
        object.__setattr__(self, "inter", _frozen(W))
        object.__setattr__(self, "intra", _frozen(w))

    @classmethod
    def uniform(cls, num_racks, num_classes):
        N, D = num_racks, num_classes
        W = np.zeros((N, N, D))
        if N > 1:
            W[~np.eye(N, dtype=bool)] = 1.0 / (N * (N - 1) * D)
        return cls(W, np.full((N, D), 1.0 / D))

    @property
    def num_racks(self) -> int:
        return self.inter.shape[0]

    @property
    def num_classes(self) -> int:
        return self.inter.shape[2]


@dataclass(frozen=True)
class PlacementAndSchedule:
    """Chunk placement per file and the dense scheduling marginals pi[i, j, r]."""

    placements: tuple
    pi: np.ndarray

    def __post_init__(self):
        pl = tuple(tuple(sorted(int(j) for j in s)) for s in self.placements)
        pi = np.array(self.pi, dtype=float)
        if pi.ndim != 3 or pi.shape[0] != pi.shape[1] or pi.shape[2] != len(pl):
            raise ValueError("pi must be (N, N, R) with one placement per file")
        object.__setattr__(self, "placements", pl)
        object.__setattr__(self, "pi", _frozen(pi))

    @classmethod
    def from_pi(cls, pi, tol=0.0):
        """Rebuild placements from the support of pi."""
        pi = np.asarray(pi)
        used = (pi > tol).any(axis=0)
        return cls(tuple(tuple(np.flatnonzero(used[:, r])) for r in range(pi.shape[2])), pi)


@dataclass(frozen=True)
class DesignPoint:
    schedule: PlacementAndSchedule
    weights: BandwidthWeights
    z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "z", _frozen(self.z))

    @property
    def pi(self) -> np.ndarray:
        return self.schedule.pi


@dataclass(frozen=True)
class Violation:
    kind: str
    where: tuple
    detail: str

    def __str__(self):
        return f"{self.kind}{list(self.where)}: {self.detail}"


# ---------------------------------------------------------------------------
# bandwidth and rate equations

def effective_bandwidth_inter(topology: ClusterTopology, weights: BandwidthWeights,
                              i: int, j: int, d: int) -> float:
    if i == j:
        raise ValueError("inter-rack bandwidth needs i != j")
    bw = topology.aggregate_bandwidth * float(weights.inter[i, j, d])
    if bw > topology.port_capacity * (1 + CAP_RTOL):
        raise PortCapacityExceeded(
            f"queue ({i},{j},{d}) gets {bw:.6g} b/s > port capacity {topology.port_capacity:.6g}")
    return bw


def residual_tor_bandwidth(topology: ClusterTopology, inter: np.ndarray, mode=None) -> np.ndarray:
    """ToR bandwidth left for intra-rack traffic on every rack, shape (N,)."""
    mode = IntraResidualMode(mode or topology.intra_residual)
    B = topology.aggregate_bandwidth
    out = inter.sum(axis=(1, 2)) * B
    inc = inter.sum(axis=(0, 2)) * B
    if mode is IntraResidualMode.AS_WRITTEN:
        return topology.tor_bandwidth - (out - inc)
    return topology.tor_bandwidth - (out + inc)


def effective_bandwidth_intra(topology: ClusterTopology, weights: BandwidthWeights,
                              i: int, d: int, mode=None) -> float:
    if not 0 <= i < topology.num_racks:
        raise IndexError(f"rack {i} out of range")
    b_res = float(residual_tor_bandwidth(topology, weights.inter, mode)[i])
    if b_res <= 0:
        raise NegativeResidualBandwidth(f"rack {i} has residual ToR bandwidth {b_res:.6g}")
    bw = float(weights.intra[i, d]) * b_res
    if bw > topology.port_capacity * (1 + CAP_RTOL):
        raise PortCapacityExceeded(
            f"intra queue ({i},{d}) gets {bw:.6g} b/s > port capacity {topology.port_capacity:.6g}")
    return bw


def effective_bandwidths(topology: ClusterTopology, inter: np.ndarray, intra: np.ndarray,
                         mode=None) -> np.ndarray:
    """All B_eff[i, j, d] at once without capacity checks."""
    N = inter.shape[0]
    x = topology.aggregate_bandwidth * np.array(inter, dtype=float)
    b_res = residual_tor_bandwidth(topology, inter, mode)
    x[np.arange(N), np.arange(N), :] = intra * b_res[:, None]
    return x


def class_onehot(file_class: np.ndarray, num_classes: int) -> np.ndarray:
    return np.eye(num_classes)[file_class]


def aggregate_arrivals(rates: np.ndarray, file_class: np.ndarray, pi: np.ndarray,
                       num_classes: int) -> np.ndarray:
    """Lambda[i, j, d] = sum over class-d files r of rates[i, r] * pi[i, j, r]."""
    return np.einsum("ir,ijr,rd->ijd", rates, pi, class_onehot(file_class, num_classes))


def aggregate_arrival(workload: WorkloadSpec, schedule: PlacementAndSchedule,
                      i: int, j: int, d: int) -> float:
    mask = workload.file_class == d
    return float(np.dot(workload.rates[i, mask], schedule.pi[i, j, mask]))


# ---------------------------------------------------------------------------
# feasibility

def check_instance(topology: ClusterTopology, workload: WorkloadSpec) -> list:
    """Violations that depend only on topology + workload dimensions."""
    out = []
    N = topology.num_racks
    if workload.rates.shape[0] != N:
        out.append(Violation("shape", (), f"files carry {workload.rates.shape[0]} rates, topology has {N} racks"))
    if workload.code.n > N:
        out.append(Violation("code", (), f"n={workload.code.n} exceeds number of racks {N}"))
    D = workload.num_classes
    if N > 1 and N * (N - 1) * D * topology.weight_cap < 1 - WEIGHT_TOL:
        out.append(Violation("capacity", (), "port capacity too small for inter weights to sum to 1"))
    return out


def validate_design(topology: ClusterTopology, workload: WorkloadSpec, design: DesignPoint,
                    rho_max: float = 0.999) -> list:
    """Check every invariant of a design; returns a (possibly empty) list of Violations."""
    if not 0 < rho_max < 1:
        raise ValueError("rho_max must lie in (0, 1)")
    v = check_instance(topology, workload)
    if v:
        return v
    N, R, D = topology.num_racks, workload.num_files, workload.num_classes
    n, k = workload.code.n, workload.code.k
    W, w = design.weights.inter, design.weights.intra
    pi, z = design.pi, design.z
    if W.shape != (N, N, D) or w.shape != (N, D) or pi.shape != (N, N, R) or z.shape != (N, R):
        return [Violation("shape", (), "design arrays do not match the instance dimensions")]

    if np.any(W < 0) or np.any(w < 0):
        v.append(Violation("weights", (), "negative weight"))
    if N > 1 and abs(W.sum() - 1) > WEIGHT_TOL:
        v.append(Violation("weights", (), f"inter weights sum to {W.sum():.12g}"))
    for i in np.flatnonzero(np.abs(w.sum(axis=1) - 1) > WEIGHT_TOL):
        v.append(Violation("weights", (int(i),), "intra weights do not sum to 1"))

    B, C = topology.aggregate_bandwidth, topology.port_capacity
    cap = C * (1 + CAP_RTOL)
    off = ~np.eye(N, dtype=bool)
    for i, j, d in np.argwhere((B * W > cap) & off[:, :, None]):
        v.append(Violation("port-capacity", (int(i), int(j), int(d)), f"{B * W[i, j, d]:.6g} b/s"))
    b_res = residual_tor_bandwidth(topology, W)
    for i in np.flatnonzero(b_res <= 0):
        v.append(Violation("tor-residual", (int(i),), f"residual {b_res[i]:.6g} b/s"))
    for i, d in np.argwhere(w * b_res[:, None] > cap):
        v.append(Violation("port-capacity", (int(i), int(i), int(d)), "intra bandwidth above capacity"))

    rates = workload.rates
    for r, S in enumerate(design.schedule.placements):
        if len(S) != n or len(set(S)) != len(S) or any(not 0 <= j < N for j in S):
            v.append(Violation("placement", (r,), f"file hosted on {list(S)}, need {n} distinct racks"))
            continue
        off_support = np.ones(N, dtype=bool)
        off_support[list(S)] = False
        if np.any(pi[:, off_support, r] != 0):
            v.append(Violation("support", (r,), "pi > 0 on a rack outside the placement"))
    if np.any(pi < -PI_TOL) or np.any(pi > 1 + PI_TOL):
        v.append(Violation("pi-range", (), "pi outside [0, 1]"))
    sums = pi.sum(axis=1)
    for i, r in np.argwhere((np.abs(sums - k) > PI_TOL) & (rates > 0)):
        v.append(Violation("pi-sum", (int(i), int(r)), f"sum_j pi = {sums[i, r]:.9g}, expected {k}"))
    if not np.all(np.isfinite(z)):
        v.append(Violation("z", (), "non-finite z"))

    lam = aggregate_arrivals(rates, workload.file_class, np.clip(pi, 0, 1), D)
    x = effective_bandwidths(topology, W, w)
    load = lam * workload.service.mean * B
    used = lam > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(x > 0, load / np.where(x > 0, x, 1), np.inf)
    for i, j, d in np.argwhere(used & (rho > rho_max)):
        v.append(Violation("stability", (int(i), int(j), int(d)),
                           f"utilisation {rho[i, j, d]:.6g} > {rho_max}"))
    return v


def round_robin_placement(num_racks: int, num_files: int, n: int) -> tuple:
    return tuple(tuple(sorted((r + t) % num_racks for t in range(n))) for r in range(num_files))


def uniform_schedule(placements: Sequence, num_racks: int, k: int) -> np.ndarray:
    R = len(placements)
    pi = np.zeros((num_racks, num_racks, R))
    for r, S in enumerate(placements):
        pi[:, list(S), r] = k / len(S)
    return pi
