"""Ready-made instances: the testbed-shaped cluster and seeded random ones."""
from __future__ import annotations

import numpy as np

from .distributions import ServiceDistribution
from .model import (ClusterTopology, ErasureCode, FileSpec, ServiceClassSet, WorkloadSpec,
                    aggregate_arrivals, effective_bandwidths, round_robin_placement,
                    uniform_schedule)

GBPS = 1e9
MBPS = 1e6


def make_files(num_racks, files_per_class, class_rates, rng=None, pattern="uniform"):
    """Files for every class; ``class_rates[d]`` is the aggregate rate of class d.

    ``pattern="uniform"`` spreads the rate evenly over files and racks;
    ``"random"`` draws heterogeneous per-file, per-rack shares.
    """
    files = []
    fid = 0
    for d, total in enumerate(class_rates):
        if pattern == "uniform":
            shares = np.full((files_per_class, num_racks), 1.0 / (files_per_class * num_racks))
        elif pattern == "random":
            shares = rng.gamma(2.0, 1.0, size=(files_per_class, num_racks))
            shares /= shares.sum()
        else:
            raise ValueError(f"unknown rate pattern {pattern!r}")
        for r in range(files_per_class):
            files.append(FileSpec(fid, d, tuple(total * shares[r])))
            fid += 1
    return tuple(files)


def initial_utilisation(topology, workload) -> float:
    """Largest queue utilisation under round-robin placement and uniform weights."""
    N, D = topology.num_racks, workload.num_classes
    pl = round_robin_placement(N, workload.num_files, workload.code.n)
    pi = uniform_schedule(pl, N, workload.code.k)
    lam = aggregate_arrivals(workload.rates, workload.file_class, pi, D)
    W = np.zeros((N, N, D))
    if N > 1:
        W[~np.eye(N, dtype=bool)] = 1.0 / (N * (N - 1) * D)
    x = effective_bandwidths(topology, W, np.full((N, D), 1.0 / D))
    rho = lam * workload.service.mean * topology.aggregate_bandwidth / x
    return float(rho[lam > 0].max()) if np.any(lam > 0) else 0.0


def with_target_load(topology, workload, target):
    """Rescale the service distribution so the initial peak utilisation equals ``target``."""
    rho = initial_utilisation(topology, workload)
    return WorkloadSpec(workload.files, workload.code, workload.service.scaled(target / rho),
                        workload.classes)


def reference_testbed(files_per_class=100, class_weights=(1.0, 0.4), total_rate=0.25,
                 target_load=0.3, service_family="exponential", intra_delay=0.05,
                 inter_delay=0.1):
    """Ten racks, (7,4) code, two classes, 96 Gbps aggregate, 792 Mbps ToR, 1 Gbps ports."""
    N = 10
    topo = ClusterTopology.uniform(
        N, 10, 96 * GBPS, 792 * MBPS, 1 * GBPS,
        inter_delay=inter_delay, inter_var=(0.3 * inter_delay) ** 2,
        intra_delay=intra_delay, intra_var=(0.3 * intra_delay) ** 2)
    D = len(class_weights)
    files = make_files(N, files_per_class, [total_rate / D] * D)
    service = (ServiceDistribution.exponential(1.0) if service_family == "exponential"
               else ServiceDistribution.gamma(2.0, 0.5))
    wl = WorkloadSpec(files, ErasureCode(7, 4), service, ServiceClassSet(class_weights))
    return topo, with_target_load(topo, wl, target_load)


def random_instance(seed, num_racks=None, num_files=None, num_classes=None, n=None, k=None,
                    target_load=None):
    """Seeded random feasible instance with heterogeneous rates and delays."""
    rng = np.random.default_rng(seed)
    N = int(num_racks or rng.integers(3, 11))
    D = int(num_classes or rng.integers(1, 3))
    R = int(num_files or rng.integers(2, 201))
    n = int(n or rng.integers(1, min(N, 7) + 1))
    k = int(k or rng.integers(1, n + 1))
    C = 1 * GBPS
    B = C * N * (N - 1) * D / 3.0 if N > 1 else 10 * GBPS
    eta = rng.uniform(0.05, 0.2, size=(N, N))
    np.fill_diagonal(eta, rng.uniform(0.01, 0.05, size=N))
    xi2 = (rng.uniform(0.1, 0.5, size=(N, N)) * eta) ** 2
    topo = ClusterTopology(N, 10, B, 0.8 * C, C, eta, xi2)
    per_class = max(1, R // D)
    weights = tuple([1.0] + list(np.round(rng.uniform(0.2, 1.0, size=D - 1), 3)))
    files = make_files(N, per_class, rng.uniform(0.5, 1.5, size=D), rng, "random")
    family = rng.choice(["exponential", "gamma", "deterministic"])
    service = {"exponential": ServiceDistribution.exponential(1.0),
               "gamma": ServiceDistribution.gamma(float(rng.uniform(0.5, 3)), 1.0),
               "deterministic": ServiceDistribution.deterministic(1.0)}[family]
    wl = WorkloadSpec(files, _code(n, k), service, ServiceClassSet(weights))
    load = target_load if target_load is not None else float(rng.uniform(0.2, 0.6))
    return topo, with_target_load(topo, wl, load)


def _code(n, k):
    return ErasureCode(n, k)
