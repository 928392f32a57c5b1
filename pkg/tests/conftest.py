import numpy as np
import pytest

from jlwo.distributions import ServiceDistribution
from jlwo.model import (BandwidthWeights, ClusterTopology, DesignPoint, ErasureCode, FileSpec,
                        PlacementAndSchedule, ServiceClassSet, WorkloadSpec, uniform_schedule)


def single_queue(rate=0.5, dist=None, eta=0.0, xi2=0.0, bandwidth=1e9):
    """One rack, one file, n = k = 1: the intra queue sees B_eff = B."""
    topo = ClusterTopology.uniform(1, 1, bandwidth, bandwidth, bandwidth,
                                   inter_delay=eta, inter_var=xi2)
    wl = WorkloadSpec((FileSpec(0, 0, (rate,)),), ErasureCode(1, 1),
                      dist or ServiceDistribution.exponential(1.0), ServiceClassSet((1.0,)))
    return topo, wl


def design_from(placements, pi, W, w, z=None):
    pi = np.asarray(pi, dtype=float)
    if z is None:
        z = np.zeros((pi.shape[0], pi.shape[2]))
    return DesignPoint(PlacementAndSchedule(tuple(map(tuple, placements)), pi),
                       BandwidthWeights(np.asarray(W, float), np.asarray(w, float)), np.asarray(z, float))


def toy_instance(N=3, rates=None, n=2, k=1, classes=(1.0,), file_class=None, service=None,
                 B=None, b=8e8, C=1e9, inter_delay=0.1, intra_delay=0.05, var_ratio=0.3):
    """Small instance with explicit per-file rate vectors."""
    rates = rates if rates is not None else [[0.2] * N]
    D = len(classes)
    file_class = file_class or [0] * len(rates)
    B = B if B is not None else C * N * (N - 1) * D / 2.0
    topo = ClusterTopology.uniform(N, 1, B, b, C, inter_delay=inter_delay,
                                   inter_var=(var_ratio * inter_delay) ** 2,
                                   intra_delay=intra_delay, intra_var=(var_ratio * intra_delay) ** 2)
    files = tuple(FileSpec(r, file_class[r], tuple(rt)) for r, rt in enumerate(rates))
    wl = WorkloadSpec(files, ErasureCode(n, k), service or ServiceDistribution.exponential(0.05),
                      ServiceClassSet(tuple(classes)))
    return topo, wl


def bandwidth_ratio_design(ratio):
    """Rack 0 reads half locally, half from rack 1; intra/inter bandwidth = ``ratio``.

    With B = C = 1e9 and b = 8e8 the local bandwidth is 1.8e9 - 2e9*a for
    inter weight a on (0, 1), so a = 1.8 / (2 + ratio).
    """
    topo, wl = toy_instance(N=2, rates=[[0.5, 0.0]], n=2, k=1, B=1e9, b=8e8, C=1e9,
                            service=ServiceDistribution.exponential(0.05))
    a = 1.8 / (2 + ratio)
    W = np.zeros((2, 2, 1))
    W[0, 1, 0], W[1, 0, 0] = a, 1 - a
    return topo, wl, design_from([(0, 1)], uniform_schedule([(0, 1)], 2, 1), W, np.ones((2, 1)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Echo the per-criterion verdicts collected by the acceptance suite."""
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[num])
