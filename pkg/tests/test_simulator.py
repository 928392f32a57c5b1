import math
import warnings

import numpy as np
import pytest

from conftest import bandwidth_ratio_design, design_from, single_queue
from jlwo.distributions import ServiceDistribution
from jlwo.errors import HorizonTooShort, InvalidDesign, UnstableQueue
from jlwo.instances import random_instance
from jlwo.latency import LatencyModel
from jlwo.optimizer import jlwo_run
from jlwo.simulator import SimConfig, _run_events, _run_lindley, simulate, validate_bound


def _single_design():
    return design_from([(0,)], np.ones((1, 1, 1)), np.zeros((1, 1, 1)), np.ones((1, 1)))


def test_mm1_waiting_time():
    topo, wl = single_queue(rate=0.5, dist=ServiceDistribution.exponential(1.0))
    res = simulate(topo, wl, _single_design(), SimConfig(num_requests=1_000_000, seed=3, warmup=0.1))
    assert res.mean_waiting[0, 0, 0] == pytest.approx(1.0, rel=0.02)
    assert res.per_class_mean[0] == pytest.approx(1.0, rel=0.02)   # no delay, k = 1
    assert res.utilization[0, 0, 0] == pytest.approx(0.5, rel=0.02)


def test_sojourn_adds_service():
    topo, wl = single_queue(rate=0.5, dist=ServiceDistribution.exponential(1.0))
    w = simulate(topo, wl, _single_design(), SimConfig(num_requests=200_000, seed=4))
    s = simulate(topo, wl, _single_design(), SimConfig(num_requests=200_000, seed=4, metrics_mode="sojourn"))
    assert s.per_class_mean[0] - w.per_class_mean[0] == pytest.approx(1.0, rel=0.03)


def test_zero_rates_warn_and_return_empty():
    topo, wl = single_queue(rate=0.0)
    with pytest.warns(HorizonTooShort):
        res = simulate(topo, wl, _single_design(), SimConfig(num_requests=1000))
    assert res.request_count == 0 and res.per_class_count[0] == 0


def test_idle_system_sees_only_connection_delay():
    topo, wl = single_queue(rate=1e-3, dist=ServiceDistribution.deterministic(1e-9),
                            eta=0.2, xi2=0.0004)
    topo = type(topo)(1, 1, 1e9, 1e9, 1e9, [[0.2]], [[0.0]])
    d = _single_design()
    bv = validate_bound(topo, wl, d, SimConfig(num_requests=20_000, connection_delay_family="deterministic"))
    c = bv.classes[0]
    assert c.empirical_mean == pytest.approx(0.2, abs=1e-12)
    assert c.bound >= 0.2 and bv.holds


def test_single_queue_bound_dominates():
    topo, wl = single_queue(rate=0.5, dist=ServiceDistribution.exponential(1.0), eta=0.1, xi2=0.0009)
    d, _ = jlwo_run(topo, wl)
    bv = validate_bound(topo, wl, d, SimConfig(num_requests=300_000, seed=2))
    assert bv.holds


def test_engines_agree_and_events_are_ordered():
    topo, wl = random_instance(4, num_racks=4, num_files=8)
    d, _ = jlwo_run(topo, wl)
    a = simulate(topo, wl, d, SimConfig(num_requests=5000, seed=9))
    b = simulate(topo, wl, d, SimConfig(num_requests=5000, seed=9, engine="events"), record_trace=True)
    assert np.allclose(a.records["latency"], b.records["latency"], rtol=0, atol=1e-9)
    trace = b.records["trace"]
    times = [t for t, *_ in trace]
    assert all(t1 <= t2 for t1, t2 in zip(times, times[1:]))
    keys = [(t, s) for t, s, *_ in trace]
    assert keys == sorted(keys)


def test_fcfs_and_work_conservation(rng):
    m = 3000
    queue = rng.integers(0, 3, m)
    arrival = np.sort(rng.exponential(1.0, m).cumsum() * 0.4)
    service = rng.exponential(0.9, m)
    w_ev, _ = _run_events(queue, arrival, service)
    w_li = _run_lindley(queue, arrival, service)
    assert np.allclose(w_ev, w_li, atol=1e-9)
    for q in range(3):
        idx = np.flatnonzero(queue == q)
        start = arrival[idx] + w_li[idx]
        end = start + service[idx]
        # FIFO, and service starts the moment the server frees up or the chunk arrives
        assert np.all(np.diff(start) >= -1e-12)
        expect = np.maximum(arrival[idx][1:], end[:-1])
        assert np.allclose(start[1:], expect, atol=1e-9)
        assert np.all(w_li[idx] >= 0)


def test_determinism():
    topo, wl = random_instance(2, num_racks=4, num_files=10)
    d, _ = jlwo_run(topo, wl)
    cfg = SimConfig(num_requests=4000, seed=17)
    a, b = simulate(topo, wl, d, cfg), simulate(topo, wl, d, cfg)
    assert np.array_equal(a.records["latency"], b.records["latency"])
    assert np.array_equal(a.per_class_mean, b.per_class_mean, equal_nan=True)
    c = simulate(topo, wl, d, SimConfig(num_requests=4000, seed=18))
    assert not np.array_equal(a.records["latency"], c.records["latency"])


def test_result_invariants():
    topo, wl = random_instance(6, num_racks=5, num_files=12)
    d, _ = jlwo_run(topo, wl)
    res = simulate(topo, wl, d, SimConfig(num_requests=20_000, seed=1))
    assert np.all((res.utilization >= 0) & (res.utilization <= 1))
    assert np.all(res.per_class_half_width[res.per_class_count >= 2] > 0)
    assert res.per_class_count.sum() == 16_000


def test_service_time_follows_bandwidth_ratio():
    topo, wl, d = bandwidth_ratio_design(1.5)
    x, _ = LatencyModel(topo, wl).bandwidths(d.weights.inter, d.weights.intra)
    assert x[0, 0, 0] / x[0, 1, 0] == pytest.approx(1.5)
    res = simulate(topo, wl, d, SimConfig(num_requests=200_000, seed=5))
    assert res.service_ratio(0) == pytest.approx(1.5, rel=0.02)


def test_precheck_errors():
    topo, wl = single_queue(rate=2.0, dist=ServiceDistribution.exponential(1.0))
    with pytest.raises(UnstableQueue):
        simulate(topo, wl, _single_design())
    topo, wl = single_queue(rate=0.5)
    bad = design_from([(0,)], np.full((1, 1, 1), 0.5), np.zeros((1, 1, 1)), np.ones((1, 1)))
    with pytest.raises(InvalidDesign):
        simulate(topo, wl, bad)


def test_records_csv(tmp_path):
    topo, wl = random_instance(1, num_racks=3, num_files=4)
    d, _ = jlwo_run(topo, wl)
    res = simulate(topo, wl, d, SimConfig(num_requests=500, seed=1))
    path = tmp_path / "records.csv"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res.write_records(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "class,file_id,source_rack,arrival_time_s,latency_s"
    assert len(lines) == 501
    assert float(lines[-1].split(",")[4]) == res.records["latency"][-1]


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(warmup=0.6)
    with pytest.raises(ValueError):
        SimConfig(num_requests=None)
    with pytest.raises(ValueError):
        SimConfig(metrics_mode="latency")
