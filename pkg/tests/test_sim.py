"""Replay engine: metrics, stranding, bounds, event ordering, determinism."""

import random

import pytest

from lavasim.core import PoolState, ResourceVec, VmRecord
from lavasim.predict import OracleModel
from lavasim.sim import (
    HeterogeneousPool,
    SimConfig,
    Simulator,
    TraceNotSorted,
    clone_pool,
    inflation_stranding,
    metrics_snapshot,
    optimal_empty_bound,
    trace_shape_mix,
)
from lavasim.workload import GeneratorConfig, TraceRecord, generate

CAP = ResourceVec(1000, 4096)


def make_vm(vm_id, shape, create=0.0, exit_time=100.0):
    return VmRecord(id=vm_id, shape=shape, features=None,
                    create_time=create, true_exit_time=exit_time)


def rec(vm_id, create_s, life_s, cpu=1000, mem=4096):
    return TraceRecord(vm_id=vm_id, create_time_s=create_s, lifetime_s=life_s,
                       cpu_m=cpu, mem_mib=mem)


class TestMetricsSnapshot:
    def test_all_empty(self):
        pool = PoolState()
        for _ in range(4):
            pool.add_host(CAP)
        assert metrics_snapshot(pool) == (100.0, 1.0, 1.0)

    def test_hand_computed(self):
        pool = PoolState()
        pool.add_host(CAP)
        pool.add_host(CAP)
        pool.place(make_vm(0, ResourceVec(600, 1024)), 0)
        e, r, d = metrics_snapshot(pool)
        assert e == 50.0
        assert r == pytest.approx(1000 / (400 + 1000))
        assert d == pytest.approx(600 / 1000)

    def test_no_hosts(self):
        assert metrics_snapshot(PoolState()) == (0.0, 0.0, 1.0)


class TestOptimalEmptyBound:
    def test_hand_computed(self):
        pool = PoolState()
        for _ in range(3):
            pool.add_host(CAP)
        pool.place(make_vm(0, ResourceVec(800, 1000)), 0)
        pool.place(make_vm(1, ResourceVec(900, 1000)), 1)
        # free cpu 1300 -> 1 host; free mem 10288 -> 2 hosts; min = 1 of 3
        assert optimal_empty_bound(pool) == pytest.approx(1 / 3)

    def test_empty_pool_bound_is_one(self):
        pool = PoolState()
        for _ in range(5):
            pool.add_host(CAP)
        assert optimal_empty_bound(pool) == 1.0

    def test_heterogeneous_rejected(self):
        pool = PoolState()
        pool.add_host(CAP)
        pool.add_host(ResourceVec(2000, 8192))
        with pytest.raises(HeterogeneousPool):
            optimal_empty_bound(pool)


class TestInflationStranding:
    def test_nothing_fits(self):
        pool = PoolState()
        pool.add_host(CAP)
        pool.place(make_vm(0, ResourceVec(500, 2048)), 0)
        cpu_s, mem_s = inflation_stranding(
            pool, [(ResourceVec(600, 1024), 1.0)], random.Random(0))
        assert (cpu_s, mem_s) == (0.5, 0.5)

    def test_perfectly_packable(self):
        pool = PoolState()
        pool.add_host(CAP)
        cpu_s, mem_s = inflation_stranding(
            pool, [(ResourceVec(500, 2048), 1.0)], random.Random(0))
        assert (cpu_s, mem_s) == (0.0, 0.0)

    def test_does_not_mutate_pool(self):
        pool = PoolState()
        pool.add_host(CAP)
        inflation_stranding(pool, [(ResourceVec(500, 2048), 1.0)], random.Random(0))
        assert pool.hosts[0].used == ResourceVec(0, 0)


class TestClonePool:
    def test_clone_is_independent(self):
        pool = PoolState()
        pool.add_host(CAP)
        pool.place(make_vm(0, ResourceVec(100, 512)), 0)
        clone = clone_pool(pool)
        clone.remove(0)
        assert 0 in pool.vms
        assert pool.hosts[0].used == ResourceVec(100, 512)
        assert clone.hosts[0].used == ResourceVec(0, 0)


class TestTraceShapeMix:
    def test_counts_and_order(self):
        trace = [rec(0, 0, 60, cpu=2000, mem=8192), rec(1, 0, 60),
                 rec(2, 1, 60)]
        mix = trace_shape_mix(trace)
        assert mix == [(ResourceVec(1000, 4096), 2), (ResourceVec(2000, 8192), 1)]


class TestSimulatorBasics:
    def test_unsorted_trace_rejected(self):
        with pytest.raises(TraceNotSorted):
            Simulator([rec(0, 100, 60), rec(1, 0, 60)], 1, CAP,
                      "baseline", OracleModel())

    def test_empty_trace(self):
        result = Simulator([], 2, CAP, "baseline", OracleModel()).run()
        assert result.summary["samples"] == 0

    def test_sequential_vms_fit_one_host(self):
        sim = Simulator([rec(0, 0, 100), rec(1, 200, 100)], 1, CAP,
                        "baseline", OracleModel(), cfg=SimConfig(warmup=False))
        sim.run()
        assert sim.scheduling_failures == 0

    def test_overlapping_vms_overflow_one_host(self):
        sim = Simulator([rec(0, 0, 100), rec(1, 50, 100)], 1, CAP,
                        "baseline", OracleModel(), cfg=SimConfig(warmup=False))
        sim.run()
        assert sim.scheduling_failures == 1

    def test_exit_frees_capacity_before_same_time_arrival(self):
        sim = Simulator([rec(0, 0, 100), rec(1, 100, 100)], 1, CAP,
                        "baseline", OracleModel(), cfg=SimConfig(warmup=False))
        sim.run()
        assert sim.scheduling_failures == 0


class TestWarmup:
    def test_warmup_placements_use_baseline(self):
        trace = [rec(0, 0, 7200), rec(1, 4000, 7200)]
        cfg = SimConfig(warmup=True, warmup_s=3600.0, record_placements=True)
        sim = Simulator(trace, 2, CAP, "lava", OracleModel(), cfg=cfg)
        result = sim.run()
        by_vm = {line.split("\t")[2]: line.split("\t")[4]
                 for line in result.placements}
        assert by_vm == {"0": "baseline", "1": "lava"}

    def test_samples_start_after_warmup(self):
        trace = [rec(0, 0, 7200), rec(1, 4000, 7200)]
        cfg = SimConfig(warmup=True, warmup_s=3600.0)
        result = Simulator(trace, 2, CAP, "baseline", OracleModel(), cfg=cfg).run()
        assert result.series
        assert all(row[0] >= 3600.0 for row in result.series)
        assert result.summary["measure_start_s"] == 3600.0

    def test_no_warmup_samples_from_start(self):
        trace = [rec(0, 0, 7200), rec(1, 4000, 7200)]
        result = Simulator(trace, 2, CAP, "baseline", OracleModel(),
                           cfg=SimConfig(warmup=False)).run()
        assert result.series[0][0] == 0.0


class TestDeterminismAndInvariants:
    @pytest.mark.parametrize("algo", ["baseline", "la-binary", "nilas", "lava"])
    def test_repeat_run_identical(self, algo):
        trace = generate(GeneratorConfig(num_vms=800, seed=11))
        def run():
            return Simulator(trace, 10, ResourceVec(16000, 65536), algo,
                             OracleModel(), cfg=SimConfig(warmup=False)).run()
        a, b = run(), run()
        assert a.series == b.series
        assert a.summary == b.summary

    def test_invariants_hold_throughout(self):
        trace = generate(GeneratorConfig(num_vms=600, seed=3))
        sim = Simulator(trace, 8, ResourceVec(16000, 65536), "lava",
                        OracleModel(),
                        cfg=SimConfig(warmup=False, check_invariants=True))
        sim.run()  # raises on any conservation violation

    def test_summary_matches_series_mean(self):
        trace = generate(GeneratorConfig(num_vms=400, seed=5))
        result = Simulator(trace, 8, ResourceVec(16000, 65536), "nilas",
                           OracleModel(), cfg=SimConfig(warmup=False)).run()
        mean_empty = sum(r[1] for r in result.series) / len(result.series)
        assert result.summary["avg_empty_hosts_pct"] == pytest.approx(mean_empty)
