"""Deterministic event-driven replay engine with warm-up, metric sampling,
defragmentation (including LARS ordering), inflation-based stranding, and the
optimal empty-host bound.
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .core import HostRecord, PoolState, ResourceVec, VmRecord
from .predict import PredictionCache
from .sched import (
    BestFitScheduler,
    LavaConfig,
    NilasConfig,
    Scheduler,
    best_fit_score,
    make_scheduler,
)
from .workload import TraceRecord


class TraceNotSorted(Exception):
    pass


class HeterogeneousPool(Exception):
    pass


# event kind priorities at equal timestamps: free capacity before consuming it
EV_EXIT = 0
EV_MIG_END = 1
EV_DEADLINE = 2
EV_DEFRAG = 3
EV_ARRIVAL = 4
EV_SAMPLE = 5

DAY_S = 86400.0


@dataclass(frozen=True)
class DefragConfig:
    enabled: bool = False
    empty_host_trigger: float = 0.05
    check_interval_s: float = 3600.0
    candidates_per_round: int = 2
    ordering: str = "trace"  # or "lars"
    max_concurrent: int = 3
    migration_s: float = 1200.0

    def __post_init__(self):
        if not 0.0 <= self.empty_host_trigger <= 1.0:
            raise ValueError("empty_host_trigger must be in [0,1]")
        if self.ordering not in ("trace", "lars"):
            raise ValueError(f"unknown defrag ordering {self.ordering!r}")


@dataclass(frozen=True)
class SimConfig:
    warmup: bool = True
    warmup_s: float = 2 * DAY_S
    sample_interval_s: float = 300.0
    check_invariants: bool = False
    record_placements: bool = False
    record_defrag_instances: bool = False
    measure_stranding: bool = False
    stranding_seed: int = 0
    defrag: DefragConfig = DefragConfig()


@dataclass
class MigrationTask:
    vm_id: int
    source_host: int
    target_host: int
    start_time: float
    end_time: float


@dataclass
class DefragInstance:
    """Snapshot of one evacuation round, for paired ordering comparisons."""

    time: float
    candidate_hosts: List[int]
    pool: PoolState


@dataclass
class RunResult:
    series: List[Tuple[float, float, float, float, int, float, float]]
    summary: Dict[str, object]
    placements: List[str] = field(default_factory=list)
    defrag_instances: List[DefragInstance] = field(default_factory=list)


def metrics_snapshot(pool: PoolState) -> Tuple[float, float, float]:
    """(empty_hosts_pct, empty_to_free_ratio, packing_density) on CPU cores."""
    n = len(pool.hosts)
    empty_cpu = free_cpu = 0
    nonempty_used = nonempty_cap = 0
    n_empty = 0
    for host in pool.hosts.values():
        free = host.capacity.cpu_m - host.used.cpu_m
        free_cpu += free
        if host.is_empty():
            n_empty += 1
            empty_cpu += host.capacity.cpu_m
        else:
            nonempty_used += host.used.cpu_m
            nonempty_cap += host.capacity.cpu_m
    empty_pct = 100.0 * n_empty / n if n else 0.0
    ratio = empty_cpu / free_cpu if free_cpu > 0 else 0.0
    density = nonempty_used / nonempty_cap if nonempty_cap > 0 else 1.0
    return empty_pct, ratio, density


def clone_pool(pool: PoolState) -> PoolState:
    clone = PoolState(now=pool.now)
    for host in pool.hosts.values():
        clone.hosts[host.id] = HostRecord(
            id=host.id, capacity=host.capacity, used=host.used, vms=set(host.vms),
            lava_state=host.lava_state, host_class=host.host_class,
            residual_vms=set(host.residual_vms), deadline=host.deadline,
            unavailable_for_scheduling=host.unavailable_for_scheduling,
            incoming=dict(host.incoming))
    for vm in pool.vms.values():
        clone.vms[vm.id] = VmRecord(
            id=vm.id, shape=vm.shape, features=vm.features, create_time=vm.create_time,
            true_exit_time=vm.true_exit_time, host=vm.host,
            predicted_exit_time=vm.predicted_exit_time,
            initial_predicted_exit=vm.initial_predicted_exit,
            lifetime_class=vm.lifetime_class, is_residual=vm.is_residual)
    return clone


def inflation_stranding(pool: PoolState, vm_mix: Sequence[Tuple[ResourceVec, float]],
                        rng: random.Random, consecutive_failures: int = 200
                        ) -> Tuple[float, float]:
    """Greedily pack shapes sampled from the mix until the pool is exhausted;
    the leftover free fractions are the stranded resources."""
    snap = clone_pool(pool)
    shapes = [s for s, _ in vm_mix]
    weights = [w for _, w in vm_mix]
    smallest = min(shapes, key=lambda s: (s.cpu_m, s.mem_mib))

    def place_best_fit(shape: ResourceVec) -> bool:
        best, best_score = None, None
        for host in snap.hosts.values():
            if (host.used + shape).fits_within(host.capacity):
                score = (0 if host.vms or host.used.cpu_m else 1,
                         best_fit_score(host, shape), host.id)
                if best_score is None or score < best_score:
                    best, best_score = host, score
        if best is None:
            return False
        best.used = best.used + shape
        return True

    while True:
        fails = 0
        while fails < consecutive_failures:
            shape = rng.choices(shapes, weights)[0]
            if place_best_fit(shape):
                fails = 0
            else:
                fails += 1
        if not any((h.used + smallest).fits_within(h.capacity) for h in snap.hosts.values()):
            break

    total_cpu = sum(h.capacity.cpu_m for h in snap.hosts.values())
    total_mem = sum(h.capacity.mem_mib for h in snap.hosts.values())
    free_cpu = sum(h.capacity.cpu_m - h.used.cpu_m for h in snap.hosts.values())
    free_mem = sum(h.capacity.mem_mib - h.used.mem_mib for h in snap.hosts.values())
    return free_cpu / total_cpu, free_mem / total_mem


def optimal_empty_bound(pool: PoolState) -> float:
    """Upper bound on the empty-host fraction from aggregate free resources;
    requires a homogeneous pool."""
    hosts = list(pool.hosts.values())
    cap = hosts[0].capacity
    if any(h.capacity != cap for h in hosts):
        raise HeterogeneousPool("optimal bound assumes identical host capacity")
    n = len(hosts)
    free_cpu = sum(cap.cpu_m - h.used.cpu_m for h in hosts)
    free_mem = sum(cap.mem_mib - h.used.mem_mib for h in hosts)
    bound_hosts = min(free_cpu // cap.cpu_m, free_mem // cap.mem_mib)
    return bound_hosts / n


class Simulator:
    """Replays one trace against one (algorithm, predictor) configuration."""

    def __init__(self, trace: Sequence[TraceRecord], num_hosts: int,
                 host_capacity: ResourceVec, algorithm: str, model,
                 nilas_cfg: NilasConfig = NilasConfig(),
                 lava_cfg: LavaConfig = LavaConfig(),
                 cfg: SimConfig = SimConfig()):
        for a, b in zip(trace, trace[1:]):
            if b.create_time_s < a.create_time_s:
                raise TraceNotSorted("trace records must be sorted by create time")
        self.trace = trace
        self.cfg = cfg
        self.pool = PoolState()
        for _ in range(num_hosts):
            self.pool.add_host(host_capacity)
        self.model = model
        cache = PredictionCache()
        if getattr(model, "time_invariant", False):
            cache.refresh_interval_s = math.inf
        self.active = make_scheduler(algorithm, model, nilas_cfg, lava_cfg, cache)
        self.warmup_sched: Scheduler = BestFitScheduler()
        self.algorithm = algorithm
        # event heap: (time, priority, seq, payload)
        self._heap: List[Tuple[float, int, int, object]] = []
        self._seq = 0
        # defrag state
        self._mig_active: Dict[int, MigrationTask] = {}
        self._mig_queue: List[int] = []
        self._pending_exit: set = set()
        self._candidates: set = set()
        self.migrations_done = 0
        self.migrations_saved = 0
        self.migration_deferrals = 0
        self.scheduling_failures = 0
        self.placements: List[str] = []
        self.defrag_instances: List[DefragInstance] = []
        if hasattr(self.active, "deadline_armed"):
            self.active.deadline_armed = self._on_deadline_armed

    # -- event plumbing --------------------------------------------------

    def _push(self, time: float, priority: int, payload) -> None:
        heapq.heappush(self._heap, (time, priority, self._seq, payload))
        self._seq += 1

    def _on_deadline_armed(self, host: HostRecord) -> None:
        self._push(host.deadline, EV_DEADLINE, ("deadline", host.id))

    # -- main loop -------------------------------------------------------

    def run(self) -> RunResult:
        trace = self.trace
        if not trace:
            return self._empty_result()
        t0 = trace[0].create_time_s
        t_end = trace[-1].create_time_s
        measure_start = t0 + self.cfg.warmup_s if self.cfg.warmup else t0

        for rec in trace:
            self._push(rec.create_time_s, EV_ARRIVAL, ("arrival", rec))
        t = t0
        while t <= t_end:
            self._push(t, EV_SAMPLE, ("sample",))
            t += self.cfg.sample_interval_s
        if self.cfg.defrag.enabled:
            t = t0 + self.cfg.defrag.check_interval_s
            while t <= t_end:
                self._push(t, EV_DEFRAG, ("defrag",))
                t += self.cfg.defrag.check_interval_s

        series: List[Tuple[float, float, float, float, int, float, float]] = []
        pool = self.pool
        while self._heap:
            time, _, _, payload = heapq.heappop(self._heap)
            pool.now = time
            kind = payload[0]
            if kind == "arrival":
                self._handle_arrival(payload[1], time, measure_start)
            elif kind == "exit":
                self._handle_exit(payload[1], time)
            elif kind == "mig_end":
                self._handle_migration_end(payload[1], time)
            elif kind == "deadline":
                host = pool.hosts[payload[1]]
                self.active.on_deadline(pool, host, time)
            elif kind == "defrag":
                self._handle_defrag_check(time)
            elif kind == "sample":
                if time >= measure_start:
                    e, r, d = metrics_snapshot(pool)
                    util_c, util_m = self._utilization()
                    series.append((time, e, r, d, len(pool.vms), util_c, util_m))
            if self.cfg.check_invariants:
                pool.check_invariants()

        return self._build_result(series, measure_start, t_end)

    def _utilization(self) -> Tuple[float, float]:
        cap_c = sum(h.capacity.cpu_m for h in self.pool.hosts.values())
        cap_m = sum(h.capacity.mem_mib for h in self.pool.hosts.values())
        used_c = sum(h.used.cpu_m for h in self.pool.hosts.values())
        used_m = sum(h.used.mem_mib for h in self.pool.hosts.values())
        return used_c / cap_c, used_m / cap_m

    def _handle_arrival(self, rec: TraceRecord, now: float, measure_start: float) -> None:
        vm = VmRecord(id=rec.vm_id, shape=rec.shape(), features=rec.feature_vec(),
                      create_time=rec.create_time_s,
                      true_exit_time=rec.create_time_s + rec.lifetime_s)
        self.active.on_arrival(vm, now)
        selector = self.warmup_sched if (self.cfg.warmup and now < measure_start) else self.active
        host_id = selector.select_host(vm, self.pool, now)
        if host_id is None:
            self.scheduling_failures += 1
            return
        self.pool.place(vm, host_id)
        self.active.after_place(self.pool, vm, self.pool.hosts[host_id], now)
        self._push(vm.true_exit_time, EV_EXIT, ("exit", vm.id))
        if self.cfg.record_placements:
            self.placements.append(f"{now:.0f}\tplace\t{vm.id}\t{host_id}\t{selector.name}")

    def _handle_exit(self, vm_id: int, now: float) -> None:
        if vm_id in self._mig_active:
            # started migrations run to completion; the exit lands right after
            self._pending_exit.add(vm_id)
            return
        vm = self.pool.vms.get(vm_id)
        if vm is None or vm.host is None:
            return
        host = self.pool.hosts[vm.host]
        self.pool.remove(vm_id)
        self.active.on_exit(self.pool, vm, host, now)
        if host.unavailable_for_scheduling and host.is_empty():
            host.unavailable_for_scheduling = False
            self._candidates.discard(host.id)
        if self._mig_queue and len(self._mig_active) < self.cfg.defrag.max_concurrent:
            self._fill_migration_slots(now)

    # -- defragmentation -------------------------------------------------

    def _handle_defrag_check(self, now: float) -> None:
        if self._mig_queue or self._mig_active or self._candidates:
            return  # previous round still draining
        empty_frac = sum(1 for h in self.pool.hosts.values() if h.is_empty()) / len(self.pool.hosts)
        if empty_frac >= self.cfg.defrag.empty_host_trigger:
            return
        candidates = select_candidates(self.pool, self.cfg.defrag.candidates_per_round)
        if not candidates:
            return
        if self.cfg.record_defrag_instances:
            self.defrag_instances.append(
                DefragInstance(time=now, candidate_hosts=list(candidates),
                               pool=clone_pool(self.pool)))
        for hid in candidates:
            host = self.pool.hosts[hid]
            host.unavailable_for_scheduling = True
            self._candidates.add(hid)
            self._mig_queue.extend(
                order_evacuation(self.pool, host, self.cfg.defrag.ordering, self.model, now))
        self._fill_migration_slots(now)

    def _fill_migration_slots(self, now: float) -> None:
        attempts = len(self._mig_queue)
        while (self._mig_queue and attempts > 0
               and len(self._mig_active) < self.cfg.defrag.max_concurrent):
            attempts -= 1
            vm_id = self._mig_queue.pop(0)
            vm = self.pool.vms.get(vm_id)
            if vm is None or vm.host is None:
                self.migrations_saved += 1  # exited before its migration started
                continue
            # migration placement uses the current reprediction, not the
            # arrival-time one (LA-Binary keeps its one-shot class)
            self.active.on_arrival(vm, now)
            target = self.active.select_host(vm, self.pool, now)
            if target is None:
                self._mig_queue.append(vm_id)
                self.migration_deferrals += 1
                continue
            self.pool.reserve_incoming(vm, target)
            task = MigrationTask(vm_id=vm_id, source_host=vm.host, target_host=target,
                                 start_time=now, end_time=now + self.cfg.defrag.migration_s)
            self._mig_active[vm_id] = task
            self._push(task.end_time, EV_MIG_END, ("mig_end", vm_id))

    def _handle_migration_end(self, vm_id: int, now: float) -> None:
        task = self._mig_active.pop(vm_id)
        vm = self.pool.vms[vm_id]
        source = self.pool.hosts[task.source_host]
        self.pool.commit_incoming(vm, task.target_host)
        self.migrations_done += 1
        self.active.on_exit(self.pool, vm, source, now)
        self.active.after_place(self.pool, vm, self.pool.hosts[task.target_host], now)
        if source.unavailable_for_scheduling and source.is_empty():
            source.unavailable_for_scheduling = False
            self._candidates.discard(source.id)
        if vm_id in self._pending_exit:
            self._pending_exit.discard(vm_id)
            self._handle_exit(vm_id, now)
        self._fill_migration_slots(now)

    # -- results ---------------------------------------------------------

    def _empty_result(self) -> RunResult:
        e, r, d = metrics_snapshot(self.pool)
        return RunResult(series=[(0.0, e, r, d, 0, 0.0, 0.0)],
                         summary=self._summary([], 0.0, 0.0))

    def _build_result(self, series, measure_start, t_end) -> RunResult:
        return RunResult(series=series, summary=self._summary(series, measure_start, t_end),
                         placements=self.placements, defrag_instances=self.defrag_instances)

    def _summary(self, series, measure_start, t_end) -> Dict[str, object]:
        def avg(idx):
            return sum(row[idx] for row in series) / len(series) if series else 0.0

        summary = {
            "algorithm": self.algorithm,
            "measure_start_s": measure_start,
            "measure_end_s": t_end,
            "samples": len(series),
            "avg_empty_hosts_pct": avg(1),
            "avg_empty_to_free_ratio": avg(2),
            "avg_packing_density": avg(3),
            "avg_util_cpu": avg(5),
            "avg_util_mem": avg(6),
            "scheduling_failures": self.scheduling_failures,
            "migrations": self.migrations_done,
            "migrations_saved": self.migrations_saved,
            "migration_deferrals": self.migration_deferrals,
        }
        if self.cfg.measure_stranding and self.trace:
            mix = trace_shape_mix(self.trace)
            rng = random.Random(self.cfg.stranding_seed)
            cpu_s, mem_s = inflation_stranding(self.pool, mix, rng)
            summary["stranded_cpu_frac"] = cpu_s
            summary["stranded_mem_frac"] = mem_s
        return summary


def trace_shape_mix(trace: Sequence[TraceRecord]) -> List[Tuple[ResourceVec, float]]:
    counts: Dict[ResourceVec, int] = {}
    for rec in trace:
        shape = rec.shape()
        counts[shape] = counts.get(shape, 0) + 1
    return sorted(counts.items(), key=lambda kv: (kv[0].cpu_m, kv[0].mem_mib))


def select_candidates(pool: PoolState, count: int) -> List[int]:
    """Evacuation candidates: fewest VMs first, then most free capacity."""
    ranked = sorted(
        (h for h in pool.hosts.values()
         if h.vms and not h.incoming and not h.unavailable_for_scheduling),
        key=lambda h: (len(h.vms),
                       -(h.capacity.cpu_m - h.used.cpu_m) / h.capacity.cpu_m
                       - (h.capacity.mem_mib - h.used.mem_mib) / h.capacity.mem_mib,
                       h.id))
    return [h.id for h in ranked[:count]]


def lars_order(pool: PoolState, host: HostRecord, model, now: float) -> List[int]:
    """Longest repredicted remaining lifetime first; ties by vm id."""
    return sorted(host.vms,
                  key=lambda vid: (-model.remaining(pool.vms[vid], now), vid))


def order_evacuation(pool: PoolState, host: HostRecord, ordering: str, model,
                     now: float) -> List[int]:
    if ordering == "lars":
        return lars_order(pool, host, model, now)
    # trace order: arrival order of the VMs on the host
    return sorted(host.vms, key=lambda vid: (pool.vms[vid].create_time, vid))
