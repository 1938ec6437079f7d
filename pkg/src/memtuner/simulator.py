"""Closed-form cluster simulator used as the objective for every tuner.

Each stage's time is waves x base task time, inflated by resource
contention, GC overhead, shuffle spill, and cache-miss recomputation.
The response surface deliberately reproduces the empirical behaviors the
tuners rely on: oversized pools fail containers, an Old generation
smaller than the long-lived data inflates GC, shuffle beyond half of
Eden inflates GC, and extra containers help until CPU or disk saturate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .core import (
    ClusterSpec,
    MemoryLayout,
    coerce_fields,
    parse_kv,
    to_kv,
    validate_layout,
)
from .profiles import (
    CacheSample,
    GcEvent,
    ProfileEvent,
    ResourceSample,
    ShuffleSample,
    TaskEvent,
)

# Response-surface constants. Values are model choices, grouped here so
# sensitivity experiments can vary them in one place.
OOM_OCCUPANCY_FRAC = 0.95      # deterministic abort above this heap fill
FAILURE_WINDOW_FRAC = 0.15     # occupancy span over which failures ramp to 1
OLD_OVERFLOW_GC_COEFF = 0.8    # long-lived data not fitting in Old
YOUNG_CHURN_GC_COEFF = 0.1     # task churn vs Eden size
SHUFFLE_OVERLOAD_GC_COEFF = 0.5  # shuffle beyond its half-of-Eden budget
GC_OVERHEAD_CAP = 0.9
SPILL_SLOWDOWN_COEFF = 0.3     # extra time when shuffle spills to disk
EDEN_SHUFFLE_BUDGET = 0.5      # share of Eden shuffle may use cheaply
FAILURE_RUNTIME_SURCHARGE = 0.25  # runtime share added per failure event
ABORT_FAILURE_LIMIT = 4        # failures on one container that abort the run

_HIT_DENOMINATOR = 10**9  # partition count used to encode hit ratios
_FULL_GC_EVENTS = 8
_UNMANAGED_JITTER = 0.02


@dataclass(frozen=True)
class StageSpec:
    tasks: int
    base_task_seconds: float
    uses_cache: bool = False
    uses_shuffle: bool = False

    def __post_init__(self) -> None:
        if self.tasks < 1:
            raise ValueError(f"tasks must be >= 1, got {self.tasks}")
        if not self.base_task_seconds > 0:
            raise ValueError("base_task_seconds must be > 0")


@dataclass(frozen=True)
class WorkloadSpec:
    stages: tuple[StageSpec, ...]
    code_overhead: float
    unmanaged_per_task: float
    cache_demand_total: float
    recompute_factor: float
    shuffle_per_task: float
    cpu_demand_per_task: float  # core fraction per running task
    io_demand_per_task: float   # disk-channel fraction per running task
    gc_base_overhead: float

    def __post_init__(self) -> None:
        if not self.stages:
            raise ValueError("a workload needs at least one stage")
        for name in (
            "code_overhead",
            "unmanaged_per_task",
            "cache_demand_total",
            "recompute_factor",
            "shuffle_per_task",
            "io_demand_per_task",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 < self.cpu_demand_per_task <= 1.0:
            raise ValueError("cpu_demand_per_task must be in (0,1]")
        if not 0.0 <= self.io_demand_per_task <= 1.0:
            raise ValueError("io_demand_per_task must be in [0,1]")
        if not 0.0 <= self.gc_base_overhead <= GC_OVERHEAD_CAP:
            raise ValueError(f"gc_base_overhead must be in [0,{GC_OVERHEAD_CAP}]")


@dataclass(frozen=True)
class Outcome:
    runtime: float
    gc_overhead: float
    cache_hit_ratio: float
    container_failures: int
    aborted: bool

    def record(self) -> str:
        """Canonical one-line serialization (bit-for-bit reproducible)."""
        return (
            f"runtime={self.runtime!r} gc_overhead={self.gc_overhead!r} "
            f"cache_hit_ratio={self.cache_hit_ratio!r} "
            f"container_failures={self.container_failures} aborted={self.aborted}"
        )


def major_pool_for(workload: WorkloadSpec) -> str:
    """The dominant capacity pool: cache when the workload caches at all."""
    return "cache" if workload.cache_demand_total > 0 else "shuffle"


@dataclass(frozen=True)
class _Derived:
    heap: float
    old: float
    eden: float
    cache_store: float  # per container
    hit_ratio: float
    shuffle_allotment: float  # per task
    occupancy: float
    gc_overhead: float
    slowdown: float


def _derive(workload: WorkloadSpec, layout: MemoryLayout, cluster: ClusterSpec) -> _Derived:
    n = layout.containers_per_node
    p = layout.task_concurrency
    heap = cluster.node_heap / n
    nr = layout.new_ratio
    sr = layout.survivor_ratio
    old = heap * nr / (nr + 1)
    eden = heap / (nr + 1) * (sr - 2) / sr

    nodes = cluster.nodes
    demand = workload.cache_demand_total
    cache_store = min(layout.cache_capacity_frac * heap, demand / (nodes * n)) if demand > 0 else 0.0
    hit_ratio = min(1.0, nodes * n * cache_store / demand) if demand > 0 else 1.0
    shuffle_allotment = layout.shuffle_capacity_frac * heap / p

    code = workload.code_overhead
    unmanaged = workload.unmanaged_per_task
    occupancy = code + p * unmanaged + cache_store

    gc = workload.gc_base_overhead
    gc += OLD_OVERFLOW_GC_COEFF * max(0.0, (code + cache_store + p * unmanaged) / old - 1.0)
    gc += YOUNG_CHURN_GC_COEFF * (p * unmanaged) / eden
    shuffle_in_memory = p * min(shuffle_allotment, workload.shuffle_per_task)
    gc += SHUFFLE_OVERLOAD_GC_COEFF * max(
        0.0, shuffle_in_memory / (EDEN_SHUFFLE_BUDGET * eden) - 1.0
    )
    gc = min(GC_OVERHEAD_CAP, gc)

    s_cpu = max(1.0, n * p * workload.cpu_demand_per_task / cluster.cores_per_node)
    s_io = max(1.0, n * p * workload.io_demand_per_task / cluster.disk_channels)

    return _Derived(
        heap=heap,
        old=old,
        eden=eden,
        cache_store=cache_store,
        hit_ratio=hit_ratio,
        shuffle_allotment=shuffle_allotment,
        occupancy=occupancy,
        gc_overhead=gc,
        slowdown=max(s_cpu, s_io),
    )


def _base_runtime(workload: WorkloadSpec, layout: MemoryLayout, cluster: ClusterSpec, d: _Derived) -> float:
    n = layout.containers_per_node
    p = layout.task_concurrency
    slots = cluster.nodes * n * p
    total = 0.0
    for stage in workload.stages:
        waves = -(-stage.tasks // slots)
        time = waves * stage.base_task_seconds * d.slowdown * (1.0 + d.gc_overhead)
        if stage.uses_shuffle and workload.shuffle_per_task > 0:
            time *= 1.0 + SPILL_SLOWDOWN_COEFF * max(
                0.0, 1.0 - d.shuffle_allotment / workload.shuffle_per_task
            )
        if stage.uses_cache:
            time *= 1.0 + workload.recompute_factor * (1.0 - d.hit_ratio)
        total += time
    return total


def simulate(
    workload: WorkloadSpec,
    layout: MemoryLayout,
    cluster: ClusterSpec,
    mode: str = "deterministic",
    seed: int = 0,
) -> Outcome:
    """Run the closed-form model; identical inputs give identical outcomes.

    Deterministic mode aborts outright when the occupancy crosses the OOM
    line. Stochastic mode instead draws per-(stage, container) failures
    with probability ramping over the failure window; the draws come from
    `default_rng(seed)` consumed stage-major then container-minor, and a
    container failing `ABORT_FAILURE_LIMIT` times aborts the run.
    """
    if mode not in ("deterministic", "stochastic"):
        raise ValueError(f"mode must be deterministic|stochastic, got {mode!r}")
    validate_layout(layout, cluster)
    d = _derive(workload, layout, cluster)
    runtime = _base_runtime(workload, layout, cluster, d)

    if mode == "deterministic":
        aborted = d.occupancy > OOM_OCCUPANCY_FRAC * d.heap
        failures = 0
        if aborted:
            # the failed attempts before giving up still cost wall time
            runtime *= 1.0 + FAILURE_RUNTIME_SURCHARGE * ABORT_FAILURE_LIMIT
    else:
        prob = (d.occupancy - OOM_OCCUPANCY_FRAC * d.heap) / (FAILURE_WINDOW_FRAC * d.heap)
        prob = min(1.0, max(0.0, prob))
        rng = np.random.default_rng(seed)
        containers = cluster.nodes * layout.containers_per_node
        counts = [0] * containers
        for _stage in workload.stages:
            draws = rng.uniform(size=containers)
            for c in range(containers):
                if draws[c] < prob:
                    counts[c] += 1
        failures = sum(counts)
        aborted = any(c >= ABORT_FAILURE_LIMIT for c in counts)
        runtime *= 1.0 + FAILURE_RUNTIME_SURCHARGE * failures

    return Outcome(
        runtime=runtime,
        gc_overhead=d.gc_overhead,
        cache_hit_ratio=d.hit_ratio,
        container_failures=failures,
        aborted=aborted,
    )


# --- exhaustive search ------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Default pattern: four values per axis; the per-node task budget is
    divided by the container count (floored, at least one)."""

    containers: tuple[int, ...] = (1, 2, 3, 4)
    tasks_per_node: tuple[int, ...] = (2, 4, 6, 8)
    major_fracs: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)
    new_ratios: tuple[int, ...] = (1, 3, 5, 7)
    minor_frac: float = 0.1


def grid_layouts(cluster: ClusterSpec, major_pool: str, grid: GridSpec | None = None) -> list[MemoryLayout]:
    grid = grid or GridSpec()
    pairs = dict.fromkeys(
        (n, max(1, tpn // n)) for n in grid.containers for tpn in grid.tasks_per_node
    )
    layouts = []
    for n, p in pairs:
        for frac in grid.major_fracs:
            if major_pool == "cache":
                cache, shuffle = frac, grid.minor_frac
            else:
                cache, shuffle = grid.minor_frac, frac
            for nr in grid.new_ratios:
                layouts.append(
                    MemoryLayout(
                        containers_per_node=n,
                        heap=cluster.node_heap // n,
                        task_concurrency=p,
                        cache_capacity_frac=cache,
                        shuffle_capacity_frac=shuffle,
                        new_ratio=nr,
                    )
                )
    return layouts


def exhaustive_grid(
    workload: WorkloadSpec, cluster: ClusterSpec, grid: GridSpec | None = None
) -> list[tuple[MemoryLayout, Outcome]]:
    """Deterministically evaluate every grid combination, best runtime first."""
    layouts = grid_layouts(cluster, major_pool_for(workload), grid)
    rows = [(layout, simulate(workload, layout, cluster)) for layout in layouts]
    order = sorted(range(len(rows)), key=lambda i: (rows[i][1].runtime, i))
    return [rows[i] for i in order]


_GRID_HEADER = (
    "containers_per_node,heap,task_concurrency,cache_capacity_frac,"
    "shuffle_capacity_frac,new_ratio,survivor_ratio,runtime,gc_overhead,"
    "cache_hit_ratio,container_failures,aborted"
)


def grid_to_csv(rows: list[tuple[MemoryLayout, Outcome]]) -> str:
    lines = [_GRID_HEADER]
    for layout, outcome in rows:
        lines.append(
            f"{layout.containers_per_node},{layout.heap},{layout.task_concurrency},"
            f"{layout.cache_capacity_frac!r},{layout.shuffle_capacity_frac!r},"
            f"{layout.new_ratio},{layout.survivor_ratio},"
            f"{outcome.runtime!r},{outcome.gc_overhead!r},{outcome.cache_hit_ratio!r},"
            f"{outcome.container_failures},{outcome.aborted}"
        )
    return "\n".join(lines) + "\n"


# --- synthetic profiles -----------------------------------------------------


def synth_profile(
    workload: WorkloadSpec,
    layout: MemoryLayout,
    cluster: ClusterSpec,
    seed: int = 0,
) -> list[ProfileEvent]:
    """Emit the event stream a profiler would record for this run.

    The stream round-trips through statistics derivation: code overhead
    comes back exactly, per-task unmanaged memory within the small jitter
    applied to full-GC snapshots, the cache store and hit ratio as
    simulated. Full-GC events appear when the live set exceeds the Old
    pool, and also when one task wave overflows Eden (task churn forces
    tenuring); cache samples appear only when the layout grants cache.
    """
    d = _derive(workload, layout, cluster)
    outcome = simulate(workload, layout, cluster)
    if outcome.aborted:
        raise ValueError("cannot profile an aborted run; pick a safer layout")
    rng = np.random.default_rng(seed)
    n = layout.containers_per_node
    p = layout.task_concurrency

    cpu_pct = 100.0 * min(1.0, n * p * workload.cpu_demand_per_task / cluster.cores_per_node)
    disk_pct = 100.0 * min(1.0, n * p * workload.io_demand_per_task / cluster.disk_channels)
    shuffle_stages = [s for s in workload.stages if s.uses_shuffle]
    shuffle_used = p * min(d.shuffle_allotment, workload.shuffle_per_task)
    total_shuffle = sum(s.tasks * workload.shuffle_per_task for s in shuffle_stages)
    if total_shuffle > 0:
        spill_frac = max(0.0, 1.0 - d.shuffle_allotment / workload.shuffle_per_task)
        spill_frac = min(spill_frac, 0.95)  # keeps the derived fraction < 1
    else:
        spill_frac = 0.0

    events: list[ProfileEvent] = []
    for node in range(cluster.nodes):
        for c in range(n):
            cid = f"n{node:02d}c{c:02d}"
            rss = d.occupancy * 1.05
            events.append(ResourceSample(0, cid, cpu_pct, disk_pct, rss))
            events.append(
                GcEvent(0, cid, "young", workload.code_overhead, 0.0, d.eden, d.old)
            )
            for j in range(p):
                events.append(TaskEvent(100 * (j + 1), cid, f"{cid}-t{j}", "start", j + 1))
            cache_now = 0.0
            if d.cache_store > 0:
                cache_now = d.cache_store
                events.append(
                    CacheSample(
                        1000,
                        cid,
                        d.cache_store,
                        _HIT_DENOMINATOR,
                        int(round(d.hit_ratio * _HIT_DENOMINATOR)),
                    )
                )
            shuffle_now = 0.0
            if total_shuffle > 0:
                shuffle_now = shuffle_used
                events.append(
                    ShuffleSample(
                        1100, cid, shuffle_used, spill_frac * total_shuffle, total_shuffle
                    )
                )
            events.append(ResourceSample(1500, cid, cpu_pct, disk_pct, rss))
            full_gc_pressure = (
                d.occupancy > d.old or p * workload.unmanaged_per_task > d.eden
            )
            if full_gc_pressure:
                for k in range(_FULL_GC_EVENTS):
                    jitter = 1.0 + rng.uniform(-_UNMANAGED_JITTER, _UNMANAGED_JITTER)
                    live = (
                        workload.code_overhead
                        + cache_now
                        + shuffle_now
                        + p * workload.unmanaged_per_task * jitter
                    )
                    events.append(
                        GcEvent(
                            2000 + 200 * k,
                            cid,
                            "full",
                            live,
                            min(live, d.old),
                            d.eden,
                            d.old,
                        )
                    )
            events.append(ResourceSample(5000, cid, cpu_pct, disk_pct, rss))
            for j in range(p):
                events.append(TaskEvent(6000 + 100 * j, cid, f"{cid}-t{j}", "end", p - 1 - j))
    return events


# --- workload config files --------------------------------------------------


def workload_from_kv(text: str) -> WorkloadSpec:
    """Read a workload from key-value text; stages use dotted keys like
    `stage.0.tasks = 64`."""
    raw = parse_kv(text)
    flat = {k: v for k, v in raw.items() if not k.startswith("stage.")}
    staged: dict[int, dict[str, str]] = {}
    for key, value in raw.items():
        if not key.startswith("stage."):
            continue
        _, idx, field_name = key.split(".", 2)
        staged.setdefault(int(idx), {})[field_name] = value
    stages = tuple(
        coerce_fields(StageSpec, staged[i]) for i in sorted(staged)
    )
    spec = coerce_fields(_WorkloadFlat, flat)
    return WorkloadSpec(stages=stages, **{f.name: getattr(spec, f.name) for f in fields(_WorkloadFlat)})


def workload_to_kv(workload: WorkloadSpec) -> str:
    lines = []
    for f in fields(WorkloadSpec):
        if f.name == "stages":
            continue
        lines.append(f"{f.name} = {getattr(workload, f.name)}")
    for i, stage in enumerate(workload.stages):
        for sf in fields(StageSpec):
            value = getattr(stage, sf.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"stage.{i}.{sf.name} = {value}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class _WorkloadFlat:
    code_overhead: float
    unmanaged_per_task: float
    cache_demand_total: float
    recompute_factor: float
    shuffle_per_task: float
    cpu_demand_per_task: float
    io_demand_per_task: float
    gc_base_overhead: float


__all__ = [
    "StageSpec",
    "WorkloadSpec",
    "Outcome",
    "GridSpec",
    "simulate",
    "exhaustive_grid",
    "grid_layouts",
    "grid_to_csv",
    "synth_profile",
    "major_pool_for",
    "workload_from_kv",
    "workload_to_kv",
]
