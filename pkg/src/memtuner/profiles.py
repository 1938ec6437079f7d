"""Profile ingestion: parse a profiled run and derive its memory statistics.

A profile is UTF-8 text, one JSON object per line. Every record carries
`ts` (milliseconds), `container`, `kind`, plus the kind-specific fields
below. Unknown fields are ignored; unknown kinds are rejected. Malformed
profiles fail loudly: tuning from corrupt data is worse than no answer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields, replace
from typing import IO, Iterable, Union

from .core import (
    NR_MAX,
    ClusterSpec,
    InvariantViolation,
    MemoryLayout,
    enumerate_container_configs,
)


class ProfileParseError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class EmptyProfileError(ValueError):
    pass


class NoFullGcError(ValueError):
    """No usable full-GC observation; the caller should re-profile.

    Deriving the per-task unmanaged estimate from Old-pool occupancy is
    deliberately not attempted: it over-estimates by orders of magnitude.
    """


class MissingResourceSamplesError(ValueError):
    pass


# --- event records ---------------------------------------------------------


@dataclass(frozen=True)
class GcEvent:
    ts: int
    container: str
    gc_type: str  # "young" | "full"
    heap_used_after: float
    old_used_after: float
    eden_capacity: float
    old_capacity: float

    KIND = "gc_event"


@dataclass(frozen=True)
class ResourceSample:
    ts: int
    container: str
    cpu_percent: float
    disk_percent: float
    rss: float

    KIND = "resource_sample"


@dataclass(frozen=True)
class CacheSample:
    ts: int
    container: str
    cache_used: float
    partitions_requested: int
    partitions_hit: int

    KIND = "cache_sample"


@dataclass(frozen=True)
class ShuffleSample:
    ts: int
    container: str
    shuffle_used: float
    spilled_bytes: float
    total_shuffle_bytes: float

    KIND = "shuffle_sample"


@dataclass(frozen=True)
class TaskEvent:
    ts: int
    container: str
    task_id: str
    action: str  # "start" | "end"
    running_tasks_after: int

    KIND = "task_event"


ProfileEvent = Union[GcEvent, ResourceSample, CacheSample, ShuffleSample, TaskEvent]

_EVENT_TYPES = {cls.KIND: cls for cls in (GcEvent, ResourceSample, CacheSample, ShuffleSample, TaskEvent)}
_NONNEGATIVE = {
    "heap_used_after",
    "old_used_after",
    "eden_capacity",
    "old_capacity",
    "rss",
    "cache_used",
    "partitions_requested",
    "partitions_hit",
    "shuffle_used",
    "spilled_bytes",
    "total_shuffle_bytes",
    "running_tasks_after",
}


@dataclass(frozen=True)
class Profile:
    """Events grouped by container, each group time-ordered."""

    events_by_container: dict[str, tuple[ProfileEvent, ...]]

    def containers(self) -> list[str]:
        return list(self.events_by_container)

    def all_events(self, kind=None) -> list[ProfileEvent]:
        out = []
        for events in self.events_by_container.values():
            for ev in events:
                if kind is None or isinstance(ev, kind):
                    out.append(ev)
        return out

    def per_container(self, kind) -> dict[str, list[ProfileEvent]]:
        return {
            cid: [ev for ev in events if isinstance(ev, kind)]
            for cid, events in self.events_by_container.items()
        }


def event_to_record(ev: ProfileEvent) -> dict:
    rec = {"ts": ev.ts, "container": ev.container, "kind": ev.KIND}
    for f in fields(ev):
        if f.name not in ("ts", "container"):
            rec[f.name] = getattr(ev, f.name)
    return rec


def events_to_jsonl(events: Iterable[ProfileEvent]) -> str:
    return "".join(json.dumps(event_to_record(ev), sort_keys=True) + "\n" for ev in events)


def _parse_line(line_no: int, obj: dict) -> ProfileEvent:
    kind = obj.get("kind")
    if kind not in _EVENT_TYPES:
        raise ProfileParseError(line_no, f"unknown kind {kind!r}")
    cls = _EVENT_TYPES[kind]
    kwargs = {}
    for f in fields(cls):
        if f.name not in obj:
            raise ProfileParseError(line_no, f"missing field {f.name!r}")
        value = obj[f.name]
        try:
            if f.type in ("int", int):
                value = int(value)
            elif f.type in ("float", float):
                value = float(value)
            else:
                value = str(value)
        except (TypeError, ValueError):
            raise ProfileParseError(line_no, f"bad value for {f.name!r}: {value!r}")
        if f.name in _NONNEGATIVE and value < 0:
            raise ProfileParseError(line_no, f"{f.name} must be >= 0, got {value}")
        kwargs[f.name] = value
    if kwargs["ts"] < 0:
        raise ProfileParseError(line_no, f"ts must be >= 0, got {kwargs['ts']}")
    ev = cls(**kwargs)
    if isinstance(ev, GcEvent) and ev.gc_type not in ("young", "full"):
        raise ProfileParseError(line_no, f"gc_type must be young|full, got {ev.gc_type!r}")
    if isinstance(ev, TaskEvent) and ev.action not in ("start", "end"):
        raise ProfileParseError(line_no, f"action must be start|end, got {ev.action!r}")
    if isinstance(ev, ResourceSample):
        for name in ("cpu_percent", "disk_percent"):
            v = getattr(ev, name)
            if not 0.0 <= v <= 100.0:
                raise ProfileParseError(line_no, f"{name} out of [0,100], got {v}")
    if isinstance(ev, CacheSample) and ev.partitions_hit > ev.partitions_requested:
        raise ProfileParseError(
            line_no,
            f"partitions_hit {ev.partitions_hit} exceeds requested {ev.partitions_requested}",
        )
    return ev


def parse_profile(source: Union[str, bytes, IO]) -> Profile:
    """Parse a line-delimited profile stream into a `Profile`.

    Containers may interleave freely, but timestamps must be
    non-decreasing within each container.
    """
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    grouped: dict[str, list[ProfileEvent]] = {}
    for line_no, raw in enumerate(source.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProfileParseError(line_no, f"invalid JSON: {exc.msg}") from None
        if not isinstance(obj, dict):
            raise ProfileParseError(line_no, "record is not an object")
        ev = _parse_line(line_no, obj)
        group = grouped.setdefault(ev.container, [])
        if group and ev.ts < group[-1].ts:
            raise ProfileParseError(
                line_no, f"non-monotone timestamp in container {ev.container!r}"
            )
        group.append(ev)
    if not grouped:
        raise EmptyProfileError("profile contains no events")
    ordered = {cid: tuple(grouped[cid]) for cid in sorted(grouped)}
    return Profile(ordered)


# --- statistics ------------------------------------------------------------


@dataclass(frozen=True)
class ProfileStats:
    """The per-run quantities every tuner consumes."""

    containers_per_node: int
    heap: float
    cpu_avg: float
    disk_avg: float
    code_overhead: float
    cache_used_peak: float
    shuffle_per_task: float
    unmanaged_per_task: float
    task_concurrency: int
    cache_hit_ratio: float
    spill_fraction: float

    def __post_init__(self) -> None:
        if self.code_overhead + self.unmanaged_per_task > self.heap:
            raise InvariantViolation(
                "code_overhead + unmanaged_per_task exceeds the profiled heap; "
                "the profiled run could not have executed a task"
            )
        if not 0.0 < self.cache_hit_ratio <= 1.0:
            raise InvariantViolation(
                f"cache_hit_ratio out of (0,1], got {self.cache_hit_ratio}"
            )
        if not 0.0 <= self.spill_fraction < 1.0:
            raise InvariantViolation(
                f"spill_fraction out of [0,1), got {self.spill_fraction}"
            )


def percentile_nearest_rank(values, q: float) -> float:
    """Nearest-rank percentile: the element at rank ceil(q * len), 1-indexed.

    Deterministic on small samples, unlike interpolating estimators.
    """
    values = list(values)
    if not values:
        raise ValueError("percentile of an empty sequence")
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q out of (0,1], got {q}")
    ordered = sorted(values)
    rank = math.ceil(q * len(ordered))
    return ordered[rank - 1]


def _latest_at_or_before(samples, ts, attr, default=0.0):
    value = default
    for s in samples:
        if s.ts > ts:
            break
        value = getattr(s, attr)
    return value


def _running_tasks_at(task_events, ts) -> int:
    return int(_latest_at_or_before(task_events, ts, "running_tasks_after", 0))


def estimate_unmanaged(profile: Profile, code_overhead: float) -> float:
    """Per-task unmanaged memory from heap usage right after full GCs.

    The heap left after a full GC, minus code overhead and the cache and
    shuffle usage at that instant, is live task memory; dividing by the
    tasks running then gives a per-task figure. Returns the 90th
    percentile over all such observations.
    """
    values = []
    for cid, events in profile.events_by_container.items():
        gcs = [ev for ev in events if isinstance(ev, GcEvent) and ev.gc_type == "full"]
        if not gcs:
            continue
        tasks = [ev for ev in events if isinstance(ev, TaskEvent)]
        caches = [ev for ev in events if isinstance(ev, CacheSample)]
        shuffles = [ev for ev in events if isinstance(ev, ShuffleSample)]
        for gc in gcs:
            running = _running_tasks_at(tasks, gc.ts)
            if running < 1:
                continue
            cache_now = _latest_at_or_before(caches, gc.ts, "cache_used")
            shuffle_now = _latest_at_or_before(shuffles, gc.ts, "shuffle_used")
            per_task = (gc.heap_used_after - code_overhead - cache_now - shuffle_now) / running
            values.append(max(0.0, per_task))
    if not values:
        raise NoFullGcError(
            "no full-GC event with running tasks; re-profile with more GC pressure"
        )
    return percentile_nearest_rank(values, 0.9)


def derive_statistics(profile: Profile, layout_used: MemoryLayout) -> ProfileStats:
    """Derive `ProfileStats` from a parsed profile.

    `layout_used` supplies the container geometry of the profiled run.
    Deterministic and invariant to the interleaving of containers.
    """
    resources = profile.all_events(ResourceSample)
    if not resources:
        raise MissingResourceSamplesError("profile has no resource samples")
    cpu_avg = sum(r.cpu_percent for r in resources) / len(resources)
    disk_avg = sum(r.disk_percent for r in resources) / len(resources)

    code_candidates = []
    for cid, events in profile.events_by_container.items():
        first_start = next(
            (ev for ev in events if isinstance(ev, TaskEvent) and ev.action == "start"),
            None,
        )
        if first_start is None:
            continue
        gcs = [ev for ev in events if isinstance(ev, GcEvent)]
        heap_then = _latest_at_or_before(gcs, first_start.ts, "heap_used_after", None)
        if heap_then is not None:
            code_candidates.append(heap_then)
    code_overhead = (
        percentile_nearest_rank(code_candidates, 0.9) if code_candidates else 0.0
    )

    cache_samples = profile.all_events(CacheSample)
    cache_peak = max((c.cache_used for c in cache_samples), default=0.0)
    requested = sum(c.partitions_requested for c in cache_samples)
    hits = sum(c.partitions_hit for c in cache_samples)
    hit_ratio = hits / requested if requested else 1.0

    shuffle_values = []
    spilled = 0.0
    total_shuffle = 0.0
    for cid, events in profile.events_by_container.items():
        tasks = [ev for ev in events if isinstance(ev, TaskEvent)]
        for s in events:
            if not isinstance(s, ShuffleSample):
                continue
            spilled += s.spilled_bytes
            total_shuffle += s.total_shuffle_bytes
            running = _running_tasks_at(tasks, s.ts)
            if running >= 1:
                shuffle_values.append(s.shuffle_used / running)
    shuffle_per_task = (
        percentile_nearest_rank(shuffle_values, 0.9) if shuffle_values else 0.0
    )
    spill_fraction = spilled / total_shuffle if total_shuffle else 0.0

    unmanaged = estimate_unmanaged(profile, code_overhead)

    return ProfileStats(
        containers_per_node=layout_used.containers_per_node,
        heap=float(layout_used.heap),
        cpu_avg=cpu_avg,
        disk_avg=disk_avg,
        code_overhead=code_overhead,
        cache_used_peak=cache_peak,
        shuffle_per_task=shuffle_per_task,
        unmanaged_per_task=unmanaged,
        task_concurrency=layout_used.task_concurrency,
        cache_hit_ratio=hit_ratio,
        spill_fraction=spill_fraction,
    )


# --- re-profiling heuristics ----------------------------------------------


@dataclass(frozen=True)
class ReprofileDelta:
    """One concrete configuration change that raises GC pressure."""

    kind: str  # "shrink_heap" | "raise_concurrency" | "raise_new_ratio"
    layout: MemoryLayout


def reprofile_hint(layout: MemoryLayout, cluster: ClusterSpec) -> list[ReprofileDelta]:
    """Ordered changes to try when a profile produced no full-GC events.

    In order: move to the next smaller heap split, add one task slot,
    bump NewRatio by two. Deltas that cannot apply are omitted.
    """
    deltas = []
    ladder = enumerate_container_configs(cluster)
    position = next(
        (i for i, (n, _) in enumerate(ladder) if n == layout.containers_per_node),
        None,
    )
    if position is not None and position + 1 < len(ladder):
        n, heap = ladder[position + 1]
        deltas.append(
            ReprofileDelta("shrink_heap", replace(layout, containers_per_node=n, heap=heap))
        )
    deltas.append(
        ReprofileDelta(
            "raise_concurrency",
            replace(layout, task_concurrency=layout.task_concurrency + 1),
        )
    )
    if layout.new_ratio < NR_MAX:
        deltas.append(
            ReprofileDelta(
                "raise_new_ratio",
                replace(layout, new_ratio=min(NR_MAX, layout.new_ratio + 2)),
            )
        )
    return deltas
