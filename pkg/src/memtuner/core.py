"""Shared vocabulary: cluster geometry, container memory layouts, validation.

All byte-valued fields are plain counts in a unit chosen by the config
author (the arithmetic is scale free); config files and result logs
serialize them as integers.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

NR_MIN = 1
NR_MAX = 9  # keeps at least 10% of the heap in the young generation
SR_MIN = 3  # the eden split needs SR > 2
SR_DEFAULT = 8


class InvariantViolation(ValueError):
    """A domain value broke one of its declared bounds."""


@dataclass(frozen=True)
class ClusterSpec:
    """Homogeneous cluster geometry; node_heap is already net of OS overheads."""

    nodes: int
    cores_per_node: int
    node_heap: int
    disk_channels: int
    min_container_heap: int

    def __post_init__(self) -> None:
        if self.nodes < 1:
            raise InvariantViolation(f"nodes must be >= 1, got {self.nodes}")
        if self.cores_per_node < 1:
            raise InvariantViolation(
                f"cores_per_node must be >= 1, got {self.cores_per_node}"
            )
        if self.disk_channels < 1:
            raise InvariantViolation(
                f"disk_channels must be >= 1, got {self.disk_channels}"
            )
        if self.min_container_heap < 1:
            raise InvariantViolation(
                f"min_container_heap must be >= 1, got {self.min_container_heap}"
            )
        if self.node_heap < self.min_container_heap:
            raise InvariantViolation(
                f"node_heap {self.node_heap} below min_container_heap "
                f"{self.min_container_heap}"
            )


@dataclass(frozen=True)
class MemoryLayout:
    """One candidate configuration of a container and its JVM pools.

    Instances are plain records; `validate_layout` is the gate that checks
    the bounds, so tests and tools can build intentionally bad layouts.
    """

    containers_per_node: int
    heap: int
    task_concurrency: int
    cache_capacity_frac: float
    shuffle_capacity_frac: float
    new_ratio: int
    survivor_ratio: int = SR_DEFAULT

    @property
    def old_pool(self) -> float:
        return self.heap * self.new_ratio / (self.new_ratio + 1)

    @property
    def young_pool(self) -> float:
        return self.heap / (self.new_ratio + 1)

    @property
    def eden(self) -> float:
        sr = self.survivor_ratio
        return self.young_pool * (sr - 2) / sr

    @property
    def cache_pool(self) -> float:
        return self.cache_capacity_frac * self.heap

    @property
    def shuffle_pool(self) -> float:
        return self.shuffle_capacity_frac * self.heap


@dataclass(frozen=True)
class PoolRequirements:
    """Per-container memory needs derived from a profiled run."""

    code_overhead: float
    unmanaged_per_task: float
    cache_need: float
    shuffle_need: float

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise InvariantViolation(f"{f.name} must be >= 0")


def validate_layout(layout: MemoryLayout, cluster: ClusterSpec) -> MemoryLayout:
    """Return `layout` if every bound holds, else raise naming the violation.

    Task concurrency above the core count is deliberately legal; the
    simulator penalizes it instead of validation rejecting it.
    """
    n = layout.containers_per_node
    if n < 1:
        raise InvariantViolation(f"containers_per_node must be >= 1, got {n}")
    if layout.heap < 1:
        raise InvariantViolation(f"heap must be >= 1, got {layout.heap}")
    if layout.task_concurrency < 1:
        raise InvariantViolation(
            f"task_concurrency must be >= 1, got {layout.task_concurrency}"
        )
    if not NR_MIN <= layout.new_ratio <= NR_MAX:
        raise InvariantViolation(
            f"NR out of [{NR_MIN},{NR_MAX}], got {layout.new_ratio}"
        )
    if layout.survivor_ratio < SR_MIN:
        raise InvariantViolation(
            f"survivor_ratio must be >= {SR_MIN}, got {layout.survivor_ratio}"
        )
    for name in ("cache_capacity_frac", "shuffle_capacity_frac"):
        v = getattr(layout, name)
        if not 0.0 <= v <= 1.0:
            raise InvariantViolation(f"{name} out of [0,1], got {v}")
    if layout.cache_capacity_frac + layout.shuffle_capacity_frac > 1.0:
        raise InvariantViolation(
            "fractions exceed 1: cache_capacity_frac + shuffle_capacity_frac = "
            f"{layout.cache_capacity_frac + layout.shuffle_capacity_frac}"
        )
    if n * layout.heap > cluster.node_heap:
        raise InvariantViolation(
            f"containers exceed node heap: {n} * {layout.heap} > {cluster.node_heap}"
        )
    return layout


def enumerate_container_configs(cluster: ClusterSpec) -> list[tuple[int, int]]:
    """All (containers_per_node, heap) splits of a node's heap.

    The heap is divided equally, floored to whole bytes; the ladder stops
    once a split would fall under the minimum container size.
    """
    ladder = []
    n = 1
    while True:
        heap = cluster.node_heap // n
        if heap < cluster.min_container_heap:
            break
        ladder.append((n, heap))
        n += 1
    return ladder


# --- canonical key-value text serialization -------------------------------

_TRUE = {"true", "yes", "1"}
_FALSE = {"false", "no", "0"}


def to_kv(obj) -> str:
    """Serialize a flat dataclass as `name = value` lines."""
    lines = []
    for f in fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def parse_kv(text: str) -> dict[str, str]:
    """Parse `name = value` lines; blank lines and # comments are skipped."""
    out: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {ln}: expected 'name = value', got {raw!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def coerce_fields(cls, raw: dict[str, str]):
    """Build a dataclass from string values using the declared field types."""
    kwargs = {}
    for f in fields(cls):
        if f.name not in raw:
            continue
        text = raw[f.name]
        if f.type in ("int", int):
            kwargs[f.name] = int(text)
        elif f.type in ("float", float):
            kwargs[f.name] = float(text)
        elif f.type in ("bool", bool):
            low = text.lower()
            if low in _TRUE:
                kwargs[f.name] = True
            elif low in _FALSE:
                kwargs[f.name] = False
            else:
                raise ValueError(f"{f.name}: expected a boolean, got {text!r}")
        else:
            kwargs[f.name] = text
    return cls(**kwargs)


def cluster_from_kv(text: str) -> ClusterSpec:
    return coerce_fields(ClusterSpec, parse_kv(text))


def layout_from_kv(text: str) -> MemoryLayout:
    return coerce_fields(MemoryLayout, parse_kv(text))
