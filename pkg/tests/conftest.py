from __future__ import annotations

import json

import pytest

from memtuner.core import ClusterSpec, MemoryLayout
from memtuner.profiles import ProfileStats


@pytest.fixture
def ladder_cluster() -> ClusterSpec:
    """Eight-core nodes with 4404 usable units and 1024-unit minimum splits."""
    return ClusterSpec(
        nodes=8, cores_per_node=8, node_heap=4404, disk_channels=4,
        min_container_heap=1024,
    )


@pytest.fixture
def default_layout() -> MemoryLayout:
    """One fat container per node with framework-default pool settings."""
    return MemoryLayout(
        containers_per_node=1, heap=4404, task_concurrency=2,
        cache_capacity_frac=0.5, shuffle_capacity_frac=0.1,
        new_ratio=2, survivor_ratio=8,
    )


@pytest.fixture
def graph_stats() -> ProfileStats:
    """Profiled statistics of a cache-hungry graph job on the fat container."""
    return ProfileStats(
        containers_per_node=1,
        heap=4404.0,
        cpu_avg=35.0,
        disk_avg=2.0,
        code_overhead=115.0,
        cache_used_peak=2300.0,
        shuffle_per_task=0.0,
        unmanaged_per_task=770.0,
        task_concurrency=2,
        cache_hit_ratio=0.3,
        spill_fraction=0.0,
    )


def profile_lines(records) -> str:
    return "".join(json.dumps(r) + "\n" for r in records)
