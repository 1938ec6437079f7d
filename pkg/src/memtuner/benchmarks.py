"""Built-in synthetic workload suite spanning the main resource profiles.

Five workloads exercise distinct corners of the response surface: pure
shuffle, cache bound, mixed cache+shuffle, memory starved, and
embarrassingly parallel. `python -m memtuner.benchmarks OUTDIR` dumps
them (plus the matching cluster) as config files for the CLI.
"""

from __future__ import annotations

import sys
from pathlib import Path

from .core import ClusterSpec, to_kv
from .simulator import StageSpec, WorkloadSpec, workload_to_kv


def default_cluster() -> ClusterSpec:
    return ClusterSpec(
        nodes=4,
        cores_per_node=8,
        node_heap=4404,
        disk_channels=4,
        min_container_heap=1024,
    )


def benchmark_suite() -> dict[str, WorkloadSpec]:
    return {
        # map/reduce with big deserialization buffers; no cache at all
        "shuffle_heavy": WorkloadSpec(
            stages=(
                StageSpec(tasks=384, base_task_seconds=1.5, uses_shuffle=True),
                StageSpec(tasks=192, base_task_seconds=2.0, uses_shuffle=True),
            ),
            code_overhead=60.0,
            unmanaged_per_task=705.0,
            cache_demand_total=0.0,
            recompute_factor=0.0,
            shuffle_per_task=105.0,
            cpu_demand_per_task=0.50,
            io_demand_per_task=0.35,
            gc_base_overhead=0.05,
        ),
        # iterative ML: cached partitions are expensive to recompute
        "cache_heavy": WorkloadSpec(
            stages=(
                StageSpec(tasks=384, base_task_seconds=1.2, uses_cache=True),
                StageSpec(tasks=384, base_task_seconds=1.2, uses_cache=True),
                StageSpec(tasks=192, base_task_seconds=1.0, uses_cache=True),
            ),
            code_overhead=40.0,
            unmanaged_per_task=385.0,
            cache_demand_total=13600.0,
            recompute_factor=2.2,
            shuffle_per_task=0.0,
            cpu_demand_per_task=0.25,
            io_demand_per_task=0.95,
            gc_base_overhead=0.05,
        ),
        # graph-style: caching plus a shuffle-dependent join stage
        "mixed": WorkloadSpec(
            stages=(
                StageSpec(tasks=384, base_task_seconds=1.2, uses_cache=True, uses_shuffle=True),
                StageSpec(tasks=192, base_task_seconds=1.5, uses_cache=True),
            ),
            code_overhead=120.0,
            unmanaged_per_task=440.0,
            cache_demand_total=9200.0,
            recompute_factor=0.85,
            shuffle_per_task=190.0,
            cpu_demand_per_task=0.48,
            io_demand_per_task=0.40,
            gc_base_overhead=0.05,
        ),
        # memory footprint so small the first profile shows no full GC
        "tiny_memory": WorkloadSpec(
            stages=(
                StageSpec(tasks=192, base_task_seconds=2.0, uses_shuffle=True),
                StageSpec(tasks=96, base_task_seconds=2.5, uses_shuffle=True),
            ),
            code_overhead=40.0,
            unmanaged_per_task=330.0,
            cache_demand_total=0.0,
            recompute_factor=0.0,
            shuffle_per_task=150.0,
            cpu_demand_per_task=0.37,
            io_demand_per_task=0.16,
            gc_base_overhead=0.05,
        ),
        # thousands of short tasks, almost no CPU per task
        "high_parallelism": WorkloadSpec(
            stages=(
                StageSpec(tasks=768, base_task_seconds=0.8, uses_shuffle=True),
                StageSpec(tasks=384, base_task_seconds=1.0, uses_shuffle=True),
            ),
            code_overhead=120.0,
            unmanaged_per_task=680.0,
            cache_demand_total=0.0,
            recompute_factor=0.0,
            shuffle_per_task=135.0,
            cpu_demand_per_task=0.08,
            io_demand_per_task=0.13,
            gc_base_overhead=0.05,
        ),
    }


def dump_suite(outdir: Path) -> list[Path]:
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    cluster_path = outdir / "cluster.kv"
    cluster_path.write_text(to_kv(default_cluster()))
    written.append(cluster_path)
    for name, workload in benchmark_suite().items():
        path = outdir / f"{name}.kv"
        path.write_text(workload_to_kv(workload))
        written.append(path)
    return written


if __name__ == "__main__":
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("benchmarks")
    for path in dump_suite(target):
        print(path)
