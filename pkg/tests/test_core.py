import pytest
from hypothesis import given, strategies as st

from memtuner.core import (
    ClusterSpec,
    InvariantViolation,
    MemoryLayout,
    PoolRequirements,
    cluster_from_kv,
    enumerate_container_configs,
    layout_from_kv,
    to_kv,
    validate_layout,
)


def make_cluster(node_heap=4404, min_heap=1024, **kw):
    defaults = dict(nodes=8, cores_per_node=8, disk_channels=4)
    defaults.update(kw)
    return ClusterSpec(node_heap=node_heap, min_container_heap=min_heap, **defaults)


class TestClusterSpec:
    def test_rejects_zero_nodes(self):
        with pytest.raises(InvariantViolation, match="nodes"):
            make_cluster(nodes=0)

    def test_rejects_heap_below_min_split(self):
        with pytest.raises(InvariantViolation, match="node_heap"):
            make_cluster(node_heap=512, min_heap=1024)


class TestValidateLayout:
    def test_fat_container_on_six_gb_node(self):
        cluster = make_cluster(node_heap=6144)
        layout = MemoryLayout(1, 4404, 2, 0.6, 0.0, 2, 8)
        assert validate_layout(layout, cluster) is layout

    def test_new_ratio_zero_is_rejected(self):
        cluster = make_cluster()
        layout = MemoryLayout(1, 4404, 2, 0.6, 0.0, 0, 8)
        with pytest.raises(InvariantViolation, match=r"NR out of \[1,9\]"):
            validate_layout(layout, cluster)

    def test_fraction_sum_above_one_is_rejected(self):
        cluster = make_cluster()
        layout = MemoryLayout(1, 4404, 2, 0.7, 0.4, 2, 8)
        with pytest.raises(InvariantViolation, match="fractions exceed 1"):
            validate_layout(layout, cluster)

    def test_containers_must_fit_node_heap(self):
        cluster = make_cluster()
        layout = MemoryLayout(2, 4404, 2, 0.5, 0.0, 2, 8)
        with pytest.raises(InvariantViolation, match="exceed node heap"):
            validate_layout(layout, cluster)

    def test_concurrency_beyond_cores_is_legal(self):
        cluster = make_cluster(cores_per_node=4)
        layout = MemoryLayout(1, 4404, 32, 0.5, 0.0, 2, 8)
        validate_layout(layout, cluster)

    def test_survivor_ratio_below_three_is_rejected(self):
        cluster = make_cluster()
        layout = MemoryLayout(1, 4404, 2, 0.5, 0.0, 2, 2)
        with pytest.raises(InvariantViolation, match="survivor_ratio"):
            validate_layout(layout, cluster)


class TestPools:
    def test_old_plus_young_is_whole_heap(self):
        for nr in range(1, 10):
            layout = MemoryLayout(1, 4404, 2, 0.0, 0.0, nr, 8)
            assert layout.old_pool + layout.young_pool == pytest.approx(4404)

    def test_eden_strictly_below_young(self):
        for sr in (3, 4, 8, 16):
            layout = MemoryLayout(1, 4404, 2, 0.0, 0.0, 2, sr)
            assert layout.eden < layout.young_pool

    def test_pool_requirements_rejects_negative(self):
        with pytest.raises(InvariantViolation):
            PoolRequirements(-1.0, 0.0, 0.0, 0.0)


class TestEnumerate:
    def test_reference_ladder(self):
        cluster = make_cluster(node_heap=4404, min_heap=1024)
        assert enumerate_container_configs(cluster) == [
            (1, 4404), (2, 2202), (3, 1468), (4, 1101),
        ]

    def test_single_split(self):
        cluster = make_cluster(node_heap=1024, min_heap=1024)
        assert enumerate_container_configs(cluster) == [(1, 1024)]

    def test_floor_rule(self):
        cluster = make_cluster(node_heap=10000, min_heap=3000)
        assert enumerate_container_configs(cluster) == [
            (1, 10000), (2, 5000), (3, 3333),
        ]

    @given(
        node_heap=st.integers(min_value=1, max_value=10**7),
        splits=st.integers(min_value=1, max_value=64),
    )
    def test_heaps_non_increasing_and_within_node(self, node_heap, splits):
        min_heap = max(1, node_heap // splits)
        cluster = make_cluster(node_heap=node_heap, min_heap=min_heap)
        ladder = enumerate_container_configs(cluster)
        assert ladder, "at least the single fat split exists"
        heaps = [h for _, h in ladder]
        assert heaps == sorted(heaps, reverse=True)
        assert all(n * h <= node_heap for n, h in ladder)
        assert all(h >= min_heap for _, h in ladder)
        assert [n for n, _ in ladder] == list(range(1, len(ladder) + 1))


class TestKvSerialization:
    def test_cluster_round_trip(self):
        cluster = make_cluster()
        assert cluster_from_kv(to_kv(cluster)) == cluster

    def test_layout_round_trip(self):
        layout = MemoryLayout(2, 2202, 3, 0.45, 0.1, 3, 8)
        assert layout_from_kv(to_kv(layout)) == layout

    def test_heap_serialized_as_integer(self):
        layout = MemoryLayout(1, 4404, 2, 0.5, 0.1, 2, 8)
        assert "heap = 4404" in to_kv(layout)

    def test_comments_and_blanks_are_skipped(self):
        text = "# geometry\n\nnodes = 2\ncores_per_node = 4\nnode_heap = 2048\ndisk_channels = 2\nmin_container_heap = 512\n"
        assert cluster_from_kv(text).nodes == 2

    def test_malformed_line_is_rejected(self):
        with pytest.raises(ValueError, match="line 1"):
            cluster_from_kv("nodes: 2\n")
