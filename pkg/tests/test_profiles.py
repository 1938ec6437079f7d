import json
import random

import pytest
from hypothesis import given, strategies as st

from memtuner.core import ClusterSpec, InvariantViolation, MemoryLayout
from memtuner.profiles import (
    EmptyProfileError,
    GcEvent,
    MissingResourceSamplesError,
    NoFullGcError,
    ProfileParseError,
    ProfileStats,
    derive_statistics,
    estimate_unmanaged,
    events_to_jsonl,
    parse_profile,
    percentile_nearest_rank,
    reprofile_hint,
)

from conftest import profile_lines


def rec(kind, ts, container="c0", **payload):
    base = {"ts": ts, "container": container, "kind": kind}
    base.update(payload)
    return base


def gc(ts, heap_after, gc_type="full", container="c0"):
    return rec(
        "gc_event", ts, container, gc_type=gc_type, heap_used_after=heap_after,
        old_used_after=0.0, eden_capacity=100.0, old_capacity=1000.0,
    )


def task(ts, running, container="c0", action="start", task_id="t"):
    return rec("task_event", ts, container, task_id=task_id, action=action,
               running_tasks_after=running)


def resource(ts, cpu, disk, container="c0"):
    return rec("resource_sample", ts, container, cpu_percent=cpu,
               disk_percent=disk, rss=1000.0)


def cache(ts, used, requested=0, hit=0, container="c0"):
    return rec("cache_sample", ts, container, cache_used=used,
               partitions_requested=requested, partitions_hit=hit)


def shuffle(ts, used, spilled=0.0, total=0.0, container="c0"):
    return rec("shuffle_sample", ts, container, shuffle_used=used,
               spilled_bytes=spilled, total_shuffle_bytes=total)


class TestParseProfile:
    def test_well_formed_lines_pass_through(self):
        text = profile_lines([gc(0, 10, "young"), task(5, 1), resource(9, 30, 5)])
        profile = parse_profile(text)
        assert len(profile.all_events()) == 3

    def test_negative_heap_is_rejected_with_line_number(self):
        text = profile_lines([gc(0, 10, "young"), gc(5, -1)])
        with pytest.raises(ProfileParseError, match="line 2"):
            parse_profile(text)

    def test_out_of_order_timestamps_are_rejected(self):
        text = profile_lines([gc(10, 5, "young"), gc(4, 5)])
        with pytest.raises(ProfileParseError, match="non-monotone timestamp"):
            parse_profile(text)

    def test_containers_may_interleave(self):
        text = profile_lines([gc(10, 5, "young", "a"), gc(0, 5, "young", "b"),
                              gc(11, 5, "young", "a")])
        profile = parse_profile(text)
        assert profile.containers() == ["a", "b"]

    def test_empty_profile(self):
        with pytest.raises(EmptyProfileError):
            parse_profile("\n\n")

    def test_unknown_kind_rejected(self):
        with pytest.raises(ProfileParseError, match="unknown kind"):
            parse_profile(profile_lines([rec("disk_burp", 0)]))

    def test_unknown_fields_ignored(self):
        line = gc(0, 10, "young")
        line["vendor_extra"] = "ignored"
        assert len(parse_profile(profile_lines([line])).all_events()) == 1

    def test_invalid_json_names_the_line(self):
        with pytest.raises(ProfileParseError, match="line 1"):
            parse_profile("{not json\n")

    def test_hits_above_requests_rejected(self):
        with pytest.raises(ProfileParseError, match="partitions_hit"):
            parse_profile(profile_lines([cache(0, 10, requested=2, hit=3)]))

    def test_bytes_round_trip(self):
        text = profile_lines([gc(0, 10, "young"), task(5, 1), resource(9, 30, 5)])
        profile = parse_profile(text.encode("utf-8"))
        assert events_to_jsonl(profile.all_events())  # serializable again


class TestPercentile:
    def test_decile_list(self):
        assert percentile_nearest_rank([10, 20, 30, 40, 50, 60, 70, 80, 90, 100], 0.9) == 90

    def test_singleton(self):
        assert percentile_nearest_rank([7], 0.9) == 7

    def test_q_one_is_max(self):
        assert percentile_nearest_rank([3, 1, 2], 1.0) == 3

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            percentile_nearest_rank([], 0.5)

    def test_bad_q_rejected(self):
        with pytest.raises(ValueError):
            percentile_nearest_rank([1], 0.0)

    @given(st.lists(st.integers(-100, 100), min_size=1, max_size=40),
           st.floats(min_value=0.01, max_value=1.0))
    def test_result_is_an_element_with_enough_mass_below(self, values, q):
        v = percentile_nearest_rank(values, q)
        assert v in values
        assert sum(1 for x in values if x <= v) >= q * len(values) - 1e-9


class TestEstimateUnmanaged:
    def test_single_full_gc(self):
        text = profile_lines([
            task(0, 2), cache(1, 500.0), gc(10, 1000.0),
        ])
        profile = parse_profile(text)
        assert estimate_unmanaged(profile, 100.0) == pytest.approx(200.0)

    def test_clamped_at_zero(self):
        text = profile_lines([task(0, 3), cache(1, 400.0), gc(10, 500.0)])
        profile = parse_profile(text)
        assert estimate_unmanaged(profile, 100.0) == 0.0

    def test_ninetieth_percentile_across_events(self):
        events = [task(0, 1)]
        events += [gc(10 + k, float(10 * (k + 1))) for k in range(10)]
        profile = parse_profile(profile_lines(events))
        assert estimate_unmanaged(profile, 0.0) == pytest.approx(90.0)

    def test_no_full_gc_raises(self):
        profile = parse_profile(profile_lines([gc(0, 10, "young"), task(1, 1)]))
        with pytest.raises(NoFullGcError):
            estimate_unmanaged(profile, 0.0)

    def test_full_gc_without_running_tasks_does_not_count(self):
        profile = parse_profile(profile_lines([gc(0, 10)]))
        with pytest.raises(NoFullGcError):
            estimate_unmanaged(profile, 0.0)

    def test_shuffle_at_instant_is_subtracted(self):
        text = profile_lines([
            task(0, 2), cache(1, 500.0), shuffle(2, 100.0, 0.0, 100.0),
            gc(10, 1100.0),
        ])
        profile = parse_profile(text)
        assert estimate_unmanaged(profile, 100.0) == pytest.approx(200.0)

    def test_monotone_in_new_high_observation(self):
        rng = random.Random(5)
        for _ in range(20):
            values = [rng.uniform(10, 500) for _ in range(rng.randint(1, 15))]
            events = [task(0, 1)]
            events += [gc(10 + k, v) for k, v in enumerate(values)]
            base = estimate_unmanaged(parse_profile(profile_lines(events)), 0.0)
            high = base + rng.uniform(0.1, 100)
            events.append(gc(10 + len(values), high))
            grown = estimate_unmanaged(parse_profile(profile_lines(events)), 0.0)
            assert grown >= base


def graph_profile():
    """A profile whose derivation lands exactly on the reference statistics."""
    events = []
    for cid in ("c0", "c1"):
        events += [
            resource(0, 30.0, 1.0, cid),
            gc(0, 115.0, "young", cid),
            task(10, 1, cid, task_id=f"{cid}-t0"),
            task(11, 2, cid, task_id=f"{cid}-t1"),
            cache(20, 2300.0, requested=10, hit=3, container=cid),
            gc(100, 115.0 + 2300.0 + 2 * 770.0, "full", cid),
            resource(200, 40.0, 3.0, cid),
        ]
    return profile_lines(events)


class TestDeriveStatistics:
    def test_graph_fixture_matches_reference_column(self, default_layout):
        stats = derive_statistics(parse_profile(graph_profile()), default_layout)
        assert stats.containers_per_node == 1
        assert stats.heap == 4404.0
        assert stats.cpu_avg == pytest.approx(35.0)
        assert stats.disk_avg == pytest.approx(2.0)
        assert stats.code_overhead == pytest.approx(115.0)
        assert stats.cache_used_peak == pytest.approx(2300.0)
        assert stats.shuffle_per_task == 0.0
        assert stats.unmanaged_per_task == pytest.approx(770.0)
        assert stats.task_concurrency == 2
        assert stats.cache_hit_ratio == pytest.approx(0.3)
        assert stats.spill_fraction == 0.0

    def test_no_cache_convention(self, default_layout):
        text = profile_lines([
            resource(0, 10.0, 1.0), gc(0, 100.0, "young"), task(1, 2),
            gc(50, 500.0),
        ])
        stats = derive_statistics(parse_profile(text), default_layout)
        assert stats.cache_used_peak == 0.0
        assert stats.cache_hit_ratio == 1.0

    def test_code_overhead_is_ninetieth_percentile_across_containers(self, default_layout):
        events = []
        for cid, code in (("a", 100.0), ("b", 120.0)):
            events += [
                resource(0, 10.0, 1.0, cid), gc(0, code, "young", cid),
                task(5, 1, cid), gc(50, code + 300.0, "full", cid),
            ]
        stats = derive_statistics(parse_profile(profile_lines(events)), default_layout)
        assert stats.code_overhead == pytest.approx(120.0)

    def test_missing_resource_samples(self, default_layout):
        text = profile_lines([gc(0, 10, "young"), task(1, 1), gc(9, 500.0)])
        with pytest.raises(MissingResourceSamplesError):
            derive_statistics(parse_profile(text), default_layout)

    def test_propagates_no_full_gc(self, default_layout):
        text = profile_lines([resource(0, 5.0, 1.0), gc(0, 10, "young"), task(1, 1)])
        with pytest.raises(NoFullGcError):
            derive_statistics(parse_profile(text), default_layout)

    def test_spill_fraction_from_shuffle_samples(self, default_layout):
        text = profile_lines([
            resource(0, 10.0, 1.0), gc(0, 50.0, "young"), task(1, 2),
            shuffle(5, 200.0, spilled=100.0, total=400.0), gc(50, 800.0),
        ])
        stats = derive_statistics(parse_profile(text), default_layout)
        assert stats.spill_fraction == pytest.approx(0.25)
        assert stats.shuffle_per_task == pytest.approx(100.0)

    def test_container_interleaving_is_irrelevant(self, default_layout):
        lines = graph_profile().splitlines()
        random.Random(3).shuffle(lines)
        # keep per-container order, shuffle only across containers
        per = {}
        for line in lines:
            per.setdefault(json.loads(line)["container"], []).append(line)
        for seq in per.values():
            seq.sort(key=lambda l: json.loads(l)["ts"])
        merged = []
        rng = random.Random(9)
        while any(per.values()):
            cid = rng.choice([c for c, seq in per.items() if seq])
            merged.append(per[cid].pop(0))
        shuffled = "\n".join(merged) + "\n"
        a = derive_statistics(parse_profile(graph_profile()), default_layout)
        b = derive_statistics(parse_profile(shuffled), default_layout)
        assert a == b


class TestProfileStatsInvariants:
    def test_code_plus_unmanaged_must_fit_heap(self):
        with pytest.raises(InvariantViolation):
            ProfileStats(1, 1000.0, 10.0, 1.0, 600.0, 0.0, 0.0, 500.0, 1, 1.0, 0.0)

    def test_hit_ratio_zero_rejected(self):
        with pytest.raises(InvariantViolation):
            ProfileStats(1, 1000.0, 10.0, 1.0, 10.0, 0.0, 0.0, 10.0, 1, 0.0, 0.0)


class TestReprofileHint:
    def test_all_three_deltas_in_order(self, ladder_cluster, default_layout):
        deltas = reprofile_hint(default_layout, ladder_cluster)
        assert [d.kind for d in deltas] == [
            "shrink_heap", "raise_concurrency", "raise_new_ratio",
        ]
        assert deltas[0].layout.containers_per_node == 2
        assert deltas[0].layout.heap == 2202
        assert deltas[1].layout.task_concurrency == 3
        assert deltas[2].layout.new_ratio == 4

    def test_new_ratio_delta_omitted_at_cap(self, ladder_cluster, default_layout):
        from dataclasses import replace

        layout = replace(default_layout, new_ratio=9)
        kinds = [d.kind for d in reprofile_hint(layout, ladder_cluster)]
        assert "raise_new_ratio" not in kinds

    def test_heap_delta_omitted_on_smallest_split(self, ladder_cluster, default_layout):
        from dataclasses import replace

        layout = replace(default_layout, containers_per_node=4, heap=1101)
        kinds = [d.kind for d in reprofile_hint(layout, ladder_cluster)]
        assert "shrink_heap" not in kinds

    def test_new_ratio_delta_caps_at_nine(self, ladder_cluster, default_layout):
        from dataclasses import replace

        layout = replace(default_layout, new_ratio=8)
        deltas = reprofile_hint(layout, ladder_cluster)
        assert deltas[-1].layout.new_ratio == 9
