"""Guided Bayesian optimization: profile-derived features steer the surrogate.

Three cheap analytical scores are computed for every candidate layout and
appended to its coordinates before kernelization, so the surrogate can
separate over-committed or cache-starved regions from promising ones long
before enough raw samples accumulate.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import SR_DEFAULT, ClusterSpec, MemoryLayout
from .gp import BoResult, SearchSpace, StoppingRule, bo_loop
from .profiles import ProfileStats
from .relm import DELTA_DEFAULT, cache_need, shuffle_need

Q2_CEILING = 100.0  # "no long-term storage configured at all"
_Q1_CLIP = 2.0
_Q2_CLIP = 2.0
_Q3_CLIP = 4.0


@dataclass(frozen=True)
class QFeatures:
    heap_occupancy: float      # expected fill of the container heap
    longterm_pressure: float   # long-term residents vs the room they get
    shuffle_pressure: float    # shuffle usage vs its half-of-Eden budget

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.heap_occupancy, self.longterm_pressure, self.shuffle_pressure)


def white_box_q(
    layout: MemoryLayout, stats: ProfileStats, delta: float = DELTA_DEFAULT
) -> QFeatures:
    """Score a candidate layout against profiled memory needs.

    Scale consistent: doubling every byte quantity in both the stats and
    the layout leaves all three scores unchanged.
    """
    heap = float(layout.heap)
    p = layout.task_concurrency
    mc_need = cache_need(stats, heap, delta)
    ms_need = shuffle_need(stats, heap, delta)
    mc_here = layout.cache_capacity_frac * heap
    ms_here = layout.shuffle_capacity_frac * heap / p  # per task

    occupancy = (
        stats.code_overhead
        + min(mc_here, mc_need)
        + p * (stats.unmanaged_per_task + min(ms_here, ms_need))
    ) / heap

    longterm = stats.code_overhead + mc_need
    room = min(layout.old_pool, mc_here)
    if longterm == 0:
        pressure = 0.0
    elif room <= 0:
        pressure = Q2_CEILING
    else:
        pressure = longterm / room

    if ms_need == 0:
        shuffle = 0.0
    else:
        shuffle = p * min(ms_here, ms_need) / (0.5 * layout.eden)

    return QFeatures(occupancy, pressure, shuffle)


def normalized_q(q: QFeatures) -> tuple[float, float, float]:
    """Clip each score to its fixed window and rescale to [0, 1], so the
    shared kernel length-scales keep their meaning on the q coordinates."""
    return (
        min(max(q.heap_occupancy, 0.0), _Q1_CLIP) / _Q1_CLIP,
        min(max(q.longterm_pressure, 0.0), _Q2_CLIP) / _Q2_CLIP,
        min(max(q.shuffle_pressure, 0.0), _Q3_CLIP) / _Q3_CLIP,
    )


def q_feature_fn(space: SearchSpace, cluster: ClusterSpec, stats: ProfileStats, delta: float = DELTA_DEFAULT):
    """Batch feature hook for the tuning loop: unit rows -> normalized q.

    Vectorized but numerically identical to `white_box_q` per row; the
    acquisition search scores thousands of candidates per iteration.
    """
    names = list(space.names)
    idx = {name: names.index(name) for name in names}
    dims = space.dimensions

    def decode(unit: np.ndarray, name: str) -> np.ndarray:
        d = dims[idx[name]]
        v = d.lower + unit[:, idx[name]] * (d.upper - d.lower)
        if d.kind == "integer":
            v = np.clip(np.rint(v), d.lower, d.upper)
        return v

    def features(unit: np.ndarray) -> np.ndarray:
        unit = np.atleast_2d(unit)
        n = decode(unit, "containers_per_node")
        p = decode(unit, "task_concurrency")
        major = decode(unit, "major_capacity_frac")
        nr = decode(unit, "new_ratio")
        heap = (cluster.node_heap // n.astype(int)).astype(float)
        if space.major_pool == "cache":
            cache_frac, shuffle_frac = major, space.minor_pool_frac
        else:
            cache_frac, shuffle_frac = space.minor_pool_frac, major

        mc_need = cache_need(stats, heap, delta)  # scalar demand frac * heap row
        spill_denom = 1.0 - stats.spill_fraction / stats.task_concurrency
        if spill_denom <= 0.0:
            spill_denom = 1e-6
        ms_need = np.minimum(stats.shuffle_per_task / spill_denom, (1.0 - delta) * heap)
        mc_here = cache_frac * heap
        ms_here = shuffle_frac * heap / p
        old = heap * nr / (nr + 1.0)
        sr = float(SR_DEFAULT)
        eden = heap / (nr + 1.0) * (sr - 2.0) / sr

        q1 = (
            stats.code_overhead
            + np.minimum(mc_here, mc_need)
            + p * (stats.unmanaged_per_task + np.minimum(ms_here, ms_need))
        ) / heap
        longterm = stats.code_overhead + mc_need
        room = np.minimum(old, mc_here)
        with np.errstate(divide="ignore", invalid="ignore"):
            q2 = np.where(longterm == 0, 0.0, np.where(room <= 0, Q2_CEILING, longterm / np.where(room > 0, room, 1.0)))
            q3 = np.where(ms_need == 0, 0.0, p * np.minimum(ms_here, ms_need) / (0.5 * eden))
        out = np.empty((unit.shape[0], 3))
        out[:, 0] = np.clip(q1, 0.0, _Q1_CLIP) / _Q1_CLIP
        out[:, 1] = np.clip(q2, 0.0, _Q2_CLIP) / _Q2_CLIP
        out[:, 2] = np.clip(q3, 0.0, _Q3_CLIP) / _Q3_CLIP
        return out

    return features


def gbo_loop(
    objective,
    space: SearchSpace,
    stats: ProfileStats,
    cluster: ClusterSpec,
    seed,
    stopping: StoppingRule | None = None,
    delta: float = DELTA_DEFAULT,
) -> BoResult:
    """Same protocol as `bo_loop`, with every point embedded as (x, q(x)).

    History records carry the raw q scores of each evaluated layout.
    """
    result = bo_loop(
        objective, space, seed, stopping, features=q_feature_fn(space, cluster, stats, delta)
    )
    annotated = []
    for record in result.history:
        layout = space.to_layout(record.point, cluster)
        annotated.append(
            replace(record, features=white_box_q(layout, stats, delta).as_tuple())
        )
    return BoResult(result.best, tuple(annotated), result.stopped_reason)
