"""The white-box tuning policy: pool initializer, arbitrator, and selector.

A single profiled run yields `ProfileStats`; from those the initializer
sizes each memory pool independently for every enumerated container
split, the arbitrator trades pool sizes round-robin until the container
is safe, and the selector keeps the candidate with the highest heap
utility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import (
    NR_MAX,
    NR_MIN,
    SR_DEFAULT,
    ClusterSpec,
    MemoryLayout,
    PoolRequirements,
    enumerate_container_configs,
)
from .profiles import ProfileStats

DELTA_DEFAULT = 0.1  # fraction of heap kept unassigned as an OOM guard
_EPS = 1e-6


class DegenerateStatsError(ValueError):
    """No finite concurrency bound could be derived from the stats."""


class InsufficientMemoryError(ValueError):
    """The container cannot safely run even one task.

    `reason` is "min-requirement" when code overhead plus one task's
    unmanaged memory already exceeds the usable heap, or "stuck" when a
    full arbitration cycle can no longer change anything.
    """

    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason


class AllCandidatesInfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class InitialConfig:
    pools: PoolRequirements
    task_concurrency: int
    new_ratio: int


@dataclass(frozen=True)
class ArbitrationStep:
    """State after one arbitration iteration."""

    action: str  # "I" | "II" | "III"
    task_concurrency: int
    cache_pool: float
    new_ratio: int
    old_pool: float


@dataclass(frozen=True)
class TunedConfig:
    code_overhead: float
    unmanaged_per_task: float
    task_concurrency: int
    cache_pool: float
    shuffle_per_task: float
    new_ratio: int
    old_pool: float
    eden: float
    utility: float


@dataclass(frozen=True)
class CandidateResult:
    containers_per_node: int
    heap: int
    config: TunedConfig | None
    steps: tuple[ArbitrationStep, ...]
    infeasible_reason: str | None = None

    @property
    def utility(self) -> float | None:
        return self.config.utility if self.config else None


@dataclass(frozen=True)
class Recommendation:
    layout: MemoryLayout
    utility: float
    candidates: tuple[CandidateResult, ...]


def _old_pool(heap: float, nr: int) -> float:
    return heap * nr / (nr + 1)


def _eden(heap: float, nr: int, sr: int) -> float:
    return heap / (nr + 1) * (sr - 2) / sr


def _nr_for_longterm(longterm: float, heap: float) -> int:
    """Smallest NewRatio whose Old pool covers the long-term residents."""
    denom = heap - longterm
    if denom <= 0:
        return NR_MAX
    return min(NR_MAX, max(NR_MIN, math.ceil(longterm / denom)))


def cache_need(stats: ProfileStats, heap: float, delta: float = DELTA_DEFAULT) -> float:
    """Cache pool sized from the observed peak, scaled up by the miss rate."""
    demand_frac = stats.cache_used_peak / (stats.cache_hit_ratio * stats.heap)
    return heap * min(demand_frac, 1.0 - delta)


def shuffle_need(stats: ProfileStats, heap: float, delta: float = DELTA_DEFAULT) -> float:
    """Per-task shuffle memory scaled up by the observed spillage."""
    denom = 1.0 - stats.spill_fraction / stats.task_concurrency
    if denom <= 0.0:  # unreachable given the stats invariants, kept as a guard
        denom = _EPS
    return min(stats.shuffle_per_task / denom, (1.0 - delta) * heap)


def initialize(
    stats: ProfileStats, containers: int, heap: float, delta: float = DELTA_DEFAULT
) -> InitialConfig:
    """Size each pool independently for one (containers, heap) split."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta out of (0,1), got {delta}")
    if heap <= stats.code_overhead:
        raise InsufficientMemoryError(
            "min-requirement",
            f"heap {heap} does not cover the code overhead {stats.code_overhead}",
        )
    m_c = cache_need(stats, heap, delta)
    m_s = shuffle_need(stats, heap, delta)
    nr = _nr_for_longterm(stats.code_overhead + m_c, heap)

    bounds = []
    if stats.cpu_avg > 0:
        per_task_cpu = stats.cpu_avg / stats.task_concurrency
        bounds.append((1.0 / containers) * ((1.0 - delta) * 100.0) / per_task_cpu)
    if stats.disk_avg > 0:
        per_task_disk = stats.disk_avg / stats.task_concurrency
        bounds.append((1.0 / containers) * ((1.0 - delta) * 100.0) / per_task_disk)
    if stats.unmanaged_per_task > 0:
        bounds.append((1.0 - delta) * heap / stats.unmanaged_per_task)
    if not bounds:
        raise DegenerateStatsError(
            "cpu_avg, disk_avg and unmanaged_per_task are all zero; "
            "no concurrency bound exists"
        )
    p = max(1, math.floor(min(bounds)))

    return InitialConfig(
        pools=PoolRequirements(
            code_overhead=stats.code_overhead,
            unmanaged_per_task=stats.unmanaged_per_task,
            cache_need=m_c,
            shuffle_need=m_s,
        ),
        task_concurrency=p,
        new_ratio=nr,
    )


_ACTIONS = ("I", "II", "III")


def arbitrate(
    cfg: InitialConfig,
    heap: float,
    delta: float = DELTA_DEFAULT,
    survivor_ratio: int = SR_DEFAULT,
) -> tuple[TunedConfig, list[ArbitrationStep]]:
    """Trade concurrency, cache, and Old-pool size until the container is safe.

    While code overhead, running tasks, and cache together exceed the Old
    pool, exactly one of three actions applies per iteration, round-robin:
      I.   drop task concurrency by one;
      II.  shrink the cache pool by one task's unmanaged memory and re-fit
           NewRatio so Old just covers the long-term residents;
      III. grow the Old pool by one task's unmanaged memory (capped at the
           safety limit), snapping NewRatio up to the smallest integer
           whose Old pool covers the target.
    An action that cannot apply is skipped and the cycle advances; a full
    no-op cycle means the split is infeasible. Afterwards the per-task
    shuffle allowance is capped at half of Eden per task.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta out of (0,1), got {delta}")
    code = cfg.pools.code_overhead
    unmanaged = cfg.pools.unmanaged_per_task
    p = cfg.task_concurrency
    m_c = cfg.pools.cache_need
    m_s = cfg.pools.shuffle_need
    nr = cfg.new_ratio
    cap = (1.0 - delta) * heap

    if code + unmanaged > cap:
        raise InsufficientMemoryError(
            "min-requirement",
            f"code overhead + one task's unmanaged memory "
            f"({code + unmanaged}) exceeds {cap}",
        )

    old = _old_pool(heap, nr)
    steps: list[ArbitrationStep] = []
    pointer = 0
    # Each action frees or adds at most one task's unmanaged memory, so the
    # loop is linear in the initial slack; the bound below is generous.
    if unmanaged > 0:
        limit = 3 * (p + math.ceil(m_c / unmanaged) + math.ceil(heap / unmanaged)) + 9
    else:
        limit = 3 * (p + 9)

    while code + p * unmanaged + m_c > old:
        applied = None
        for _ in range(len(_ACTIONS)):
            action = _ACTIONS[pointer]
            pointer = (pointer + 1) % len(_ACTIONS)
            if action == "I":
                if p > 1:
                    p -= 1
                    applied = action
            elif action == "II":
                if m_c > 0:
                    new_mc = max(0.0, m_c - unmanaged)
                    new_nr = _nr_for_longterm(code + new_mc, heap)
                    if (new_mc, new_nr) != (m_c, nr):
                        m_c, nr = new_mc, new_nr
                        old = _old_pool(heap, nr)
                        applied = action
            else:
                target = min(old + unmanaged, cap)
                if target > old:
                    new_nr = next(
                        (k for k in range(NR_MIN, NR_MAX + 1) if _old_pool(heap, k) >= target),
                        NR_MAX,
                    )
                    new_old = _old_pool(heap, new_nr)
                    if new_old > old:
                        nr, old = new_nr, new_old
                        applied = action
            if applied:
                steps.append(ArbitrationStep(applied, p, m_c, nr, old))
                break
        if applied is None:
            raise InsufficientMemoryError(
                "stuck",
                "a full arbitration cycle changed nothing while the pools "
                "still exceed the Old generation",
            )
        if len(steps) > limit:  # termination guard, never expected to fire
            raise RuntimeError("arbitration exceeded its iteration bound")

    eden = _eden(heap, nr, survivor_ratio)
    m_s = min(m_s, 0.5 * eden / p)
    utility = (code + m_c + p * (unmanaged + m_s)) / heap
    tuned = TunedConfig(
        code_overhead=code,
        unmanaged_per_task=unmanaged,
        task_concurrency=p,
        cache_pool=m_c,
        shuffle_per_task=m_s,
        new_ratio=nr,
        old_pool=old,
        eden=eden,
        utility=utility,
    )
    return tuned, steps


def layout_for(
    config: TunedConfig,
    containers: int,
    heap: int,
    survivor_ratio: int = SR_DEFAULT,
) -> MemoryLayout:
    """Express a tuned configuration as a concrete memory layout."""
    return MemoryLayout(
        containers_per_node=containers,
        heap=heap,
        task_concurrency=config.task_concurrency,
        cache_capacity_frac=config.cache_pool / heap,
        shuffle_capacity_frac=config.task_concurrency * config.shuffle_per_task / heap,
        new_ratio=config.new_ratio,
        survivor_ratio=survivor_ratio,
    )


def tune(
    stats: ProfileStats,
    cluster: ClusterSpec,
    delta: float = DELTA_DEFAULT,
    survivor_ratio: int = SR_DEFAULT,
) -> Recommendation:
    """Run every container split through the initializer and arbitrator,
    then keep the highest-utility candidate (ties go to fewer containers)."""
    candidates = []
    best: CandidateResult | None = None
    for containers, heap in enumerate_container_configs(cluster):
        try:
            cfg = initialize(stats, containers, float(heap), delta)
            tuned, steps = arbitrate(cfg, float(heap), delta, survivor_ratio)
        except InsufficientMemoryError as exc:
            candidates.append(
                CandidateResult(containers, heap, None, (), infeasible_reason=exc.reason)
            )
            continue
        result = CandidateResult(containers, heap, tuned, tuple(steps))
        candidates.append(result)
        if best is None or tuned.utility > best.config.utility:
            best = result
    if best is None:
        raise AllCandidatesInfeasibleError(
            "every container split was flagged as insufficient memory"
        )
    return Recommendation(
        layout=layout_for(best.config, best.containers_per_node, best.heap, survivor_ratio),
        utility=best.config.utility,
        candidates=tuple(candidates),
    )
