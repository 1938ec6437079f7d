"""Command-line front end: tune, simulate, exhaustive, compare, profile-stats.

Every run with a fixed seed is reproducible end to end; persisted records
are canonical JSON so re-running produces byte-identical files. Wall time
is printed, never persisted, to keep that guarantee.

Exit codes: 0 success, 2 input error, 3 infeasible or no-full-gc,
4 evaluation budget exhausted.
"""

from __future__ import annotations

import argparse
import json
import math
import statistics
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .core import (
    ClusterSpec,
    InvariantViolation,
    MemoryLayout,
    SR_DEFAULT,
    cluster_from_kv,
    layout_from_kv,
    to_kv,
)
from .gbo import gbo_loop, white_box_q
from .gp import BoResult, StoppingRule, bo_loop, default_search_space
from .profiles import (
    EmptyProfileError,
    MissingResourceSamplesError,
    NoFullGcError,
    ProfileParseError,
    ProfileStats,
    derive_statistics,
    events_to_jsonl,
    parse_profile,
    percentile_nearest_rank,
    reprofile_hint,
)
from .relm import (
    AllCandidatesInfeasibleError,
    DELTA_DEFAULT,
    InsufficientMemoryError,
    Recommendation,
    tune,
)
from .simulator import (
    WorkloadSpec,
    exhaustive_grid,
    grid_to_csv,
    major_pool_for,
    simulate,
    synth_profile,
    workload_from_kv,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_BUDGET = 4

POLICIES = ("relm", "bo", "gbo")


class InputError(Exception):
    pass


@dataclass
class RunRecord:
    policy: str
    workload: str
    seed: int
    evaluations: int
    best_layout: MemoryLayout
    best_runtime: float | None
    aborted_evaluations: int
    wall_time_s: float = 0.0  # reported on the console, never persisted

    def to_json(self) -> str:
        rec = {
            "policy": self.policy,
            "workload": self.workload,
            "seed": self.seed,
            "evaluations": self.evaluations,
            "best_layout": asdict(self.best_layout),
            "best_runtime": self.best_runtime,
            "aborted_evaluations": self.aborted_evaluations,
        }
        return json.dumps(rec, sort_keys=True) + "\n"


def _read(path: str) -> str:
    p = Path(path)
    if not p.exists():
        raise InputError(f"no such file: {path}")
    return p.read_text()


def _load_cluster(path: str) -> ClusterSpec:
    try:
        return cluster_from_kv(_read(path))
    except (ValueError, TypeError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _load_workload(path: str) -> WorkloadSpec:
    try:
        return workload_from_kv(_read(path))
    except (ValueError, TypeError, KeyError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _load_layout(path: str) -> MemoryLayout:
    try:
        return layout_from_kv(_read(path))
    except (ValueError, TypeError) as exc:
        raise InputError(f"{path}: {exc}") from None


def default_profiling_layout(cluster: ClusterSpec, workload: WorkloadSpec) -> MemoryLayout:
    """One fat container with framework-default pool splits."""
    if major_pool_for(workload) == "cache":
        cache, shuffle = 0.5, 0.1
    else:
        cache, shuffle = 0.0, 0.6
    return MemoryLayout(
        containers_per_node=1,
        heap=cluster.node_heap,
        task_concurrency=2,
        cache_capacity_frac=cache,
        shuffle_capacity_frac=shuffle,
        new_ratio=2,
        survivor_ratio=SR_DEFAULT,
    )


def derive_stats_with_reprofile(
    workload: WorkloadSpec,
    cluster: ClusterSpec,
    seed: int,
    allow_reprofile: bool,
) -> tuple[ProfileStats, int]:
    """Profile synthetically; on no-full-gc retry each hinted delta in order."""
    base = default_profiling_layout(cluster, workload)
    attempts = [base]
    if allow_reprofile:
        attempts += [d.layout for d in reprofile_hint(base, cluster)]
    failure: Exception | None = None
    runs = 0
    for layout in attempts:
        try:
            events = synth_profile(workload, layout, cluster, seed + runs)
        except ValueError:  # this delta would abort; try the next one
            continue
        runs += 1
        profile = parse_profile(events_to_jsonl(events))
        try:
            return derive_statistics(profile, layout), runs
        except NoFullGcError as exc:
            failure = exc
    assert failure is not None
    raise failure


def _objective(workload, cluster, space, mode: str, seed: int):
    counter = {"n": 0}

    def run(point: dict) -> tuple[float, bool]:
        layout = space.to_layout(point, cluster)
        counter["n"] += 1
        outcome = simulate(workload, layout, cluster, mode, seed * 100003 + counter["n"])
        return outcome.runtime, outcome.aborted

    return run


def _history_jsonl(result: BoResult, with_features: bool) -> str:
    lines = []
    for rec in result.history:
        row = {"iteration": rec.iteration}
        row.update(rec.point)
        row["y"] = rec.y
        row["failed"] = rec.failed
        row["ei_max"] = rec.ei_max
        row["stopped_reason"] = rec.stopped_reason
        if with_features and rec.features is not None:
            row["q1"], row["q2"], row["q3"] = rec.features
        lines.append(json.dumps(row, sort_keys=True))
    return "\n".join(lines) + "\n"


def _relm_trace_jsonl(rec: Recommendation) -> str:
    lines = []
    for cand in rec.candidates:
        base = {"containers_per_node": cand.containers_per_node, "heap": cand.heap}
        if cand.infeasible_reason:
            lines.append(
                json.dumps({**base, "infeasible": cand.infeasible_reason}, sort_keys=True)
            )
            continue
        for i, step in enumerate(cand.steps, start=1):
            lines.append(
                json.dumps(
                    {
                        **base,
                        "iteration": i,
                        "action": step.action,
                        "task_concurrency": step.task_concurrency,
                        "cache_pool": step.cache_pool,
                        "new_ratio": step.new_ratio,
                        "old_pool": step.old_pool,
                    },
                    sort_keys=True,
                )
            )
        lines.append(
            json.dumps({**base, "utility": cand.config.utility}, sort_keys=True)
        )
    return "\n".join(lines) + "\n"


def _write_outputs(outdir: str | None, record: RunRecord, extra: dict[str, str]) -> None:
    if outdir is None:
        return
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "record.json").write_text(record.to_json())
    for name, text in extra.items():
        (out / name).write_text(text)


def cmd_tune(args) -> int:
    cluster = _load_cluster(args.cluster)
    workload = _load_workload(args.workload) if args.workload else None
    workload_id = Path(args.workload).stem if args.workload else Path(args.profile).stem
    started = time.perf_counter()

    if args.policy == "relm":
        if args.profile:
            profile = parse_profile(_read(args.profile))
            if not args.layout:
                raise InputError("--layout is required with --profile (the profiled geometry)")
            stats = derive_statistics(profile, _load_layout(args.layout))
            profiling_runs = 1
        elif workload is not None:
            stats, profiling_runs = derive_stats_with_reprofile(
                workload, cluster, args.seed, args.reprofile
            )
        else:
            raise InputError("policy=relm needs --profile or --workload")
        rec = tune(stats, cluster, args.delta)
        best_runtime = None
        aborted = 0
        if workload is not None:
            outcome = simulate(workload, rec.layout, cluster)
            best_runtime = outcome.runtime
            aborted = int(outcome.aborted)
        record = RunRecord(
            policy="relm",
            workload=workload_id,
            seed=args.seed,
            evaluations=profiling_runs,
            best_layout=rec.layout,
            best_runtime=best_runtime,
            aborted_evaluations=aborted,
            wall_time_s=time.perf_counter() - started,
        )
        _write_outputs(args.out, record, {"history.jsonl": _relm_trace_jsonl(rec)})
        print(record.to_json(), end="")
        print(f"utility = {rec.utility:.6f}", file=sys.stderr)
        print(f"wall_time_s = {record.wall_time_s:.3f}", file=sys.stderr)
        return EXIT_OK

    if workload is None:
        raise InputError(f"policy={args.policy} needs --workload")
    space = default_search_space(cluster, major_pool_for(workload))
    objective = _objective(workload, cluster, space, args.mode, args.seed)
    stopping = StoppingRule(max_evals=args.max_evals)
    if args.policy == "bo":
        result = bo_loop(objective, space, args.seed, stopping)
    else:
        stats, _ = derive_stats_with_reprofile(workload, cluster, args.seed, True)
        result = gbo_loop(objective, space, stats, cluster, args.seed, stopping, args.delta)
    best_layout = space.to_layout(result.best.point, cluster)
    record = RunRecord(
        policy=args.policy,
        workload=workload_id,
        seed=args.seed,
        evaluations=result.evaluations,
        best_layout=best_layout,
        best_runtime=result.best.y,
        aborted_evaluations=result.failed_evaluations,
        wall_time_s=time.perf_counter() - started,
    )
    _write_outputs(
        args.out, record, {"history.jsonl": _history_jsonl(result, args.policy == "gbo")}
    )
    print(record.to_json(), end="")
    print(f"stopped: {result.stopped_reason}", file=sys.stderr)
    print(f"wall_time_s = {record.wall_time_s:.3f}", file=sys.stderr)
    return EXIT_BUDGET if result.stopped_reason == "budget-exhausted" else EXIT_OK


def cmd_simulate(args) -> int:
    cluster = _load_cluster(args.cluster)
    workload = _load_workload(args.workload)
    layout = _load_layout(args.layout)
    outcome = simulate(workload, layout, cluster, args.mode, args.seed)
    print(outcome.record())
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "outcome.txt").write_text(outcome.record() + "\n")
    return EXIT_OK


def cmd_exhaustive(args) -> int:
    cluster = _load_cluster(args.cluster)
    workload = _load_workload(args.workload)
    rows = exhaustive_grid(workload, cluster)
    csv_text = grid_to_csv(rows)
    if args.out:
        path = Path(args.out)
        if path.suffix != ".csv":
            path.mkdir(parents=True, exist_ok=True)
            path = path / "exhaustive.csv"
        path.write_text(csv_text)
        print(path)
    else:
        print(csv_text, end="")
    return EXIT_OK


def cmd_profile_stats(args) -> int:
    profile = parse_profile(_read(args.profile))
    layout = _load_layout(args.layout)
    stats = derive_statistics(profile, layout)
    print(json.dumps(asdict(stats), sort_keys=True, indent=2))
    return EXIT_OK


def _evals_to_threshold(result: BoResult, threshold: float) -> int | None:
    for rec in result.history:
        if not rec.failed and rec.y <= threshold:
            return rec.iteration
    return None


def _median(values) -> float:
    cleaned = [math.inf if v is None else v for v in values]
    return statistics.median(cleaned)


def cmd_compare(args) -> int:
    cluster = _load_cluster(args.cluster)
    seeds = [int(s) for s in args.seeds.split(",")]
    if not args.workload:
        raise InputError("compare needs at least one --workload")
    outdir = Path(args.out) if args.out else None
    if outdir:
        outdir.mkdir(parents=True, exist_ok=True)

    summary = ["workload,policy,best_runtime_pct_of_optimum,evals_to_top5,failures"]
    for wpath in args.workload:
        workload = _load_workload(wpath)
        wid = Path(wpath).stem
        rows = exhaustive_grid(workload, cluster)
        optimum = rows[0][1].runtime
        runtimes = [o.runtime for _, o in rows]
        threshold = percentile_nearest_rank(runtimes, 0.05)
        summary.append(f"{wid},exhaustive,100.0,{len(rows)},0")

        stats, profiling_runs = derive_stats_with_reprofile(workload, cluster, seeds[0], True)
        rec = tune(stats, cluster, args.delta)
        relm_outcome = simulate(workload, rec.layout, cluster)
        relm_pct = 100.0 * relm_outcome.runtime / optimum
        summary.append(
            f"{wid},relm,{relm_pct:.3f},{profiling_runs},{int(relm_outcome.aborted)}"
        )

        space = default_search_space(cluster, major_pool_for(workload))
        for policy in ("bo", "gbo"):
            pcts, evals, fails = [], [], []
            for seed in seeds:
                objective = _objective(workload, cluster, space, "deterministic", seed)
                stopping = StoppingRule(max_evals=args.max_evals)
                if policy == "bo":
                    result = bo_loop(objective, space, seed, stopping)
                else:
                    result = gbo_loop(objective, space, stats, cluster, seed, stopping, args.delta)
                pcts.append(100.0 * result.best.y / optimum)
                evals.append(_evals_to_threshold(result, threshold))
                fails.append(result.failed_evaluations)
                if outdir:
                    series = "\n".join(
                        f"{rec2.iteration},{min(h.y for h in result.history[: rec2.iteration])}"
                        for rec2 in result.history
                    )
                    (outdir / f"{wid}_{policy}_seed{seed}_convergence.csv").write_text(
                        "evaluation,best_so_far\n" + series + "\n"
                    )
            summary.append(
                f"{wid},{policy},{_median(pcts):.3f},{_median(evals)},{_median(fails)}"
            )
    table = "\n".join(summary) + "\n"
    if outdir:
        (outdir / "compare.csv").write_text(table)
    print(table, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memtuner", description="Memory-layout autotuning toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, workloads="single"):
        p.add_argument("--cluster", required=True, help="cluster config (key-value)")
        if workloads == "single":
            p.add_argument("--workload", help="workload config (key-value)")
        elif workloads == "many":
            p.add_argument("--workload", action="append", default=[])
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="output directory")
        p.add_argument("--mode", choices=("deterministic", "stochastic"), default="deterministic")
        p.add_argument("--max-evals", type=int, default=30)
        p.add_argument("--delta", type=float, default=DELTA_DEFAULT)

    p_tune = sub.add_parser("tune", help="run one tuning policy")
    p_tune.add_argument("--policy", choices=POLICIES, required=True)
    p_tune.add_argument("--profile", help="profile file (line-delimited records)")
    p_tune.add_argument("--layout", help="layout config of the profiled run")
    p_tune.add_argument(
        "--reprofile",
        action="store_true",
        help="retry once with the first hinted delta when no full GC is seen",
    )
    common(p_tune)
    p_tune.set_defaults(func=cmd_tune)

    p_sim = sub.add_parser("simulate", help="simulate one layout")
    p_sim.add_argument("--layout", required=True)
    common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_ex = sub.add_parser("exhaustive", help="evaluate the full grid")
    common(p_ex)
    p_ex.set_defaults(func=cmd_exhaustive)

    p_cmp = sub.add_parser("compare", help="compare policies against the grid optimum")
    p_cmp.add_argument("--seeds", default="0", help="comma-separated seeds")
    common(p_cmp, workloads="many")
    p_cmp.set_defaults(func=cmd_compare)

    p_ps = sub.add_parser("profile-stats", help="derive statistics from a profile")
    p_ps.add_argument("--profile", required=True)
    p_ps.add_argument("--layout", required=True, help="layout config of the profiled run")
    p_ps.set_defaults(func=cmd_profile_stats)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NoFullGcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if getattr(args, "workload", None) and getattr(args, "cluster", None):
            try:
                cluster = _load_cluster(args.cluster)
                workload = _load_workload(args.workload)
                layout = default_profiling_layout(cluster, workload)
                for delta in reprofile_hint(layout, cluster):
                    print(f"hint: {delta.kind}: {to_kv(delta.layout).strip()}", file=sys.stderr)
            except InputError:
                pass
        return EXIT_INFEASIBLE
    except (InsufficientMemoryError, AllCandidatesInfeasibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (
        InputError,
        ProfileParseError,
        EmptyProfileError,
        MissingResourceSamplesError,
        InvariantViolation,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
