"""Gaussian-process surrogate, expected improvement, and the tuning loop.

The surrogate is deliberately simple and fully deterministic: a squared
exponential kernel with fixed length-scales on inputs normalized to the
unit cube, a constant prior mean equal to the sample mean, and noise
proportional to the sample variance. No hyperparameter optimization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import erf

from .core import SR_DEFAULT, ClusterSpec, MemoryLayout

LHS_BOOTSTRAP = 4
LENGTH_SCALE = 0.3  # per normalized dimension
NOISE_VAR_FRAC = 1e-4  # of the sample variance
_JITTER = 1e-12
_CANDIDATES = 1000
_REFINE_STARTS = 5
_REFINE_STEPS = 50


class NotPositiveDefiniteError(ValueError):
    """The covariance could not be factored; raise the noise variance."""


@dataclass(frozen=True)
class Dimension:
    name: str
    kind: str  # "integer" | "continuous"
    lower: float
    upper: float

    def __post_init__(self) -> None:
        if self.kind not in ("integer", "continuous"):
            raise ValueError(f"kind must be integer|continuous, got {self.kind!r}")
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ValueError(f"{self.name}: bounds must be finite")
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower must be < upper")


@dataclass(frozen=True)
class SearchSpace:
    """Tunable dimensions plus the major/minor capacity-pool assignment."""

    dimensions: tuple[Dimension, ...]
    major_pool: str = "cache"  # which of cache/shuffle the capacity axis drives
    minor_pool_frac: float = 0.1

    def __post_init__(self) -> None:
        if self.major_pool not in ("cache", "shuffle"):
            raise ValueError(f"major_pool must be cache|shuffle, got {self.major_pool!r}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.dimensions)

    def normalize(self, point: dict) -> np.ndarray:
        return np.array(
            [(point[d.name] - d.lower) / (d.upper - d.lower) for d in self.dimensions]
        )

    def from_unit(self, unit: np.ndarray) -> dict:
        point = {}
        for j, d in enumerate(self.dimensions):
            v = d.lower + float(unit[j]) * (d.upper - d.lower)
            if d.kind == "integer":
                point[d.name] = int(np.clip(round(v), d.lower, d.upper))
            else:
                point[d.name] = v
        return point

    def snap_unit(self, unit: np.ndarray) -> np.ndarray:
        """Round integer dimensions to representable values, in unit space."""
        out = np.array(unit, dtype=float, copy=True)
        for j, d in enumerate(self.dimensions):
            if d.kind != "integer":
                continue
            span = d.upper - d.lower
            vals = np.clip(np.rint(d.lower + out[..., j] * span), d.lower, d.upper)
            out[..., j] = (vals - d.lower) / span
        return out

    def to_layout(self, point: dict, cluster: ClusterSpec) -> MemoryLayout:
        n = int(point["containers_per_node"])
        major = float(point["major_capacity_frac"])
        if self.major_pool == "cache":
            cache, shuffle = major, self.minor_pool_frac
        else:
            cache, shuffle = self.minor_pool_frac, major
        return MemoryLayout(
            containers_per_node=n,
            heap=cluster.node_heap // n,
            task_concurrency=int(point["task_concurrency"]),
            cache_capacity_frac=cache,
            shuffle_capacity_frac=shuffle,
            new_ratio=int(point["new_ratio"]),
            survivor_ratio=SR_DEFAULT,
        )


def default_search_space(cluster: ClusterSpec, major_pool: str = "cache") -> SearchSpace:
    """Containers, concurrency, dominant capacity fraction, and NewRatio."""
    max_containers = cluster.node_heap // cluster.min_container_heap
    return SearchSpace(
        dimensions=(
            Dimension("containers_per_node", "integer", 1, max(2, max_containers)),
            Dimension("task_concurrency", "integer", 1, cluster.cores_per_node),
            Dimension("major_capacity_frac", "continuous", 0.1, 0.9),
            Dimension("new_ratio", "integer", 1, 9),
        ),
        major_pool=major_pool,
    )


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def lhs_grid(k: int, d: int, seed) -> np.ndarray:
    """A (k, d) Latin hypercube on the unit cube.

    Each dimension's range is split into k equal strata and each stratum
    is used exactly once, at its midpoint; the pairing across dimensions
    is permuted by the seeded generator.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    rng = _rng(seed)
    grid = np.empty((k, d))
    for j in range(d):
        grid[:, j] = (rng.permutation(k) + 0.5) / k
    return grid


def lhs_sample(space: SearchSpace, k: int, seed) -> list[dict]:
    """k stratified samples over the space, integer dimensions snapped."""
    unit = space.snap_unit(lhs_grid(k, len(space.dimensions), seed))
    return [space.from_unit(row) for row in unit]


# --- Gaussian process -------------------------------------------------------


@dataclass(frozen=True)
class GpHyper:
    length_scales: np.ndarray
    signal_var: float
    noise_var: float


@dataclass(frozen=True)
class GpModel:
    inputs: np.ndarray  # (n, d), normalized to the unit cube
    targets: np.ndarray  # (n,)
    prior_mean: float
    hyper: GpHyper
    chol: np.ndarray = field(repr=False)  # lower factor of K + noise * I
    alpha: np.ndarray = field(repr=False)  # (K + noise * I)^-1 (y - mean)


def kernel(hyper: GpHyper, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = (a[:, None, :] - b[None, :, :]) / hyper.length_scales
    return hyper.signal_var * np.exp(-0.5 * np.sum(diff * diff, axis=-1))


def default_hyper(dims: int, targets) -> GpHyper:
    var = float(np.var(np.asarray(targets, dtype=float)))
    return GpHyper(
        length_scales=np.full(dims, LENGTH_SCALE),
        signal_var=var,
        noise_var=NOISE_VAR_FRAC * var + _JITTER,
    )


def gp_fit(
    inputs, targets, hyper: GpHyper | None = None, prior_mean: float | None = None
) -> GpModel:
    """Fit the surrogate on inputs already normalized to the unit cube."""
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float)
    if x.shape[0] == 0:
        raise ValueError("at least one observation is required")
    if x.shape[0] != y.shape[0]:
        raise ValueError("inputs and targets disagree in length")
    if hyper is None:
        hyper = default_hyper(x.shape[1], y)
    if prior_mean is None:
        prior_mean = float(np.mean(y))
    cov = kernel(hyper, x, x) + hyper.noise_var * np.eye(x.shape[0])
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError(
            "covariance is not positive definite (duplicate points with zero "
            "noise?); raise noise_var"
        ) from None
    z = solve_triangular(chol, y - prior_mean, lower=True)
    alpha = solve_triangular(chol.T, z, lower=False)
    return GpModel(x, y, prior_mean, hyper, chol, alpha)


def gp_posterior(model: GpModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance at x; variance clamped at zero.

    Accepts a single point (d,) or a batch (m, d); returns matching shapes.
    """
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    cross = kernel(model.hyper, model.inputs, pts)  # (n, m)
    mean = model.prior_mean + cross.T @ model.alpha
    v = solve_triangular(model.chol, cross, lower=True)  # (n, m)
    var = np.maximum(model.hyper.signal_var - np.sum(v * v, axis=0), 0.0)
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def _std_normal_cdf(z):
    return 0.5 * (1.0 + erf(np.asarray(z) / math.sqrt(2.0)))


def _std_normal_pdf(z):
    z = np.asarray(z)
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def expected_improvement(mean, std, best):
    """EI of a minimizer: how far below `best` the point is expected to land.

    With zero predictive spread this degenerates to max(0, best - mean).
    """
    scalar = np.ndim(mean) == 0 and np.ndim(std) == 0
    mean, std = np.broadcast_arrays(
        np.atleast_1d(np.asarray(mean, dtype=float)),
        np.atleast_1d(np.asarray(std, dtype=float)),
    )
    improvement = best - mean
    out = np.maximum(improvement, 0.0)
    active = std > 0
    if np.any(active):
        z = improvement[active] / std[active]
        out[active] = improvement[active] * _std_normal_cdf(z) + std[active] * _std_normal_pdf(z)
    return float(out[0]) if scalar else out


def _ei_batch(model: GpModel, points: np.ndarray, best: float) -> np.ndarray:
    mean, var = gp_posterior(model, points)
    return np.asarray(expected_improvement(mean, np.sqrt(var), best))


# --- acquisition search -----------------------------------------------------


FeatureFn = Callable[[np.ndarray], np.ndarray]
"""Maps a (m, d) unit-cube batch to (m, e) extra kernel coordinates."""


def _with_features(unit: np.ndarray, features: FeatureFn | None) -> np.ndarray:
    if features is None:
        return unit
    extra = np.atleast_2d(features(np.atleast_2d(unit)))
    return np.hstack([np.atleast_2d(unit), extra])


def suggest_next(
    model: GpModel, space: SearchSpace, seed, features: FeatureFn | None = None
) -> dict:
    point, _ = propose(model, space, seed, features)
    return point


def propose(
    model: GpModel, space: SearchSpace, seed, features: FeatureFn | None = None
) -> tuple[dict, float]:
    """Best EI point: 1000 seeded uniform candidates, then hill climbs.

    The candidate block is the first (1000, d) uniform draw from the
    seeded generator, integer dimensions snapped before scoring, so
    callers can reproduce it. Coordinate-wise step-halving refinement
    runs from the five best candidates; the refined point never scores
    below any raw candidate.
    """
    rng = _rng(seed)
    d = len(space.dimensions)
    best_y = float(np.min(model.targets))
    cand = space.snap_unit(rng.uniform(size=(_CANDIDATES, d)))
    scores = _ei_batch(model, _with_features(cand, features), best_y)
    order = np.argsort(-scores, kind="stable")[:_REFINE_STARTS]

    best_u = cand[order[0]]
    best_ei = float(scores[order[0]])
    for idx in order:
        u = cand[idx]
        ei = float(scores[idx])
        step = 0.25
        for _ in range(_REFINE_STEPS):
            neighbors = np.repeat(u[None, :], 2 * d, axis=0)
            for j in range(d):
                neighbors[2 * j, j] = min(1.0, u[j] + step)
                neighbors[2 * j + 1, j] = max(0.0, u[j] - step)
            neighbors = space.snap_unit(neighbors)
            eis = _ei_batch(model, _with_features(neighbors, features), best_y)
            top = int(np.argmax(eis))
            if eis[top] > ei:
                u, ei = neighbors[top], float(eis[top])
            else:
                step *= 0.5
                if step < 1e-4:
                    break
        if ei > best_ei:
            best_u, best_ei = u, ei
    return space.from_unit(best_u), best_ei


# --- sequential loop --------------------------------------------------------


@dataclass(frozen=True)
class StoppingRule:
    ei_frac: float = 0.10  # stop once max EI falls below this share of the best
    min_new: int = 6  # but only after this many post-bootstrap evaluations
    max_evals: int = 30


@dataclass(frozen=True)
class Observation:
    point: dict
    y: float
    failed: bool


@dataclass(frozen=True)
class HistoryRecord:
    iteration: int
    point: dict
    y: float
    failed: bool
    ei_max: float | None
    features: tuple[float, ...] | None = None
    stopped_reason: str | None = None


@dataclass(frozen=True)
class BoResult:
    best: Observation
    history: tuple[HistoryRecord, ...]
    stopped_reason: str  # "converged" | "budget-exhausted"

    @property
    def evaluations(self) -> int:
        return len(self.history)

    @property
    def failed_evaluations(self) -> int:
        return sum(1 for h in self.history if h.failed)


Objective = Callable[[dict], tuple[float, bool]]

_FALLBACK_BASELINE = 1.0  # anchors the failure penalty before any observation


def bo_loop(
    objective: Objective,
    space: SearchSpace,
    seed,
    stopping: StoppingRule | None = None,
    features: FeatureFn | None = None,
) -> BoResult:
    """Bootstrap with a Latin hypercube, then fit, suggest, and evaluate
    until expected improvement collapses or the budget runs out.

    A failed evaluation is recorded at twice the worst successful result
    so far (twice the first recorded result when nothing has succeeded
    yet), which keeps failing regions ranked last.
    """
    stop = stopping or StoppingRule()
    if stop.max_evals < LHS_BOOTSTRAP:
        raise ValueError(f"max_evals must be >= {LHS_BOOTSTRAP}")
    seq = np.random.SeedSequence(seed)
    children = seq.spawn(1 + stop.max_evals)

    history: list[HistoryRecord] = []
    successes: list[float] = []

    def recorded_y(raw: float, failed: bool) -> float:
        if not failed:
            if not raw > 0:
                raise ValueError(f"objective must return y > 0, got {raw}")
            return float(raw)
        if successes:
            return 2.0 * max(successes)
        if history:  # nothing succeeded yet: keep doubling the baseline
            return 2.0 * max(h.y for h in history)
        if math.isfinite(raw) and raw > 0:  # the failed run's own magnitude
            return 2.0 * raw
        return 2.0 * _FALLBACK_BASELINE

    def fit_targets() -> list[float]:
        # Failed records are repriced to one flat ceiling before fitting;
        # their frozen values would otherwise fake a gradient inside the
        # failing region and the surrogate would chase it.
        if successes:
            ceiling = 2.0 * max(successes)
        else:
            ceiling = max(h.y for h in history)
        return [ceiling if h.failed else h.y for h in history]

    def evaluate(point: dict, ei_max: float | None) -> None:
        raw, failed = objective(point)
        y = recorded_y(raw, failed)
        if not failed:
            successes.append(y)
        extras = None
        if features is not None:
            extras = tuple(float(v) for v in np.atleast_2d(
                features(space.normalize(point)[None, :]))[0])
        history.append(
            HistoryRecord(len(history) + 1, dict(point), y, failed, ei_max, extras)
        )

    for point in lhs_sample(space, LHS_BOOTSTRAP, np.random.default_rng(children[0])):
        evaluate(point, None)

    reason = "budget-exhausted"
    while len(history) < stop.max_evals:
        xs = np.array(
            [
                _with_features(space.normalize(h.point)[None, :], features)[0]
                for h in history
            ]
        )
        ys = fit_targets()
        model = gp_fit(xs, ys)
        rng = np.random.default_rng(children[1 + len(history)])
        point, ei_max = propose(model, space, rng, features)
        best_y = min(ys)
        if len(history) - LHS_BOOTSTRAP >= stop.min_new and ei_max < stop.ei_frac * best_y:
            reason = "converged"
            break
        evaluate(point, ei_max)

    history[-1] = replace(history[-1], stopped_reason=reason)
    best = min(history, key=lambda h: (h.y, h.iteration))
    return BoResult(
        best=Observation(best.point, best.y, best.failed),
        history=tuple(history),
        stopped_reason=reason,
    )
