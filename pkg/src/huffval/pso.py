"""Global-best particle swarm maximization over a rectangular box."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, InitializationError


@dataclass(frozen=True)
class SwarmConfig:
    """Swarm hyperparameters.

    Defaults are the common constriction-equivalent coefficients
    (inertia 0.7298, cognitive = social = 1.49618).
    """

    swarm_size: int = 40
    max_iterations: int = 200
    inertia: float = 0.7298
    cognitive: float = 1.49618
    social: float = 1.49618
    tolerance: float = 1e-6
    stall_iterations: int = 25
    bounds: tuple[tuple[float, float], ...] = ((0.0, 100.0), (0.0, 100.0))

    def __post_init__(self):
        object.__setattr__(self, "bounds", tuple((float(lo), float(hi)) for lo, hi in self.bounds))
        if self.swarm_size < 2:
            raise ConfigError("swarm_size must be >= 2")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if not 0.0 < self.inertia < 1.0:
            raise ConfigError("inertia must lie in (0, 1)")
        if not self.tolerance > 0:
            raise ConfigError("tolerance must be > 0")
        if self.stall_iterations < 1:
            raise ConfigError("stall_iterations must be >= 1")
        if not self.bounds:
            raise ConfigError("at least one dimension is required")
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ConfigError(f"invalid bounds [{lo}, {hi}]")

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.bounds])


@dataclass
class OptimizationResult:
    best_point: np.ndarray
    best_value: float
    iterations_used: int
    evaluations: int
    hit_bounds: tuple[bool, ...]
    converged: bool
    trace: list[tuple[int, float, tuple[float, ...]]] = field(default_factory=list, repr=False)

    def write_trace(self, path) -> None:
        """(iteration, best_value, best_point) rows for convergence plots."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            dims = len(self.best_point)
            w.writerow(["iteration", "best_value", *[f"x{k}" for k in range(dims)]])
            for it, val, point in self.trace:
                w.writerow([it, repr(val), *map(repr, point)])


def _safe_eval(objective, x) -> float:
    try:
        v = float(objective(x))
    except (ArithmeticError, ValueError):
        return -math.inf
    return v if math.isfinite(v) else -math.inf


def maximize(objective: Callable[[np.ndarray], float], config: SwarmConfig = SwarmConfig(),
             seed: int = 0, evaluate_batch: Callable[[Sequence[np.ndarray]], Sequence[float]] | None = None,
             initial_points: Sequence[Sequence[float]] | None = None) -> OptimizationResult:
    """Maximize ``objective`` over ``config.bounds``.

    Non-finite objective values (and ValueError/ArithmeticError raised by the
    objective) count as -inf and never become the incumbent. Positions that
    leave the box are clamped and the offending velocity component is zeroed.
    Stops after ``max_iterations`` or once the global best has improved by
    less than ``tolerance`` for ``stall_iterations`` consecutive iterations.

    ``initial_points`` (clamped into the box) replace the first uniformly drawn
    particle positions; the random draws themselves are unchanged.

    ``evaluate_batch`` may replace the per-particle loop (e.g. to evaluate a
    swarm in parallel); it must return values in particle order.
    """
    rng = np.random.default_rng(seed)
    lo, hi = config.lower, config.upper
    n, dims = config.swarm_size, len(lo)
    span = hi - lo

    def evaluate(points):
        if evaluate_batch is not None:
            vals = [float(v) for v in evaluate_batch([p.copy() for p in points])]
            return np.array([v if math.isfinite(v) else -math.inf for v in vals])
        return np.array([_safe_eval(objective, p.copy()) for p in points])

    x = lo + rng.random((n, dims)) * span
    v = (rng.random((n, dims)) * 2.0 - 1.0) * span / 4.0
    if initial_points is not None and len(initial_points):
        seeds = np.clip(np.asarray(initial_points, dtype=float).reshape(-1, dims), lo, hi)[:n]
        x[:len(seeds)] = seeds
    fx = evaluate(x)
    evaluations = n
    if not np.isfinite(fx).any():
        raise InitializationError("objective is non-finite at every initial particle")

    pbest, pbest_val = x.copy(), fx.copy()
    g = int(np.argmax(pbest_val))  # first index wins ties
    gbest, gbest_val = pbest[g].copy(), float(pbest_val[g])
    trace = [(0, gbest_val, tuple(map(float, gbest)))]

    stall = 0
    converged = False
    iterations = 0
    for it in range(1, config.max_iterations + 1):
        iterations = it
        r1 = rng.random((n, dims))
        r2 = rng.random((n, dims))
        v = (config.inertia * v + config.cognitive * r1 * (pbest - x)
             + config.social * r2 * (gbest - x))
        x = x + v
        below, above = x < lo, x > hi
        out = below | above
        x = np.where(below, lo, np.where(above, hi, x))
        v = np.where(out, 0.0, v)

        fx = evaluate(x)
        evaluations += n
        better = fx > pbest_val
        pbest[better] = x[better]
        pbest_val[better] = fx[better]

        g = int(np.argmax(pbest_val))
        previous = gbest_val
        if pbest_val[g] > gbest_val:
            gbest, gbest_val = pbest[g].copy(), float(pbest_val[g])
        trace.append((it, gbest_val, tuple(map(float, gbest))))

        if gbest_val - previous < config.tolerance:
            stall += 1
        else:
            stall = 0
        if stall >= config.stall_iterations:
            converged = True
            break

    hit = tuple(bool(gbest[k] <= lo[k] or gbest[k] >= hi[k]) for k in range(dims))
    return OptimizationResult(gbest, gbest_val, iterations, evaluations, hit, converged, trace)
