"""Huff gravity model: utilities, choice probabilities and cell-level fitting.

Utilities are evaluated in log space, ``alpha * log A - beta * log D``, so the
full [0, 100] exponent box stays finite. With an exponent of zero the term
vanishes, which is the x**0 == 1 convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data import VisitMatrix, to_float_money
from .errors import DegenerateCorrelationError, InsufficientSampleError, SingularDesignError
from .geo import DistancePolicy, distance_matrix
from .pso import SwarmConfig, maximize
from .regress import two_sided_p

DEFAULT_BOX = ((0.0, 100.0), (0.0, 100.0))


@dataclass(frozen=True)
class HuffParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha >= 0 and self.beta >= 0):
            raise ValueError(f"Huff exponents must be non-negative, got ({self.alpha}, {self.beta})")

    def within(self, box=DEFAULT_BOX) -> bool:
        (alo, ahi), (blo, bhi) = box
        return alo <= self.alpha <= ahi and blo <= self.beta <= bhi


@dataclass(frozen=True)
class CellModelInputs:
    """Attractiveness per merchant, customer x merchant distances and visits."""

    attractiveness: np.ndarray
    distances: np.ndarray
    counts: np.ndarray
    district_id: str = ""
    category_id: str = ""
    customer_ids: np.ndarray | None = field(default=None, repr=False)
    merchant_ids: np.ndarray | None = field(default=None, repr=False)
    log_a: np.ndarray = field(init=False, repr=False)
    log_d: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        a = np.asarray(self.attractiveness, dtype=float)
        d = np.asarray(self.distances, dtype=float)
        v = np.asarray(self.counts)
        if d.ndim != 2 or v.shape != d.shape or a.shape != (d.shape[1],):
            raise ValueError(f"inconsistent shapes: A {a.shape}, D {d.shape}, V {v.shape}")
        if not (a > 0).all():
            raise ValueError("attractiveness values must be strictly positive")
        if not (d > 0).all():
            raise ValueError("distances must be strictly positive")
        object.__setattr__(self, "attractiveness", a)
        object.__setattr__(self, "distances", d)
        object.__setattr__(self, "counts", v)
        object.__setattr__(self, "log_a", np.log(a))
        object.__setattr__(self, "log_d", np.log(d))

    @property
    def n_customers(self) -> int:
        return self.distances.shape[0]

    @property
    def n_merchants(self) -> int:
        return self.distances.shape[1]

    @property
    def customer_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def actual_distribution(self) -> np.ndarray:
        return self.counts.sum(axis=0).astype(float)

    @property
    def avg_distance_km(self) -> float:
        w = self.counts
        return float((self.distances * w).sum() / w.sum())


@dataclass
class HuffFitResult:
    district_id: str
    category_id: str
    params: HuffParams | None
    score: float
    p_value: float
    avg_distance_km: float
    estimator: str
    degenerate: bool = False
    reason: str = ""
    hit_bounds: tuple[bool, bool] = (False, False)
    n_customers: int = 0
    n_merchants: int = 0
    trace: list | None = field(default=None, repr=False)

    @property
    def key(self) -> tuple[str, str]:
        return (self.district_id, self.category_id)


def utility(attractiveness: float, distance: float, params: HuffParams) -> float:
    """A**alpha / D**beta."""
    if not attractiveness > 0 or not distance > 0:
        raise ValueError("attractiveness and distance must be strictly positive")
    log_u = 0.0
    if params.alpha != 0:
        log_u += params.alpha * math.log(attractiveness)
    if params.beta != 0:
        log_u -= params.beta * math.log(distance)
    return math.exp(log_u)


def probability_matrix(inputs: CellModelInputs, params: HuffParams) -> np.ndarray:
    """P[i, j] over every merchant of the cell; each row sums to one."""
    log_u = np.zeros_like(inputs.log_d)
    if params.alpha != 0:
        log_u += params.alpha * inputs.log_a
    if params.beta != 0:
        log_u -= params.beta * inputs.log_d
    log_u -= log_u.max(axis=1, keepdims=True)
    h = np.exp(log_u)
    return h / h.sum(axis=1, keepdims=True)


def choice_probabilities(inputs: CellModelInputs, params: HuffParams, customer_row: int) -> np.ndarray:
    log_u = np.zeros(inputs.n_merchants)
    if params.alpha != 0:
        log_u += params.alpha * inputs.log_a
    if params.beta != 0:
        log_u -= params.beta * inputs.log_d[customer_row]
    log_u -= log_u.max()
    h = np.exp(log_u)
    total = h.sum()
    if not total > 0:
        raise DegenerateCorrelationError("all utilities are zero")
    return h / total


def expected_visit_distribution(inputs: CellModelInputs, params: HuffParams) -> np.ndarray:
    """E_j = sum_i N_i P_ij with N_i the customer's in-cell visit total."""
    return inputs.customer_totals.astype(float) @ probability_matrix(inputs, params)


def pearson(x, y) -> tuple[float, float]:
    """Sample correlation and its two-sided p-value (t test, n - 2 dof)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if len(y) != n:
        raise ValueError("vectors must have equal length")
    if n < 3:
        raise InsufficientSampleError(f"Pearson correlation needs n >= 3, got {n}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0 or not (np.isfinite(sxx) and np.isfinite(syy)):
        raise DegenerateCorrelationError("correlation is undefined for a constant vector")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return r, two_sided_p(t, n - 2)


def check_scorable(inputs: CellModelInputs) -> None:
    if inputs.n_merchants < 3:
        raise InsufficientSampleError(f"cell has {inputs.n_merchants} merchant(s); need >= 3")
    actual = inputs.actual_distribution
    if np.all(actual == actual[0]):
        raise DegenerateCorrelationError("actual visit distribution is constant")


def cell_score(inputs: CellModelInputs, params: HuffParams) -> float:
    """Pearson r between expected and observed per-merchant visit totals."""
    check_scorable(inputs)
    return pearson(expected_visit_distribution(inputs, params), inputs.actual_distribution)[0]


def _score_objective(inputs: CellModelInputs):
    n_i = inputs.customer_totals.astype(float)
    actual = inputs.actual_distribution
    ay = actual - actual.mean()
    syy = float(ay @ ay)
    log_a, neg_log_d = inputs.log_a, -inputs.log_d

    def objective(point) -> float:
        alpha, beta = float(point[0]), float(point[1])
        buf = neg_log_d * beta  # fresh per call, so concurrent calls are safe
        np.add(buf, alpha * log_a, out=buf)
        np.subtract(buf, buf.max(axis=1, keepdims=True), out=buf)
        np.exp(buf, out=buf)
        e = (n_i / buf.sum(axis=1)) @ buf
        ex = e - e.mean()
        sxx = float(ex @ ex)
        if not sxx > 0:
            return -math.inf
        return float(ex @ ay) / math.sqrt(sxx * syy)

    return objective


def _result(inputs: CellModelInputs, params: HuffParams, estimator: str,
            hit_bounds=(False, False)) -> HuffFitResult:
    try:
        r, p = pearson(expected_visit_distribution(inputs, params), inputs.actual_distribution)
    except DegenerateCorrelationError as exc:
        # e.g. an estimate at (0, 0): the expected distribution is flat, so r is undefined
        return HuffFitResult(inputs.district_id, inputs.category_id, params, float("nan"), float("nan"),
                             inputs.avg_distance_km, estimator, degenerate=True, reason=str(exc),
                             hit_bounds=tuple(hit_bounds), n_customers=inputs.n_customers,
                             n_merchants=inputs.n_merchants)
    return HuffFitResult(inputs.district_id, inputs.category_id, params, r, p,
                         inputs.avg_distance_km, estimator, hit_bounds=tuple(hit_bounds),
                         n_customers=inputs.n_customers, n_merchants=inputs.n_merchants)


def degenerate_result(inputs: CellModelInputs, estimator: str, reason: str) -> HuffFitResult:
    return HuffFitResult(inputs.district_id, inputs.category_id, None, float("nan"), float("nan"),
                         inputs.avg_distance_km, estimator, degenerate=True, reason=reason,
                         n_customers=inputs.n_customers, n_merchants=inputs.n_merchants)


# low-magnitude lattice placed into the swarm next to the uniform draws; the
# well-fitting region near the origin is tiny relative to the [0, 100]^2 box
SEED_LATTICE = tuple((a, b) for a in (0.3, 0.8, 1.5, 3.0) for b in (0.3, 0.8, 1.5, 3.0))


def fit_cell(inputs: CellModelInputs, config: SwarmConfig | None = None, seed: int = 0,
             seed_lattice=SEED_LATTICE) -> HuffFitResult:
    """PSO estimate of (alpha, beta) maximizing the cell's Pearson score.

    Deterministic given ``seed``. ``seed_lattice`` points (clamped to the box)
    replace the first particles of the initial swarm; pass ``()`` for a purely
    uniform start.
    """
    config = config or SwarmConfig(bounds=DEFAULT_BOX)
    check_scorable(inputs)
    opt = maximize(_score_objective(inputs), config, seed, initial_points=seed_lattice or None)
    params = HuffParams(float(opt.best_point[0]), float(opt.best_point[1]))
    result = _result(inputs, params, "pso", opt.hit_bounds)
    result.trace = opt.trace
    return result


def fit_loglinear(inputs: CellModelInputs, box=DEFAULT_BOX) -> HuffFitResult:
    """Log-centred least squares estimate of (alpha, beta).

    Within each customer, log(S_ij / G_i) = alpha (log A_j - L_i)
    - beta (log D_ij - M_i), with G_i, L_i, M_i geometric-mean centring. Zero
    shares become 0.5 / N_i before taking logs.
    """
    check_scorable(inputs)
    counts = inputs.counts.astype(float)
    n_i = counts.sum(axis=1, keepdims=True)
    shares = counts / n_i
    shares = np.where(counts > 0, shares, 0.5 / n_i)
    return _loglinear_from_shares(inputs, shares, box)


def _loglinear_from_shares(inputs: CellModelInputs, shares: np.ndarray, box=DEFAULT_BOX) -> HuffFitResult:
    log_s = np.log(shares)
    y = (log_s - log_s.mean(axis=1, keepdims=True)).ravel()
    xa = np.broadcast_to(inputs.log_a - inputs.log_a.mean(), log_s.shape).ravel()
    xd = (inputs.log_d - inputs.log_d.mean(axis=1, keepdims=True)).ravel()
    design = np.column_stack([xa, xd])
    coef, _, rank, sv = np.linalg.lstsq(design, y, rcond=None)
    if rank < 2:
        names = [n for n, col in (("attractiveness", xa), ("distance", xd)) if not np.any(col)]
        raise SingularDesignError("insufficient variation in log-linear regressors", names or ["attractiveness", "distance"])
    (alo, ahi), (blo, bhi) = box
    raw_alpha, raw_beta = float(coef[0]), float(-coef[1])
    alpha = min(max(raw_alpha, alo), ahi)
    beta = min(max(raw_beta, blo), bhi)
    hit = (alpha in (alo, ahi) and raw_alpha != alpha, beta in (blo, bhi) and raw_beta != beta)
    return _result(inputs, HuffParams(alpha, beta), "loglinear", hit)


def fit_loglinear_shares(inputs: CellModelInputs, shares: np.ndarray, box=DEFAULT_BOX) -> HuffFitResult:
    """Log-linear estimate from given strictly positive shares (e.g. noiseless P)."""
    shares = np.asarray(shares, dtype=float)
    if shares.shape != inputs.distances.shape or not (shares > 0).all():
        raise ValueError("shares must be strictly positive with the cell's shape")
    return _loglinear_from_shares(inputs, shares, box)


def build_cell_inputs(visit_matrix: VisitMatrix, customers: pd.DataFrame,
                      policy: DistancePolicy = DistancePolicy(), minor_units: int = 2,
                      attractiveness: pd.Series | None = None) -> CellModelInputs:
    """Model inputs for one cell; ``customers`` is indexed by customer_id.

    Attractiveness is the merchant revenue derived from the transactions,
    unless ``attractiveness`` (currency units indexed by merchant_id) is given.
    """
    cell = visit_matrix.cell
    cust = customers.loc[list(cell.customers)]
    d = distance_matrix(cust, cell.merchants, policy)
    if attractiveness is None:
        a = to_float_money(cell.merchants["revenue_minor"].to_numpy(), minor_units)
    else:
        a = attractiveness.reindex(cell.merchants["merchant_id"]).to_numpy(dtype=float)
        if np.isnan(a).any():
            raise ValueError(f"cell {cell.key}: attractiveness override misses some merchants")
    return CellModelInputs(a, d, visit_matrix.counts, cell.district_id, cell.category_id,
                           np.asarray(cell.customers), cell.merchants["merchant_id"].to_numpy())
