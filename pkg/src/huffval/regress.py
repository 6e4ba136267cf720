"""Standardized OLS of per-cell Huff performance on district indicators."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.optimize import brentq

from ._special import betainc
from .errors import IntegrityError, SingularDesignError, StandardizationError

logger = logging.getLogger(__name__)

# regressor column -> display label, in table order
INDICATOR_LABELS = {
    "mobility_diversity": "Mobility diversity",
    "merchant_diversity": "Merchant diversity",
    "merchant_share_bias": "Merchant monopoly",
    "gender_diversity": "Gender diversity",
    "marital_diversity": "Marital status diversity",
    "education_diversity": "Education level diversity",
    "job_diversity": "Job status diversity",
    "income_gini": "Income inequality",
}
INDICATOR_COLUMNS = tuple(INDICATOR_LABELS)


def t_distribution_sf(t: float, dof: float) -> float:
    """Upper-tail probability P(T > t) of Student's t with ``dof`` degrees of freedom."""
    if dof < 1:
        raise ValueError("dof must be >= 1")
    if math.isnan(t):
        return float("nan")
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    tail = 0.5 * betainc(dof / 2.0, 0.5, dof / (dof + t * t))
    return tail if t >= 0 else 1.0 - tail


def two_sided_p(t: float, dof: float) -> float:
    return min(1.0, 2.0 * t_distribution_sf(abs(t), dof))


def t_quantile(q: float, dof: float) -> float:
    """Inverse CDF of Student's t for 0 < q < 1."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    if q == 0.5:
        return 0.0
    if q < 0.5:
        return -t_quantile(1.0 - q, dof)
    upper = 1.0 - q
    hi = 1.0
    while t_distribution_sf(hi, dof) > upper:
        hi *= 2.0
    return brentq(lambda t: t_distribution_sf(t, dof) - upper, 0.0, hi, xtol=1e-14, rtol=1e-15)


def zscore(column) -> np.ndarray:
    """(x - mean) / sample standard deviation."""
    x = np.asarray(column, dtype=float)
    if x.size < 2:
        raise StandardizationError("need at least two values to standardize")
    sd = x.std(ddof=1)
    if not sd > 0 or not np.isfinite(sd):
        raise StandardizationError("zero variance column")
    z = (x - x.mean()) / sd
    return z - z.mean()


@dataclass(frozen=True)
class CoefficientEstimate:
    name: str
    beta: float
    std_error: float
    t_stat: float
    p_value: float
    ci95_lo: float
    ci95_hi: float

    @property
    def significant_05(self) -> bool:
        return self.p_value < 0.05

    @property
    def significant_01(self) -> bool:
        return self.p_value < 0.01

    @property
    def stars(self) -> str:
        return significance_stars(self.p_value)


def significance_stars(p: float) -> str:
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


@dataclass
class RegressionReport:
    scope: str
    coefficients: list[CoefficientEstimate]
    r_squared: float
    adjusted_r_squared: float
    n_obs: int
    dof_residual: int
    intercept: CoefficientEstimate | None = None
    degenerate: bool = False
    dropped: list[str] = field(default_factory=list)

    def coefficient(self, name: str) -> CoefficientEstimate:
        for c in self.coefficients:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_frame(self) -> pd.DataFrame:
        rows = [c for c in ([self.intercept] if self.intercept else []) + self.coefficients]
        return pd.DataFrame([{
            "scope": self.scope, "name": c.name, "beta": c.beta, "std_error": c.std_error,
            "t_stat": c.t_stat, "p_value": c.p_value, "ci95_lo": c.ci95_lo, "ci95_hi": c.ci95_hi,
            "stars": c.stars,
        } for c in rows], columns=["scope", "name", "beta", "std_error", "t_stat", "p_value",
                                   "ci95_lo", "ci95_hi", "stars"])

    def coefficient_table(self) -> str:
        """Aligned text table: indicator, beta with stars, 95% interval."""
        header = ("Indicator", "β coefficient", "Confidence interval (95%)")
        body = []
        for c in self.coefficients:
            label = INDICATOR_LABELS.get(c.name, c.name)
            body.append((label, f"{c.beta:.4f}{c.stars}", f"[{c.ci95_lo:.4f}, {c.ci95_hi:.4f}]"))
        w0 = max(len(header[0]), *(len(r[0]) for r in body)) if body else len(header[0])
        w1 = max(len(header[1]), *(len(r[1]) for r in body)) if body else len(header[1])
        w2 = max(len(header[2]), *(len(r[2]) for r in body)) if body else len(header[2])
        lines = [f"{header[0]:<{w0}}  {header[1]:>{w1}}  {header[2]:>{w2}}",
                 "-" * (w0 + w1 + w2 + 4)]
        lines += [f"{a:<{w0}}  {b:>{w1}}  {c:>{w2}}" for a, b, c in body]
        lines.append(f"n = {self.n_obs}, R2 = {self.r_squared:.3f}, adjusted R2 = {self.adjusted_r_squared:.3f}")
        return "\n".join(lines) + "\n"


def _dependent_columns(X: np.ndarray, names: Sequence[str], tol: float) -> list[str]:
    _, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > tol * diag[0])) if diag.size and diag[0] > 0 else 0
    return [names[k] for k in piv[rank:]]


def ols_fit(X, y, intercept: bool = True, names: Sequence[str] | None = None,
            scope: str = "") -> RegressionReport:
    """Ordinary least squares via QR, with t-based inference.

    ``p`` counts the regressors excluding the intercept, residual degrees of
    freedom are n - p - 1 with an intercept and n - p without.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if names is None:
        names = [f"x{k + 1}" for k in range(p)]
    names = list(names)
    if len(y) != n:
        raise ValueError("X and y have different numbers of rows")
    design = np.column_stack([np.ones(n), X]) if intercept else X
    all_names = (["const"] if intercept else []) + names
    k = design.shape[1]
    dof = n - k
    if dof <= 0:
        raise SingularDesignError(f"need more observations than parameters (n={n}, k={k})")

    tol = max(n, k) * np.finfo(float).eps * 100
    q, r = np.linalg.qr(design, mode="reduced")
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag.min() <= tol * max(diag.max(), 1.0):
        dep = _dependent_columns(design, all_names, tol)
        raise SingularDesignError(f"design matrix is rank deficient; dependent columns: {dep}", dep)
    beta = scipy.linalg.solve_triangular(r, q.T @ y)
    resid = y - design @ beta
    rss = float(resid @ resid)
    centre = y.mean() if intercept else 0.0
    tss = float(np.sum((y - centre) ** 2))

    if tss == 0.0:
        r2 = 0.0
        degenerate = True
    else:
        r2 = 1.0 - rss / tss
        degenerate = False
    denom_p = k - 1 if intercept else k
    adj = 1.0 - (1.0 - r2) * (n - 1) / (n - denom_p - 1) if intercept else 1.0 - (1.0 - r2) * n / dof

    s2 = rss / dof
    r_inv = scipy.linalg.solve_triangular(r, np.eye(k))
    cov_unscaled = r_inv @ r_inv.T
    se = np.sqrt(s2 * np.diag(cov_unscaled))
    tcrit = t_quantile(0.975, dof)
    coefs = []
    if tss == 0.0:
        se = np.zeros(k)  # constant response: nothing to explain, inference is void
    for name, b, s in zip(all_names, beta, se):
        if s > 0:
            t = b / s
            pval = two_sided_p(t, dof)
        else:
            degenerate = True
            t, pval = 0.0, 1.0
        coefs.append(CoefficientEstimate(name, float(b), float(s), float(t), float(pval),
                                         float(b - tcrit * s), float(b + tcrit * s)))
    report = RegressionReport(scope, coefs[1:] if intercept else coefs, float(r2), float(adj),
                              n, dof, coefs[0] if intercept else None, degenerate)
    return report


@dataclass
class RegressionDataset:
    scope: str
    frame: pd.DataFrame  # keys + raw columns
    y: np.ndarray
    X: np.ndarray
    columns: list[str]
    excluded: list[tuple[str, str, str]] = field(default_factory=list)
    dropped: list[str] = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return len(self.y)


def build_regression_dataset(fit_results: Iterable, indicators: pd.DataFrame,
                             category_filter: str | None = None,
                             columns: Sequence[str] = INDICATOR_COLUMNS) -> RegressionDataset:
    """Join per-cell Pearson scores to the district indicators and z-score everything.

    ``fit_results`` are HuffFitResult objects or a DataFrame with district_id,
    category_id, pearson_r and an optional ``degenerate`` column.
    Degenerate cells are excluded (and logged); zero-variance indicator
    columns are dropped with a warning.
    """
    if isinstance(fit_results, pd.DataFrame):
        fits = fit_results.copy()
    else:
        fits = pd.DataFrame([{
            "district_id": f.district_id, "category_id": f.category_id,
            "pearson_r": f.score, "degenerate": f.degenerate, "reason": f.reason,
        } for f in fit_results])
    if "degenerate" not in fits:
        fits["degenerate"] = False
    if "reason" not in fits:
        fits["reason"] = ""
    fits["district_id"] = fits["district_id"].astype(str)
    fits["category_id"] = fits["category_id"].astype(str)
    if category_filter is not None:
        fits = fits[fits["category_id"] == str(category_filter)]
    excluded = []
    bad = fits["degenerate"].astype(bool) | fits["pearson_r"].isna()
    for _, row in fits[bad].iterrows():
        reason = row["reason"] or "missing score"
        excluded.append((row["district_id"], row["category_id"], reason))
        logger.info("excluding cell (%s, %s) from regression: %s", row["district_id"], row["category_id"], reason)
    fits = fits[~bad]

    ind = indicators.copy()
    ind["district_id"] = ind["district_id"].astype(str)
    ind = ind.set_index("district_id")
    orphans = sorted(set(fits["district_id"]) - set(ind.index))
    if orphans:
        cells = fits[fits["district_id"].isin(orphans)][["district_id", "category_id"]]
        raise IntegrityError(f"cells without district indicators: {list(map(tuple, cells.to_numpy()))}")
    joined = fits[["district_id", "category_id", "pearson_r"]].join(ind[list(columns)], on="district_id")
    joined = joined.sort_values(["category_id", "district_id"], kind="mergesort").reset_index(drop=True)
    missing = joined[list(columns)].isna().any(axis=1)
    for _, row in joined[missing].iterrows():
        excluded.append((row["district_id"], row["category_id"], "undefined indicator"))
    joined = joined[~missing].reset_index(drop=True)

    y = zscore(joined["pearson_r"].to_numpy())
    kept, xs, dropped = [], [], []
    for col in columns:
        try:
            xs.append(zscore(joined[col].to_numpy()))
            kept.append(col)
        except StandardizationError:
            logger.warning("dropping indicator %s: zero variance", col)
            dropped.append(col)
    X = np.column_stack(xs) if xs else np.empty((len(y), 0))
    scope = category_filter if category_filter is not None else "pooled"
    return RegressionDataset(str(scope), joined, y, X, kept, excluded, dropped)


def regress_dataset(ds: RegressionDataset, intercept: bool = True) -> RegressionReport:
    report = ols_fit(ds.X, ds.y, intercept=intercept, names=ds.columns, scope=ds.scope)
    report.dropped = list(ds.dropped)
    return report


def adjusted_r2_table(reports: Mapping[str, RegressionReport],
                      names: Mapping[str, str] | None = None) -> pd.DataFrame:
    """One row per scope: merchant category label and adjusted R^2."""
    names = names or {}
    return pd.DataFrame({"Merchant category": [names.get(k, k) for k in reports],
                         "Adjusted R2 score": [r.adjusted_r_squared for r in reports.values()]})
