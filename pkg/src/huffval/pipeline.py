"""In-memory batch steps shared by the CLI: load, partition, fit, tabulate."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from . import data as core
from .errors import DegenerateError, SingularDesignError
from .geo import DistanceHistogram, DistancePolicy, visit_weighted_histogram
from .huff import (CellModelInputs, HuffFitResult, build_cell_inputs, degenerate_result,
                   fit_cell, fit_loglinear)
from .indicators import indicator_table
from .pso import SwarmConfig
from .regress import (RegressionReport, build_regression_dataset, regress_dataset)
from .rng import substream_seed

logger = logging.getLogger(__name__)

FIT_COLUMNS = ["category_id", "district_id", "avg_distance", "alpha", "beta", "pearson_r", "p_value",
               "estimator", "hit_alpha_bound", "hit_beta_bound", "n_customers", "n_merchants"]
EXCLUSION_COLUMNS = ["category_id", "district_id", "reason"]
SUMMARY_COLUMNS = ["Merchant category", "Mean", "Std", "Max", "Min"]


@dataclass
class LoadedData:
    dataset: core.Dataset
    rejections: dict[str, pd.DataFrame]
    n_rows: dict[str, int]

    @property
    def rejection_fraction(self) -> float:
        rejected = sum(len(r) for r in self.rejections.values())
        total = sum(self.n_rows.values())
        return rejected / total if total else 0.0


def load_dataset(input_dir, window=core.DEFAULT_WINDOW, minor_units: int = 2,
                 vocabularies: Mapping | None = None) -> LoadedData:
    d = Path(input_dir)
    tx = core.ingest_transactions(d / "transactions.csv", window=window, minor_units=minor_units)
    cu = core.ingest_customers(d / "customers.csv", vocabularies=vocabularies)
    me = core.ingest_merchants(d / "merchants.csv")
    districts = core.ingest_districts(d / "districts.csv") if (d / "districts.csv").exists() else None
    customers = cu.records.copy()
    customers["home_district"] = core.assign_home_districts(customers, districts).to_numpy()
    ds = core.Dataset(tx.records, customers, me.records, districts, window)
    rejections = {"transactions": tx.rejections, "customers": cu.rejections, "merchants": me.rejections}
    n_rows = {"transactions": len(tx.records) + len(tx.rejections),
              "customers": len(cu.records) + len(cu.rejections),
              "merchants": len(me.records) + len(me.rejections)}
    return LoadedData(ds, rejections, n_rows)


def district_list(ds: core.Dataset) -> list[str]:
    if ds.districts is not None:
        return [str(x) for x in ds.districts["district_id"]]
    return sorted(ds.merchants["district_id"].astype(str).unique(), key=_natural)


def _natural(s: str):
    return (0, int(s), "") if s.isdigit() else (1, 0, s)


def active_records(ds: core.Dataset, min_transactions: int = core.DEFAULT_MIN_TRANSACTIONS,
                   categories: Sequence[str] | None = None) -> pd.DataFrame:
    """Transactions of active customers (global count), restricted to known customers."""
    records = ds.transactions
    known = records["customer_id"].isin(ds.customers["customer_id"])
    n_unknown = int((~known).sum())
    if n_unknown:
        logger.warning("%d transactions reference customers without a profile; dropped", n_unknown)
        records = records[known]
    records = core.filter_active_customers(records, min_transactions)
    if categories is not None:
        records = records[records["category_id"].isin(list(categories))]
    return records.reset_index(drop=True)


def build_inputs(ds: core.Dataset, records: pd.DataFrame, categories: Sequence[str],
                 policy: DistancePolicy, minor_units: int = 2, districts: Sequence[str] | None = None,
                 per_cell_min: int | None = None, attractiveness: pd.Series | None = None
                 ) -> list[CellModelInputs]:
    """Partition into cells and assemble model inputs, in (district, category) order.

    ``attractiveness`` (currency units by merchant_id) replaces the derived
    revenue, e.g. to fit against a generator's exogenous revenue.
    """
    regions = district_list(ds)
    cells = core.partition(records, ds.merchants, regions, categories)
    if districts is not None:
        wanted = {str(d) for d in districts}
        cells = [c for c in cells if c.district_id in wanted]
    cust = ds.customers.set_index("customer_id")
    tagged = core.attach_merchant_cells(records, ds.merchants)
    groups = {k: g for k, g in tagged.groupby(["district_id", "merchant_category"], sort=False)}
    out = []
    for cell in cells:
        sub = groups[cell.key]
        vm = core.build_visit_matrix(cell, sub)
        if per_cell_min:
            keep = vm.customer_totals >= per_cell_min
            if not keep.all():
                if not keep.any():
                    logger.info("cell %s: no customer reaches the per-cell minimum", cell.key)
                    continue
                cell = core.StudyCell(cell.district_id, cell.category_id, cell.merchants,
                                      tuple(np.asarray(cell.customers)[keep]))
                vm = core.VisitMatrix(cell, vm.counts[keep])
        out.append(build_cell_inputs(vm, cust, policy, minor_units, attractiveness))
    return out


def _fit_one(args) -> HuffFitResult:
    inputs, config, seed, estimator = args
    try:
        if estimator == "loglinear":
            return fit_loglinear(inputs, config.bounds)
        return fit_cell(inputs, config, seed)
    except (DegenerateError, SingularDesignError) as exc:
        logger.info("cell (%s, %s) degenerate: %s", inputs.district_id, inputs.category_id, exc)
        return degenerate_result(inputs, estimator, str(exc))


def fit_all(inputs: Sequence[CellModelInputs], config: SwarmConfig, seed: int, workers: int = 1,
            estimator: str = "pso") -> list[HuffFitResult]:
    """Fit every cell; each draws from its own ``fit.cell.<district>.<category>`` stream."""
    jobs = [(inp, config, substream_seed(seed, f"fit.cell.{inp.district_id}.{inp.category_id}"), estimator)
            for inp in inputs]
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_fit_one, jobs, chunksize=1))
    return [_fit_one(j) for j in jobs]


def fits_frame(results: Iterable[HuffFitResult]) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Appendix-layout fit rows and the exclusion list for degenerate cells."""
    rows, excluded = [], []
    for r in results:
        if r.degenerate:
            excluded.append({"category_id": r.category_id, "district_id": r.district_id, "reason": r.reason})
            continue
        rows.append({
            "category_id": r.category_id, "district_id": r.district_id,
            "avg_distance": r.avg_distance_km, "alpha": r.params.alpha, "beta": r.params.beta,
            "pearson_r": r.score, "p_value": r.p_value, "estimator": r.estimator,
            "hit_alpha_bound": bool(r.hit_bounds[0]), "hit_beta_bound": bool(r.hit_bounds[1]),
            "n_customers": r.n_customers, "n_merchants": r.n_merchants,
        })
    return (pd.DataFrame(rows, columns=FIT_COLUMNS), pd.DataFrame(excluded, columns=EXCLUSION_COLUMNS))


def performance_summary(fits: pd.DataFrame, categories: Sequence[str],
                        names: Mapping[str, str] | None = None) -> pd.DataFrame:
    """Mean/Std/Max/Min of Pearson r per category (sample std; 0 for one cell)."""
    rows = []
    for c in categories:
        r = fits.loc[fits["category_id"] == c, "pearson_r"].to_numpy(float)
        if len(r) == 0:
            logger.warning("category %s has no non-degenerate cells; omitted from summary", c)
            continue
        std = float(np.std(r, ddof=1)) if len(r) > 1 else 0.0
        rows.append({"Merchant category": (names or {}).get(c, c), "Mean": float(r.mean()), "Std": std,
                     "Max": float(r.max()), "Min": float(r.min())})
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def cell_histograms(inputs: Sequence[CellModelInputs], bin_width_km: float = 1.0) -> list[DistanceHistogram]:
    return [visit_weighted_histogram(i.distances, i.counts, bin_width_km, i.district_id, i.category_id)
            for i in inputs]


def category_histograms(inputs: Sequence[CellModelInputs], categories: Sequence[str],
                        bin_width_km: float = 1.0) -> list[DistanceHistogram]:
    """Visit-weighted distance histogram pooled over each category's cells."""
    out = []
    for c in categories:
        sel = [i for i in inputs if i.category_id == c]
        if not sel:
            continue
        d = np.concatenate([i.distances.ravel() for i in sel])
        w = np.concatenate([i.counts.ravel() for i in sel])
        out.append(visit_weighted_histogram(d, w, bin_width_km, "all", c))
    return out


def histograms_frame(hists: Sequence[DistanceHistogram]) -> pd.DataFrame:
    frames = []
    for h in hists:
        f = h.to_frame()
        f.insert(0, "district_id", h.district_id)
        f.insert(0, "category_id", h.category_id)
        frames.append(f)
    cols = ["category_id", "district_id", "bin_lo", "bin_hi", "weight"]
    return pd.concat(frames, ignore_index=True)[cols] if frames else pd.DataFrame(columns=cols)


def compute_indicators(ds: core.Dataset, records: pd.DataFrame, categories: Sequence[str] | None = None
                       ) -> pd.DataFrame:
    """Indicator table over active customers and the configured categories' merchants."""
    active = set(records["customer_id"].unique())
    customers = ds.customers[ds.customers["customer_id"].isin(active)]
    merchants = ds.merchants
    if categories is not None:
        merchants = merchants[merchants["category_id"].isin(list(categories))]
    return indicator_table(district_list(ds), records, customers, merchants)


def run_regressions(fits: pd.DataFrame, indicators: pd.DataFrame, categories: Sequence[str],
                    exclusions: pd.DataFrame | None = None
                    ) -> tuple[dict[str, RegressionReport], list, dict[str, str]]:
    """Per-category regressions plus the pooled one (key ``pooled``).

    Returns the reports, the excluded cells, and the reason for every scope
    that could not be estimated.
    """
    frame = fits[["district_id", "category_id", "pearson_r"]].copy()
    frame["degenerate"] = False
    frame["reason"] = ""
    if exclusions is not None and len(exclusions):
        ex = exclusions[["district_id", "category_id", "reason"]].copy()
        ex["pearson_r"] = np.nan
        ex["degenerate"] = True
        frame = pd.concat([frame, ex], ignore_index=True)
    reports: dict[str, RegressionReport] = {}
    excluded = []
    skipped: dict[str, str] = {}
    for scope in [*categories, None]:
        key = scope if scope is not None else "pooled"
        try:
            ds = build_regression_dataset(frame, indicators, scope)
            excluded.extend(ds.excluded if scope is not None else [])
            reports[key] = regress_dataset(ds)
        except (DegenerateError, SingularDesignError) as exc:
            skipped[key] = str(exc)
    return reports, excluded, skipped
