"""District-level diversity and inequality indicators.

Entropies are in nats. Each function takes plain tables (transactions,
customers with a ``home_district`` column, merchants) and one district id.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from .errors import UndefinedIndicatorError

logger = logging.getLogger(__name__)

ATTRIBUTE_FIELDS = {
    "gender": "gender_diversity",
    "marital_status": "marital_diversity",
    "education_level": "education_diversity",
    "work_status": "job_diversity",
}
TOP_K = 5


def shannon_entropy(counts) -> float:
    c = np.asarray(counts, dtype=float)
    if c.size == 0 or (c < 0).any():
        raise UndefinedIndicatorError("counts must be a non-empty non-negative vector")
    total = c.sum()
    if total <= 0:
        raise UndefinedIndicatorError("entropy is undefined for all-zero counts")
    p = c[c > 0] / total
    h = float(-(p * np.log(p)).sum())
    return max(h, 0.0)


def _residents(customers: pd.DataFrame, district_id) -> pd.DataFrame:
    return customers[customers["home_district"].astype(str) == str(district_id)]


def mobility_diversity(district_id, records: pd.DataFrame, customers: pd.DataFrame,
                       merchants: pd.DataFrame) -> float:
    """Entropy of destination districts over all transactions by the district's residents."""
    ids = _residents(customers, district_id)["customer_id"]
    tx = records[records["customer_id"].isin(ids)]
    if len(tx) == 0:
        raise UndefinedIndicatorError(f"district {district_id}: residents have no transactions")
    dest = merchants.set_index("merchant_id")["district_id"].reindex(tx["merchant_id"])
    return shannon_entropy(dest.value_counts().to_numpy())


def demographic_diversity(district_id, customers: pd.DataFrame, attribute: str) -> float:
    """Entropy of one demographic attribute among residents; missing values are skipped."""
    if attribute not in ATTRIBUTE_FIELDS:
        raise ValueError(f"unknown attribute {attribute!r}")
    res = _residents(customers, district_id)
    values = res[attribute].dropna()
    values = values[values.astype(str) != ""]
    skipped = len(res) - len(values)
    if skipped:
        logger.debug("district %s: %d residents without %s", district_id, skipped, attribute)
    if len(values) == 0:
        raise UndefinedIndicatorError(f"district {district_id}: no residents with {attribute}")
    return shannon_entropy(values.value_counts().to_numpy())


def merchant_diversity(district_id, merchants: pd.DataFrame) -> float:
    m = merchants[merchants["district_id"].astype(str) == str(district_id)]
    if len(m) == 0:
        raise UndefinedIndicatorError(f"district {district_id} has no merchants")
    return shannon_entropy(m["category_id"].value_counts().to_numpy())


def top_share(revenues: pd.Series, k: int = TOP_K) -> float:
    """Share of the k largest revenues; ties broken by merchant id ascending."""
    rev = revenues[revenues > 0]
    total = rev.sum()
    if len(rev) == 0 or total <= 0:
        raise UndefinedIndicatorError("share bias is undefined without revenue")
    frame = pd.DataFrame({"merchant_id": rev.index.astype(str), "revenue": rev.to_numpy()})
    frame = frame.sort_values(["revenue", "merchant_id"], ascending=[False, True], kind="mergesort")
    return float(frame["revenue"].iloc[:k].sum() / total)


def merchant_share_bias(district_id, records: pd.DataFrame, merchants: pd.DataFrame) -> float:
    """Top-5 merchants' transaction amount over the district's total amount."""
    ids = merchants.loc[merchants["district_id"].astype(str) == str(district_id), "merchant_id"]
    tx = records[records["merchant_id"].isin(ids)]
    if len(tx) == 0:
        raise UndefinedIndicatorError(f"district {district_id} has no transactions")
    return top_share(tx.groupby("merchant_id")["amount_minor"].sum())


def gini(incomes) -> float:
    """Mean absolute pairwise difference over twice the mean, zeros filtered out."""
    x = np.asarray(incomes, dtype=float)
    x = x[x > 0]
    n = len(x)
    if n < 2:
        raise UndefinedIndicatorError("Gini needs at least two positive incomes")
    x = np.sort(x)
    # sum_i sum_j |x_i - x_j| = 2 * sum_k (2k - n - 1) x_(k) for sorted x, k = 1..n
    k = np.arange(1, n + 1)
    pair_sum = 2.0 * float(np.sum((2 * k - n - 1) * x))
    return max(0.0, pair_sum / (2.0 * n * n * x.mean()))


@dataclass(frozen=True)
class DistrictIndicators:
    district_id: str
    mobility_diversity: float
    gender_diversity: float
    marital_diversity: float
    education_diversity: float
    job_diversity: float
    merchant_diversity: float
    merchant_share_bias: float
    income_gini: float
    n_customers_income: int
    reason: str = ""


INDICATOR_FIELDS = ("district_id", "mobility_diversity", "gender_diversity", "marital_diversity",
                    "education_diversity", "job_diversity", "merchant_diversity",
                    "merchant_share_bias", "income_gini", "n_customers_income", "reason")


def district_indicators(district_id, records: pd.DataFrame, customers: pd.DataFrame,
                        merchants: pd.DataFrame) -> DistrictIndicators:
    """All indicators for one district; undefined values become NaN with a reason."""
    reasons = []

    def attempt(name, fn, *args):
        try:
            return fn(*args)
        except UndefinedIndicatorError as exc:
            reasons.append(f"{name}: {exc}")
            return float("nan")

    values = {
        "mobility_diversity": attempt("mobility_diversity", mobility_diversity, district_id, records,
                                      customers, merchants),
    }
    for attr, name in ATTRIBUTE_FIELDS.items():
        values[name] = attempt(name, demographic_diversity, district_id, customers, attr)
    values["merchant_diversity"] = attempt("merchant_diversity", merchant_diversity, district_id, merchants)
    values["merchant_share_bias"] = attempt("merchant_share_bias", merchant_share_bias, district_id,
                                            records, merchants)
    incomes = _residents(customers, district_id)["income"].to_numpy(dtype=float)
    values["income_gini"] = attempt("income_gini", gini, incomes)
    n_income = int(np.sum(incomes > 0))
    return DistrictIndicators(str(district_id), n_customers_income=n_income, reason="; ".join(reasons),
                              **values)


def indicator_table(districts, records: pd.DataFrame, customers: pd.DataFrame,
                    merchants: pd.DataFrame) -> pd.DataFrame:
    rows = [asdict(district_indicators(d, records, customers, merchants)) for d in districts]
    return pd.DataFrame(rows, columns=list(INDICATOR_FIELDS))
