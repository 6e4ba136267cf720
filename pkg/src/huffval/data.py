"""Ingestion, validation, filtering and region x category partitioning.

Tables are held as pandas DataFrames. Money is kept as integer minor units
(``amount_minor``) through every aggregation and only converted to float when
model inputs are built.
"""

from __future__ import annotations

import io
import logging
import math
import os
import re
from dataclasses import dataclass, field
from datetime import date, datetime
from typing import IO, Iterable, Mapping, Sequence, Union

import numpy as np
import pandas as pd

from .errors import DegenerateError, IntegrityError, SchemaError

logger = logging.getLogger(__name__)

Source = Union[str, os.PathLike, bytes, IO]

TRANSACTION_COLUMNS = ("customer_id", "merchant_id", "amount", "timestamp", "category_id")
CUSTOMER_COLUMNS = (
    "customer_id", "age", "gender", "marital_status", "education_level", "work_status",
    "income", "home_lat", "home_lon", "work_lat", "work_lon",
)
MERCHANT_COLUMNS = ("merchant_id", "category_id", "district_id", "lat", "lon")
DISTRICT_COLUMNS = ("district_id", "lat_min", "lat_max", "lon_min", "lon_max")
DEMOGRAPHIC_ATTRIBUTES = ("gender", "marital_status", "education_level", "work_status")

DEFAULT_WINDOW = (date(2014, 7, 1), date(2015, 6, 30))
DEFAULT_MIN_TRANSACTIONS = 10

_AMOUNT_RE = re.compile(r"^\s*([+-]?)(\d+)(?:\.(\d*))?\s*$")


@dataclass(frozen=True)
class GeoPoint:
    latitude: float
    longitude: float

    def __post_init__(self):
        if not (math.isfinite(self.latitude) and math.isfinite(self.longitude)):
            raise ValueError("coordinates must be finite")
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude out of range: {self.longitude}")


@dataclass(frozen=True)
class TransactionRecord:
    customer_id: str
    merchant_id: str
    amount_minor: int
    timestamp: datetime
    category_id: str

    def __post_init__(self):
        if self.amount_minor <= 0:
            raise ValueError("amount must be strictly positive")


@dataclass(frozen=True)
class CustomerProfile:
    customer_id: str
    age: float | None
    gender: str | None
    marital_status: str | None
    education_level: str | None
    work_status: str | None
    income: float
    home: GeoPoint
    work: GeoPoint | None = None
    district_id: str | None = None


@dataclass(frozen=True)
class MerchantProfile:
    merchant_id: str
    category_id: str
    district_id: str
    location: GeoPoint
    revenue_minor: int = 0


@dataclass(frozen=True)
class DatasetSummary:
    period: tuple[date, date] | None
    n_transactions: int
    n_customers: int
    avg_transactions_per_customer: float

    def rows(self) -> list[tuple[str, str]]:
        """Table-1 layout: label/value pairs."""
        if self.period is None:
            period = ""
        else:
            period = f"{_long_date(self.period[0])} to {_long_date(self.period[1])}"
        return [
            ("Period", period),
            ("# of transactions", f"{self.n_transactions:,}"),
            ("# of customers", f"{self.n_customers:,}"),
            ("Avg. transactions / customer", f"{self.avg_transactions_per_customer:.2f}"),
        ]


def _long_date(d: date) -> str:
    return f"{d.strftime('%B')} {d.day}, {d.year}"


@dataclass(frozen=True)
class StudyCell:
    """One (district, category) pair with its merchants and patronizing customers.

    ``merchants`` is sorted by merchant_id and carries ``lat``, ``lon`` and
    ``revenue_minor`` columns; ``customers`` is a sorted tuple of ids.
    """

    district_id: str
    category_id: str
    merchants: pd.DataFrame = field(repr=False)
    customers: tuple[str, ...] = field(repr=False)

    def __post_init__(self):
        if len(self.merchants) == 0:
            raise IntegrityError(f"cell ({self.district_id}, {self.category_id}) has no merchants")
        if len(self.customers) == 0:
            raise IntegrityError(f"cell ({self.district_id}, {self.category_id}) has no customers")

    @property
    def key(self) -> tuple[str, str]:
        return (self.district_id, self.category_id)

    @property
    def merchant_ids(self) -> tuple[str, ...]:
        return tuple(self.merchants["merchant_id"])


@dataclass(frozen=True)
class VisitMatrix:
    cell: StudyCell
    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        n_c, n_m = len(self.cell.customers), len(self.cell.merchants)
        if self.counts.shape != (n_c, n_m):
            raise IntegrityError(
                f"visit matrix shape {self.counts.shape} does not match cell ({n_c}, {n_m})")
        if (self.counts < 0).any():
            raise IntegrityError("negative visit count")
        if (self.counts.sum(axis=1) < 1).any():
            raise IntegrityError("visit matrix has a customer row without visits")

    @property
    def customer_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def merchant_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)


@dataclass
class IngestResult:
    """Validated rows plus the rejection report (row_number, reason).

    ``row_number`` is the 1-based index of the data row, header excluded.
    """

    records: pd.DataFrame
    rejections: pd.DataFrame

    @property
    def n_rejected(self) -> int:
        return len(self.rejections)

    @property
    def rejection_fraction(self) -> float:
        total = len(self.records) + len(self.rejections)
        return self.n_rejected / total if total else 0.0


@dataclass
class Dataset:
    transactions: pd.DataFrame
    customers: pd.DataFrame
    merchants: pd.DataFrame
    districts: pd.DataFrame | None = None
    window: tuple[date, date] | None = None


# --------------------------------------------------------------------------
# ingestion

def _read_raw(source: Source) -> pd.DataFrame:
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    return pd.read_csv(source, dtype=str, keep_default_na=False, na_filter=False)


def _apply_schema(raw: pd.DataFrame, required: Sequence[str], schema: Mapping[str, str] | None,
                  optional: Sequence[str] = (), name: str = "input") -> pd.DataFrame:
    schema = dict(schema or {})
    mapping = {canon: schema.get(canon, canon) for canon in (*required, *optional)}
    missing = [canon if mapping[canon] == canon else f"{canon} (as {mapping[canon]!r})"
               for canon in required if mapping[canon] not in raw.columns]
    if missing:
        raise SchemaError(missing, name)
    out = pd.DataFrame(index=raw.index)
    for canon, col in mapping.items():
        if col in raw.columns:
            out[canon] = raw[col].str.strip()
    return out


def _reject(reasons: pd.Series, mask: pd.Series, reason: str) -> None:
    """Record ``reason`` for rows in ``mask`` that have no reason yet."""
    fresh = mask & reasons.isna()
    reasons[fresh] = reason


def parse_amount_minor(text: pd.Series, minor_units: int = 2) -> pd.Series:
    """Parse decimal strings into integer minor units; unparseable -> <NA>."""
    parts = text.str.extract(_AMOUNT_RE)
    sign, whole, frac = parts[0], parts[1], parts[2].fillna("")
    ok = whole.notna() & (frac.str.len() <= minor_units)
    frac = frac.str.ljust(minor_units, "0")
    value = pd.Series(pd.NA, index=text.index, dtype="Int64")
    if ok.any():
        if minor_units:
            digits = whole[ok] + frac[ok]
        else:
            digits = whole[ok]
        mag = digits.astype("int64")
        value[ok] = np.where(sign[ok] == "-", -mag, mag)
    return value


def format_amount(minor: int | np.ndarray | pd.Series, minor_units: int = 2):
    """Inverse of :func:`parse_amount_minor` for positive amounts."""
    if isinstance(minor, (int, np.integer)):
        if minor_units == 0:
            return str(minor)
        q, r = divmod(int(minor), 10 ** minor_units)
        return f"{q}.{r:0{minor_units}d}"
    s = pd.Series(minor).astype("int64")
    if minor_units == 0:
        return s.astype(str)
    q, r = np.divmod(s.to_numpy(), 10 ** minor_units)
    return pd.Series(q, index=s.index).astype(str) + "." + pd.Series(r, index=s.index).astype(str).str.zfill(minor_units)


def _window_bounds(window):
    start, end = window
    lo = pd.Timestamp(start)
    hi = pd.Timestamp(end)
    if isinstance(end, date) and not isinstance(end, datetime):
        hi = hi + pd.Timedelta(days=1)  # whole end day inclusive
        return lo, hi, False
    return lo, hi, True


def ingest_transactions(source: Source, schema: Mapping[str, str] | None = None,
                        window: tuple | None = DEFAULT_WINDOW, minor_units: int = 2) -> IngestResult:
    """Read transactions.csv, validate each row and collect rejections.

    ``schema`` maps canonical column names to the source file's header names.
    ``window`` is a (start, end) pair of dates (end day inclusive) or None.
    """
    raw = _read_raw(source)
    df = _apply_schema(raw, TRANSACTION_COLUMNS, schema, name="transactions")
    reasons = pd.Series(np.nan, index=df.index, dtype=object)

    for col in TRANSACTION_COLUMNS:
        _reject(reasons, df[col] == "", f"missing {col}")

    amount = parse_amount_minor(df["amount"], minor_units)
    _reject(reasons, amount.isna(), "unparseable amount")
    _reject(reasons, amount.fillna(1) <= 0, "non-positive amount")

    ts = pd.to_datetime(df["timestamp"], format="ISO8601", errors="coerce")
    if getattr(ts.dt, "tz", None) is not None:
        ts = ts.dt.tz_convert(None)
    _reject(reasons, ts.isna(), "unparseable timestamp")
    if window is not None:
        lo, hi, closed = _window_bounds(window)
        outside = (ts < lo) | ((ts > hi) if closed else (ts >= hi))
        _reject(reasons, outside.fillna(False), "out of window")

    ok = reasons.isna()
    records = pd.DataFrame({
        "customer_id": df.loc[ok, "customer_id"],
        "merchant_id": df.loc[ok, "merchant_id"],
        "amount_minor": amount[ok].astype("int64"),
        "timestamp": ts[ok],
        "category_id": df.loc[ok, "category_id"],
    }).reset_index(drop=True)
    rejections = _rejection_frame(reasons)
    if len(rejections):
        logger.info("transactions: %d rows rejected", len(rejections))
    return IngestResult(records, rejections)


def _rejection_frame(reasons: pd.Series) -> pd.DataFrame:
    bad = reasons.dropna()
    return pd.DataFrame({"row_number": (bad.index + 1).astype("int64"),
                         "reason": bad.astype(str).to_numpy()})


def _parse_float(text: pd.Series) -> pd.Series:
    return pd.to_numeric(text.mask(text == ""), errors="coerce")


def ingest_customers(source: Source, schema: Mapping[str, str] | None = None,
                     vocabularies: Mapping[str, Iterable[str]] | None = None) -> IngestResult:
    """Read customers.csv.

    Work coordinates may be empty. Empty demographic values are kept as
    missing; values outside a declared vocabulary are rejected. An optional
    ``district_id`` column gives explicit home-district labels.
    """
    raw = _read_raw(source)
    df = _apply_schema(raw, CUSTOMER_COLUMNS, schema, optional=("district_id",), name="customers")
    reasons = pd.Series(np.nan, index=df.index, dtype=object)
    _reject(reasons, df["customer_id"] == "", "missing customer_id")
    _reject(reasons, df["customer_id"].duplicated(keep="first"), "duplicate customer_id")

    age = _parse_float(df["age"])
    _reject(reasons, (df["age"] != "") & (age.isna() | (age < 0)), "invalid age")
    income = _parse_float(df["income"])
    _reject(reasons, income.isna(), "unparseable income")
    _reject(reasons, income < 0, "negative income")

    home_lat, home_lon = _parse_float(df["home_lat"]), _parse_float(df["home_lon"])
    _reject(reasons, ~_valid_coords(home_lat, home_lon), "invalid home location")
    work_lat, work_lon = _parse_float(df["work_lat"]), _parse_float(df["work_lon"])
    work_empty = (df["work_lat"] == "") & (df["work_lon"] == "")
    _reject(reasons, ~work_empty & ~_valid_coords(work_lat, work_lon), "invalid work location")

    attrs = {}
    for attr in DEMOGRAPHIC_ATTRIBUTES:
        col = df[attr].mask(df[attr] == "")
        if vocabularies and attr in vocabularies:
            allowed = set(vocabularies[attr])
            _reject(reasons, col.notna() & ~col.isin(allowed), f"unknown {attr}")
        attrs[attr] = col

    ok = reasons.isna()
    out = pd.DataFrame({
        "customer_id": df["customer_id"],
        "age": age,
        **attrs,
        "income": income,
        "home_lat": home_lat, "home_lon": home_lon,
        "work_lat": work_lat, "work_lon": work_lon,
    })
    if "district_id" in df.columns:
        out["district_id"] = df["district_id"].mask(df["district_id"] == "")
    return IngestResult(out[ok].reset_index(drop=True), _rejection_frame(reasons))


def _valid_coords(lat: pd.Series, lon: pd.Series) -> pd.Series:
    return lat.between(-90, 90) & lon.between(-180, 180)


def ingest_merchants(source: Source, schema: Mapping[str, str] | None = None) -> IngestResult:
    raw = _read_raw(source)
    df = _apply_schema(raw, MERCHANT_COLUMNS, schema, name="merchants")
    reasons = pd.Series(np.nan, index=df.index, dtype=object)
    for col in ("merchant_id", "category_id", "district_id"):
        _reject(reasons, df[col] == "", f"missing {col}")
    _reject(reasons, df["merchant_id"].duplicated(keep="first"), "duplicate merchant_id")
    lat, lon = _parse_float(df["lat"]), _parse_float(df["lon"])
    _reject(reasons, ~_valid_coords(lat, lon), "invalid location")
    ok = reasons.isna()
    out = pd.DataFrame({
        "merchant_id": df["merchant_id"], "category_id": df["category_id"],
        "district_id": df["district_id"], "lat": lat, "lon": lon,
    })
    return IngestResult(out[ok].reset_index(drop=True), _rejection_frame(reasons))


def ingest_districts(source: Source) -> pd.DataFrame:
    """District bounding boxes used for point-in-region home lookup."""
    raw = _read_raw(source)
    df = _apply_schema(raw, DISTRICT_COLUMNS, None, name="districts")
    out = pd.DataFrame({"district_id": df["district_id"]})
    for col in DISTRICT_COLUMNS[1:]:
        out[col] = pd.to_numeric(df[col], errors="raise")
    return out


def assign_home_districts(customers: pd.DataFrame, districts: pd.DataFrame | None) -> pd.Series:
    """Home district per customer: explicit label first, then bounding-box lookup.

    Boxes are tested in table order and the first hit wins. Customers matching
    nothing get <NA>.
    """
    if "district_id" in customers.columns:
        label = customers["district_id"].astype(object)
    else:
        label = pd.Series(np.nan, index=customers.index, dtype=object)
    need = label.isna()
    if need.any() and districts is not None and len(districts):
        lat = customers.loc[need, "home_lat"].to_numpy()[:, None]
        lon = customers.loc[need, "home_lon"].to_numpy()[:, None]
        inside = ((lat >= districts["lat_min"].to_numpy()) & (lat <= districts["lat_max"].to_numpy())
                  & (lon >= districts["lon_min"].to_numpy()) & (lon <= districts["lon_max"].to_numpy()))
        hit = inside.any(axis=1)
        first = inside.argmax(axis=1)
        ids = districts["district_id"].to_numpy()
        found = np.where(hit, ids[first], None)
        label.loc[need] = found
    n_missing = int(label.isna().sum())
    if n_missing:
        logger.warning("%d customers could not be assigned a home district", n_missing)
    return label.rename("home_district")


# --------------------------------------------------------------------------
# filtering and summaries

def filter_active_customers(records: pd.DataFrame, min_count: int = DEFAULT_MIN_TRANSACTIONS) -> pd.DataFrame:
    """Keep all records of customers with at least ``min_count`` transactions."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    if len(records) == 0:
        return records.copy()
    counts = records.groupby("customer_id", sort=False)["customer_id"].transform("size")
    return records[counts >= min_count].reset_index(drop=True)


def summarize(records: pd.DataFrame, customers: Iterable[str] | None = None,
              period: tuple[date, date] | None = None) -> DatasetSummary:
    if customers is None:
        n_customers = int(records["customer_id"].nunique())
    else:
        n_customers = len(set(customers))
    if n_customers == 0:
        raise DegenerateError("average transactions per customer is undefined for zero customers")
    n = len(records)
    return DatasetSummary(period, n, n_customers, n / n_customers)


# --------------------------------------------------------------------------
# revenue, partitioning and visit matrices

@dataclass(frozen=True)
class MerchantRevenue:
    amount_minor: int
    excluded: bool


def merchant_revenue(records: pd.DataFrame, merchant_id: str) -> MerchantRevenue:
    """Total amount over the merchant's transactions; zero flags exclusion."""
    total = int(records.loc[records["merchant_id"] == merchant_id, "amount_minor"].sum())
    return MerchantRevenue(total, total == 0)


def merchant_revenues(records: pd.DataFrame) -> pd.Series:
    """Revenue in minor units for every merchant that appears in ``records``."""
    return records.groupby("merchant_id", sort=True)["amount_minor"].sum().astype("int64")


def attach_merchant_cells(records: pd.DataFrame, merchants: pd.DataFrame) -> pd.DataFrame:
    """Add the merchant's district and category to each record.

    Records whose merchant is absent from the merchant table raise.
    """
    lookup = merchants.set_index("merchant_id")[["district_id", "category_id"]]
    known = records["merchant_id"].isin(lookup.index)
    if not known.all():
        orphans = sorted(records.loc[~known, "merchant_id"].unique())[:10]
        raise IntegrityError(f"transactions reference unknown merchants: {orphans}")
    out = records.copy()
    out["district_id"] = lookup["district_id"].reindex(records["merchant_id"]).to_numpy()
    out["merchant_category"] = lookup["category_id"].reindex(records["merchant_id"]).to_numpy()
    mismatched = int((out["merchant_category"] != out["category_id"]).sum())
    if mismatched:
        logger.warning("%d transactions carry a category different from their merchant's", mismatched)
    return out


def partition(records: pd.DataFrame, merchants: pd.DataFrame, regions: Sequence[str],
              categories: Sequence[str]) -> list[StudyCell]:
    """One StudyCell per (district, category) with at least one transacting merchant.

    Cells are returned in (regions order, categories order). A transaction is
    assigned by its merchant's district and category.
    """
    regions = [str(r) for r in regions]
    unknown = sorted(set(merchants["district_id"]) - set(regions))
    if unknown:
        raise IntegrityError(f"merchants reference unknown districts: {unknown[:10]}")
    tagged = attach_merchant_cells(records, merchants)
    revenue = merchant_revenues(tagged)
    merch = merchants.set_index("merchant_id")
    groups = {key: g for key, g in tagged.groupby(["district_id", "merchant_category"], sort=False)}
    cells = []
    for district in regions:
        for category in categories:
            g = groups.get((district, category))
            if g is None or len(g) == 0:
                logger.info("cell (%s, %s) has no transacting merchants; omitted", district, category)
                continue
            ids = np.sort(g["merchant_id"].unique())
            rev = revenue.reindex(ids).to_numpy()
            ids = ids[rev > 0]
            if len(ids) == 0:
                logger.info("cell (%s, %s) has only zero-revenue merchants; omitted", district, category)
                continue
            m = merch.loc[ids, ["category_id", "district_id", "lat", "lon"]].reset_index()
            m["revenue_minor"] = revenue.reindex(ids).to_numpy()
            customers = tuple(np.sort(g.loc[g["merchant_id"].isin(ids), "customer_id"].unique()))
            cells.append(StudyCell(district, category, m, customers))
    return cells


def cell_records(records: pd.DataFrame, cell: StudyCell) -> pd.DataFrame:
    return records[records["merchant_id"].isin(cell.merchants["merchant_id"])]


def build_visit_matrix(cell: StudyCell, records: pd.DataFrame) -> VisitMatrix:
    """Count one visit per transaction of customer i at merchant j inside the cell."""
    sub = cell_records(records, cell)
    merchant_ids = cell.merchants["merchant_id"].to_numpy()
    customer_ids = np.asarray(cell.customers)
    rows = np.searchsorted(customer_ids, sub["customer_id"].to_numpy())
    cols = np.searchsorted(merchant_ids, sub["merchant_id"].to_numpy())
    rows_ok = (rows < len(customer_ids)) & (customer_ids[np.minimum(rows, len(customer_ids) - 1)]
                                           == sub["customer_id"].to_numpy())
    if not rows_ok.all():
        raise IntegrityError(f"cell {cell.key}: records reference customers outside the cell")
    counts = np.zeros((len(customer_ids), len(merchant_ids)), dtype=np.int64)
    np.add.at(counts, (rows, cols), 1)
    return VisitMatrix(cell, counts)


def to_float_money(minor, minor_units: int = 2):
    return np.asarray(minor, dtype=float) / 10 ** minor_units
