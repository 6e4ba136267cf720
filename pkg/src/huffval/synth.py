"""Synthetic city whose customers patronize merchants by a known Huff model.

Generation runs in three passes, each district drawing from its own named
substream of the master seed:

1. ``synth.district.<id>.merchants``: merchant locations and the exogenous
   revenues used as attractiveness while sampling.
2. ``synth.district.<id>.customers``: residents (locations, demographics,
   income) and their visits. A visit first picks a destination district
   (home with the customer's own stay probability, Beta-distributed around
   the district's, otherwise a proximity-weighted other district), then a merchant of that district from the Huff
   probabilities under the category's true parameters.
3. ``synth.district.<id>.amounts``: amount and timestamp per visit at the
   district's merchants.

Under the default ``ticket_model="proportional"`` merchant j's mean ticket is
A_j / E_j (E_j its expected visit count), so re-derived revenue equals the
generator's A_j up to sampling noise. ``"common"`` draws every ticket from one
category-wide distribution instead.
"""

from __future__ import annotations

import io
import json
import logging
import math
import zipfile
from dataclasses import asdict, dataclass, field
from datetime import date
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .data import DEFAULT_WINDOW, Dataset, format_amount
from .errors import ConfigError
from .geo import EARTH_RADIUS_KM, DistancePolicy, distance_matrix
from .huff import HuffParams
from .rng import substream

logger = logging.getLogger(__name__)

DEFAULT_CATEGORIES = ("5411", "5541", "5691", "5812")
CATEGORY_NAMES = {"5411": "Grocery", "5541": "GS", "5691": "Clothing", "5812": "Restaurant"}
DEFAULT_TRUE_PARAMS = ((1.0, 2.0), (0.5, 1.0), (2.0, 0.5), (0.0, 0.0))
DEFAULT_VOCABULARIES = {
    "gender": ("female", "male"),
    "marital_status": ("single", "married", "divorced", "widowed"),
    "education_level": ("primary", "secondary", "bachelor", "graduate"),
    "work_status": ("private", "public", "self_employed", "unemployed", "retired"),
}
KM_PER_DEG_LAT = math.pi * EARTH_RADIUS_KM / 180.0


def _pair(value) -> tuple[float, float]:
    if isinstance(value, (int, float)):
        return (value, value)
    lo, hi = value
    return (lo, hi)


@dataclass
class CityConfig:
    n_districts: int = 17
    district_ids: Sequence[str] | None = None
    district_boxes: Sequence[Sequence[float]] | None = None  # (lat_min, lat_max, lon_min, lon_max)
    origin: tuple[float, float] = (41.0, 28.9)
    district_size_km: float = 6.0
    customers_per_district: int | Sequence[int] = 500
    categories: Sequence[str] = DEFAULT_CATEGORIES
    merchants_per_category: int | tuple[int, int] = (20, 30)
    true_params: Mapping[str, Sequence[float]] | None = None
    visits_per_customer: int | tuple[int, int] = 60
    stay_probability: float | tuple[float, float] = (0.75, 0.95)
    stay_concentration: float = 1.0
    mobility_scale_km: float = 6.0
    work_fraction: float = 0.6
    revenue_log_mean: float = 11.0
    revenue_log_sigma: float = 1.0
    ticket_model: str = "proportional"
    ticket_log_mean: float = 3.5
    amount_sigma: float = 0.3
    income_log_mean: float = 10.3
    income_log_sigma: float | tuple[float, float] = (0.3, 0.9)
    zero_income_rate: float = 0.05
    demographic_concentration: float = 4.0
    vocabularies: Mapping[str, Sequence[str]] = field(default_factory=lambda: dict(DEFAULT_VOCABULARIES))
    noise_rate: float = 0.0
    policy: DistancePolicy = field(default_factory=DistancePolicy)
    window: tuple[date, date] = DEFAULT_WINDOW
    minor_units: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.district_ids is None:
            self.district_ids = [str(k + 1) for k in range(self.n_districts)]
        self.district_ids = [str(d) for d in self.district_ids]
        if len(self.district_ids) != self.n_districts:
            raise ConfigError("district_ids length must equal n_districts")
        if len(set(self.district_ids)) != self.n_districts:
            raise ConfigError("district ids must be unique")
        self.categories = [str(c) for c in self.categories]
        if self.true_params is None:
            self.true_params = {c: DEFAULT_TRUE_PARAMS[k % len(DEFAULT_TRUE_PARAMS)]
                                for k, c in enumerate(self.categories)}
        self.true_params = {str(c): tuple(map(float, p)) for c, p in self.true_params.items()}
        for c in self.categories:
            if c not in self.true_params:
                raise ConfigError(f"no true parameters for category {c}")
            a, b = self.true_params[c]
            if not (0 <= a <= 100 and 0 <= b <= 100):
                raise ConfigError(f"true parameters for {c} outside [0, 100]^2")
        if isinstance(self.customers_per_district, int):
            self.customers_per_district = [self.customers_per_district] * self.n_districts
        self.customers_per_district = [int(n) for n in self.customers_per_district]
        if len(self.customers_per_district) != self.n_districts or min(self.customers_per_district) < 1:
            raise ConfigError("customers_per_district must give >= 1 customer per district")
        lo, hi = _pair(self.merchants_per_category)
        if lo < 1 or hi < lo:
            raise ConfigError("merchants_per_category must be >= 1")
        lo, hi = _pair(self.visits_per_customer)
        if lo < 1 or hi < lo:
            raise ConfigError("visits_per_customer must be >= 1")
        lo, hi = _pair(self.stay_probability)
        if not (0 <= lo <= hi <= 1):
            raise ConfigError("stay_probability must lie in [0, 1]")
        if self.ticket_model not in ("proportional", "common"):
            raise ConfigError(f"unknown ticket_model {self.ticket_model!r}")
        if not 0 <= self.noise_rate <= 1:
            raise ConfigError("noise_rate must lie in [0, 1]")
        if self.district_boxes is not None and len(self.district_boxes) != self.n_districts:
            raise ConfigError("district_boxes must have one box per district")
        if isinstance(self.policy, Mapping):
            self.policy = DistancePolicy(**self.policy)
        self.window = tuple(pd.Timestamp(w).date() for w in self.window)

    def params_for(self, category: str) -> HuffParams:
        return HuffParams(*self.true_params[category])

    def boxes(self) -> np.ndarray:
        if self.district_boxes is not None:
            return np.asarray(self.district_boxes, dtype=float)
        lat0, lon0 = self.origin
        dlat = self.district_size_km / KM_PER_DEG_LAT
        dlon = dlat / math.cos(math.radians(lat0))
        cols = math.ceil(math.sqrt(self.n_districts))
        k = np.arange(self.n_districts)
        row, col = k // cols, k % cols
        lat_edges = lat0 + np.arange(cols + 2) * dlat
        lon_edges = lon0 + np.arange(cols + 1) * dlon
        return np.column_stack([lat_edges[row], lat_edges[row + 1], lon_edges[col], lon_edges[col + 1]])

    def to_dict(self) -> dict:
        out = asdict(self)
        out["policy"] = {"anchor": self.policy.anchor, "floor_km": self.policy.floor_km}
        out["window"] = [w.isoformat() for w in self.window]
        out["true_params"] = {c: list(p) for c, p in self.true_params.items()}
        out["vocabularies"] = {k: list(v) for k, v in self.vocabularies.items()}
        for key in ("district_ids", "categories", "customers_per_district"):
            out[key] = list(out[key])
        return out


@dataclass
class CellTruth:
    customer_ids: np.ndarray
    merchant_ids: np.ndarray
    probabilities: np.ndarray
    expected_visits: np.ndarray


@dataclass
class SynthCity:
    config: CityConfig
    dataset: Dataset
    generator_revenue: pd.Series  # currency units, indexed by merchant_id
    truth: dict[tuple[str, str], CellTruth]


def _draw_int(rng, spec, size=None):
    lo, hi = _pair(spec)
    return rng.integers(int(lo), int(hi) + 1, size=size)


def _uniform_in_boxes(rng, boxes: np.ndarray, idx: np.ndarray):
    b = boxes[idx]
    u = rng.random((len(idx), 2))
    lat = b[:, 0] + u[:, 0] * (b[:, 1] - b[:, 0])
    lon = b[:, 2] + u[:, 1] * (b[:, 3] - b[:, 2])
    return lat, lon


def _destination_probs(config: CityConfig, boxes: np.ndarray, stay: np.ndarray) -> np.ndarray:
    clat = (boxes[:, 0] + boxes[:, 1]) / 2
    clon = (boxes[:, 2] + boxes[:, 3]) / 2
    from .geo import haversine_array
    dist = haversine_array(clat[:, None], clon[:, None], clat[None, :], clon[None, :])
    w = np.exp(-dist / config.mobility_scale_km)
    np.fill_diagonal(w, 0.0)
    n = len(boxes)
    probs = np.zeros((n, n))
    for d in range(n):
        if n == 1:
            probs[d, d] = 1.0
            continue
        probs[d] = (1 - stay[d]) * w[d] / w[d].sum()
        probs[d, d] = stay[d]
    return probs


def generate_city(config: CityConfig) -> SynthCity:
    """Build customers, merchants and transactions; deterministic under ``config.seed``."""
    seed = config.seed
    boxes = config.boxes()
    dids = config.district_ids
    n_d = len(dids)

    # pass 1: merchants
    merchant_frames = []
    for k, d in enumerate(dids):
        rng = substream(seed, f"synth.district.{d}.merchants")
        for c in config.categories:
            m = int(_draw_int(rng, config.merchants_per_category))
            lat, lon = _uniform_in_boxes(rng, boxes, np.full(m, k))
            rev = rng.lognormal(config.revenue_log_mean, config.revenue_log_sigma, m)
            merchant_frames.append(pd.DataFrame({
                "merchant_id": [f"M{d}-{c}-{j:03d}" for j in range(m)],
                "category_id": c, "district_id": d, "lat": lat, "lon": lon, "revenue": rev,
            }))
    merchants = pd.concat(merchant_frames, ignore_index=True)
    by_cell = {key: g.reset_index(drop=True) for key, g in merchants.groupby(["district_id", "category_id"], sort=False)}
    for d in dids:
        for c in config.categories:
            if (d, c) not in by_cell:
                raise ConfigError(f"no merchants generated for ({d}, {c})")

    # pass 2: customers and visit counts
    mob_rng = substream(seed, "synth.mobility")
    stay = mob_rng.uniform(*_pair(config.stay_probability), n_d)
    income_sigma = mob_rng.uniform(*_pair(config.income_log_sigma), n_d)
    dest_probs = _destination_probs(config, boxes, stay)

    customer_frames = []
    visit_parts: dict[tuple[str, str], list] = {key: [] for key in by_cell}
    for k, d in enumerate(dids):
        rng = substream(seed, f"synth.district.{d}.customers")
        n = config.customers_per_district[k]
        ids = np.array([f"C{d}-{j:05d}" for j in range(n)])
        hlat, hlon = _uniform_in_boxes(rng, boxes, np.full(n, k))
        has_work = rng.random(n) < config.work_fraction
        work_district = rng.choice(n_d, size=n, p=dest_probs[k])
        wlat, wlon = _uniform_in_boxes(rng, boxes, work_district)
        wlat = np.where(has_work, wlat, np.nan)
        wlon = np.where(has_work, wlon, np.nan)
        frame = {"customer_id": ids, "age": rng.integers(18, 81, n).astype(float)}
        for attr, vocab in config.vocabularies.items():
            p = rng.dirichlet(np.full(len(vocab), config.demographic_concentration))
            frame[attr] = np.asarray(vocab, dtype=object)[rng.choice(len(vocab), size=n, p=p)]
        income = np.round(rng.lognormal(config.income_log_mean, income_sigma[k], n), 2)
        income[rng.random(n) < config.zero_income_rate] = 0.0
        frame.update({"income": income, "home_lat": hlat, "home_lon": hlon,
                      "work_lat": wlat, "work_lon": wlon, "home_district": d})
        cust = pd.DataFrame(frame)
        customer_frames.append(cust)

        # per-customer share of visits made at home, mean = district stay probability
        s_d = stay[k]
        if n_d == 1 or s_d >= 1.0:
            own = np.ones(n)
        elif s_d <= 0.0:
            own = np.zeros(n)
        else:
            kappa = config.stay_concentration
            own = rng.beta(s_d * kappa, (1 - s_d) * kappa, n)
        away = dest_probs[k] / (1.0 - s_d) if 0 < s_d < 1 else dest_probs[k]
        away[k] = 0.0
        cust_probs = own[:, None] * np.eye(n_d)[k] + (1.0 - own)[:, None] * away[None, :]
        for c in config.categories:
            params = config.params_for(c)
            totals = _draw_int(rng, config.visits_per_customer, n)
            split = rng.multinomial(totals, cust_probs) if n_d > 1 else totals[:, None]
            for e_idx, e in enumerate(dids):
                who = np.flatnonzero(split[:, e_idx] > 0)
                if len(who) == 0:
                    continue
                m = by_cell[(e, c)]
                dist = distance_matrix(cust.iloc[who], m, config.policy)
                p = _huff_rows(m["revenue"].to_numpy(), dist, params)
                if config.noise_rate > 0:
                    p = (1 - config.noise_rate) * p + config.noise_rate / p.shape[1]
                counts = rng.multinomial(split[who, e_idx], p)
                visit_parts[(e, c)].append((ids[who], split[who, e_idx], p, counts))
    customers = pd.concat(customer_frames, ignore_index=True)

    # assemble per-cell truth and expected visits
    truth: dict[tuple[str, str], CellTruth] = {}
    for key, parts in visit_parts.items():
        m = by_cell[key]
        if not parts:
            truth[key] = CellTruth(np.array([], dtype=object), m["merchant_id"].to_numpy(),
                                   np.zeros((0, len(m))), np.zeros(len(m)))
            continue
        cids = np.concatenate([p[0] for p in parts])
        n_i = np.concatenate([p[1] for p in parts])
        prob = np.vstack([p[2] for p in parts])
        counts = np.vstack([p[3] for p in parts])
        order = np.argsort(cids, kind="stable")
        truth[key] = CellTruth(cids[order], m["merchant_id"].to_numpy(), prob[order],
                               n_i[order].astype(float) @ prob[order])
        visit_parts[key] = (cids[order], counts[order])

    # pass 3: amounts and timestamps
    start = pd.Timestamp(config.window[0])
    span_s = int((pd.Timestamp(config.window[1]) + pd.Timedelta(days=1) - start).total_seconds())
    scale = 10 ** config.minor_units
    tx_frames = []
    for d in dids:
        rng = substream(seed, f"synth.district.{d}.amounts")
        for c in config.categories:
            key = (d, c)
            parts = visit_parts[key]
            if isinstance(parts, list):
                continue
            cids, counts = parts
            m = by_cell[key]
            rows, cols = np.nonzero(counts)
            reps = counts[rows, cols]
            cust_col = np.repeat(cids[rows], reps)
            merch_idx = np.repeat(cols, reps)
            if config.ticket_model == "proportional":
                ticket = m["revenue"].to_numpy() / truth[key].expected_visits
            else:
                ticket = np.full(len(m), math.exp(config.ticket_log_mean))
            s = config.amount_sigma
            noise = rng.lognormal(-0.5 * s * s, s, len(merch_idx)) if s > 0 else np.ones(len(merch_idx))
            minor = np.maximum(1, np.round(ticket[merch_idx] * noise * scale)).astype(np.int64)
            secs = rng.integers(0, span_s, len(merch_idx))
            tx_frames.append(pd.DataFrame({
                "customer_id": cust_col,
                "merchant_id": m["merchant_id"].to_numpy()[merch_idx],
                "amount_minor": minor,
                "timestamp": start + pd.to_timedelta(secs, unit="s"),
                "category_id": c,
            }))
    transactions = pd.concat(tx_frames, ignore_index=True)
    transactions = transactions.sort_values(["timestamp", "customer_id", "merchant_id"],
                                            kind="mergesort").reset_index(drop=True)

    districts = pd.DataFrame({"district_id": dids, "lat_min": boxes[:, 0], "lat_max": boxes[:, 1],
                              "lon_min": boxes[:, 2], "lon_max": boxes[:, 3]})
    generator_revenue = merchants.set_index("merchant_id")["revenue"]
    merchants = merchants.drop(columns="revenue")
    dataset = Dataset(transactions, customers, merchants, districts, config.window)
    return SynthCity(config, dataset, generator_revenue, truth)


def _huff_rows(revenue: np.ndarray, dist: np.ndarray, params: HuffParams) -> np.ndarray:
    log_u = np.zeros_like(dist)
    if params.alpha != 0:
        log_u += params.alpha * np.log(revenue)[None, :]
    if params.beta != 0:
        log_u -= params.beta * np.log(dist)
    log_u -= log_u.max(axis=1, keepdims=True)
    h = np.exp(log_u)
    return h / h.sum(axis=1, keepdims=True)


# --------------------------------------------------------------------------
# mobility patterns

@dataclass
class MobilityMatrix:
    district_ids: list[str]
    matrix: np.ndarray
    undefined_rows: list[str]

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.matrix, index=self.district_ids, columns=self.district_ids)
        df.index.name = "home_district"
        return df


def truth_deviation(truth: CellTruth, customer_ids, merchant_ids, fitted: np.ndarray) -> float:
    """Mean absolute deviation between a fitted probability matrix and the truth.

    Only customers and merchants present in both are compared; truth rows are
    renormalized over the shared merchants (the fitted cell can lack merchants
    that drew no visits).
    """
    fitted = np.asarray(fitted, dtype=float)
    c_pos = pd.Index(truth.customer_ids).get_indexer(np.asarray(customer_ids))
    m_pos = pd.Index(truth.merchant_ids).get_indexer(np.asarray(merchant_ids))
    rows, cols = c_pos >= 0, m_pos >= 0
    if not rows.any() or cols.sum() < 2:
        raise ValueError("fitted cell shares too little with the truth to compare")
    t = truth.probabilities[np.ix_(c_pos[rows], m_pos[cols])]
    t = t / t.sum(axis=1, keepdims=True)
    f = fitted[np.ix_(rows, cols)]
    f = f / f.sum(axis=1, keepdims=True)
    return float(np.abs(f - t).mean())


def mobility_pattern_matrix(records: pd.DataFrame, customers: pd.DataFrame, merchants: pd.DataFrame,
                            district_ids: Sequence[str] | None = None) -> MobilityMatrix:
    """Row-normalized (home district x merchant district) transaction counts.

    ``customers`` must carry ``home_district``. Rows without resident
    transactions are NaN and listed in ``undefined_rows``.
    """
    home = customers.set_index("customer_id")["home_district"].astype(str)
    dest = merchants.set_index("merchant_id")["district_id"].astype(str)
    if district_ids is None:
        district_ids = sorted(set(dest) | set(home.dropna()), key=_district_sort_key)
    district_ids = [str(d) for d in district_ids]
    index = {d: k for k, d in enumerate(district_ids)}
    origin = home.reindex(records["customer_id"]).map(index)
    target = dest.reindex(records["merchant_id"]).map(index)
    ok = origin.notna().to_numpy() & target.notna().to_numpy()
    n = len(district_ids)
    counts = np.zeros((n, n))
    np.add.at(counts, (origin.to_numpy()[ok].astype(int), target.to_numpy()[ok].astype(int)), 1)
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        matrix = np.where(totals > 0, counts / totals, np.nan)
    undefined = [district_ids[k] for k in np.flatnonzero(totals[:, 0] == 0)]
    return MobilityMatrix(district_ids, matrix, undefined)


def _district_sort_key(d: str):
    return (0, int(d), "") if d.isdigit() else (1, 0, d)


# --------------------------------------------------------------------------
# file emission

def write_city(city: SynthCity, out_dir) -> dict[str, Path]:
    """Emit transactions/customers/merchants/districts CSVs plus the truth sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds, cfg = city.dataset, city.config
    paths = {name: out / f"{name}.csv" for name in ("transactions", "customers", "merchants", "districts")}
    tx = ds.transactions
    pd.DataFrame({
        "customer_id": tx["customer_id"], "merchant_id": tx["merchant_id"],
        "amount": format_amount(tx["amount_minor"], cfg.minor_units).to_numpy(),
        "timestamp": tx["timestamp"].dt.strftime("%Y-%m-%dT%H:%M:%S"),
        "category_id": tx["category_id"],
    }).to_csv(paths["transactions"], index=False, lineterminator="\n")
    cust = ds.customers.drop(columns=["home_district"])
    cust.to_csv(paths["customers"], index=False, float_format="%.17g", lineterminator="\n")
    ds.merchants.to_csv(paths["merchants"], index=False, float_format="%.17g", lineterminator="\n")
    ds.districts.to_csv(paths["districts"], index=False, float_format="%.17g", lineterminator="\n")

    sidecar = {
        "seed": cfg.seed,
        "true_params": {c: {"alpha": p[0], "beta": p[1]} for c, p in cfg.true_params.items()},
        "generator_revenue": {k: float(v) for k, v in city.generator_revenue.items()},
        "config": cfg.to_dict(),
    }
    paths["truth"] = out / "truth.json"
    paths["truth"].write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    arrays = {}
    for (d, c), t in city.truth.items():
        arrays[f"{d}|{c}|customers"] = t.customer_ids.astype(str)
        arrays[f"{d}|{c}|merchants"] = t.merchant_ids.astype(str)
        arrays[f"{d}|{c}|probabilities"] = t.probabilities
    paths["truth_probabilities"] = out / "truth_probabilities.npz"
    _write_npz(paths["truth_probabilities"], arrays)
    return paths


def _write_npz(path, arrays: Mapping[str, np.ndarray]) -> None:
    # np.savez stamps the wall clock into the archive; a fixed date keeps output byte-stable
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(info, buf.getvalue())


def load_truth_probabilities(path) -> dict[tuple[str, str], CellTruth]:
    with np.load(path, allow_pickle=False) as z:
        keys = sorted({tuple(k.split("|")[:2]) for k in z.files})
        return {(d, c): CellTruth(z[f"{d}|{c}|customers"], z[f"{d}|{c}|merchants"],
                                  z[f"{d}|{c}|probabilities"], np.array([]))
                for d, c in keys}
