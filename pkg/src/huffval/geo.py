"""Great-circle distances, the customer anchor policy and distance histograms."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
import pandas as pd

from .data import CustomerProfile, GeoPoint, MerchantProfile, VisitMatrix

EARTH_RADIUS_KM = 6371.0088

Anchor = Literal["home_only", "work_only", "min_home_work"]
ANCHORS = ("home_only", "work_only", "min_home_work")
ANCHOR_ALIASES = {"home": "home_only", "work": "work_only", "min": "min_home_work"}


@dataclass(frozen=True)
class DistancePolicy:
    anchor: str = "min_home_work"
    floor_km: float = 0.05

    def __post_init__(self):
        anchor = ANCHOR_ALIASES.get(self.anchor, self.anchor)
        if anchor not in ANCHORS:
            raise ValueError(f"unknown anchor {self.anchor!r}")
        object.__setattr__(self, "anchor", anchor)
        if not self.floor_km > 0:
            raise ValueError("floor_km must be > 0")


def haversine_array(lat1, lon1, lat2, lon2):
    """Vectorised haversine distance in km; arguments broadcast."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(lon2) - np.radians(lon1)
    h = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    # sort the pair so that d(a, b) and d(b, a) follow the same float path
    if (a.latitude, a.longitude) > (b.latitude, b.longitude):
        a, b = b, a
    return float(haversine_array(a.latitude, a.longitude, b.latitude, b.longitude))


def customer_merchant_distance(customer: CustomerProfile, merchant: MerchantProfile,
                               policy: DistancePolicy = DistancePolicy()) -> float:
    home = haversine_km(customer.home, merchant.location)
    work = haversine_km(customer.work, merchant.location) if customer.work is not None else None
    if policy.anchor == "home_only" or work is None:
        d = home
    elif policy.anchor == "work_only":
        d = work
    else:
        d = min(home, work)
    return max(d, policy.floor_km)


def distance_matrix(customers: pd.DataFrame, merchants: pd.DataFrame,
                    policy: DistancePolicy = DistancePolicy()) -> np.ndarray:
    """Customers x merchants anchor distances, clamped at the policy floor.

    ``customers`` needs home_lat/home_lon and optionally work_lat/work_lon
    (NaN when absent); ``merchants`` needs lat/lon.
    """
    mlat = merchants["lat"].to_numpy(float)[None, :]
    mlon = merchants["lon"].to_numpy(float)[None, :]
    home = haversine_array(customers["home_lat"].to_numpy(float)[:, None],
                           customers["home_lon"].to_numpy(float)[:, None], mlat, mlon)
    if policy.anchor == "home_only" or "work_lat" not in customers:
        d = home
    else:
        work = haversine_array(customers["work_lat"].to_numpy(float)[:, None],
                               customers["work_lon"].to_numpy(float)[:, None], mlat, mlon)
        has_work = ~np.isnan(work)
        if policy.anchor == "work_only":
            d = np.where(has_work, work, home)
        else:
            d = np.where(has_work, np.minimum(home, work), home)
    return np.maximum(d, policy.floor_km)


@dataclass(frozen=True)
class DistanceHistogram:
    district_id: str
    category_id: str
    bin_edges: np.ndarray
    counts: np.ndarray
    mean_km: float

    def __post_init__(self):
        if len(self.counts) != len(self.bin_edges) - 1:
            raise ValueError("counts must have one entry per bin")
        if np.any(np.diff(self.bin_edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")

    @property
    def total_weight(self) -> float:
        return float(self.counts.sum())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"bin_lo": self.bin_edges[:-1], "bin_hi": self.bin_edges[1:],
                             "weight": self.counts})


def visit_weighted_histogram(distances: np.ndarray, weights: np.ndarray, bin_width_km: float,
                             district_id: str = "", category_id: str = "") -> DistanceHistogram:
    if not bin_width_km > 0:
        raise ValueError("bin_width_km must be > 0")
    d = np.asarray(distances, float).ravel()
    w = np.asarray(weights, float).ravel()
    keep = w > 0
    d, w = d[keep], w[keep]
    top = d.max() if len(d) else 0.0
    n_bins = max(1, int(math.floor(top / bin_width_km)) + 1)
    edges = np.arange(n_bins + 1) * bin_width_km
    counts, _ = np.histogram(d, bins=edges, weights=w)
    mean = float(np.sum(d * w) / np.sum(w)) if len(d) else float("nan")
    return DistanceHistogram(district_id, category_id, edges, counts, mean)


def distance_distribution(visit_matrix: VisitMatrix, customers: pd.DataFrame,
                          policy: DistancePolicy = DistancePolicy(),
                          bin_width_km: float = 1.0) -> DistanceHistogram:
    """Histogram of customer-merchant distances, one unit of weight per visit.

    ``customers`` is indexed by customer_id.
    """
    cell = visit_matrix.cell
    cust = customers.loc[list(cell.customers)]
    d = distance_matrix(cust, cell.merchants, policy)
    return visit_weighted_histogram(d, visit_matrix.counts, bin_width_km,
                                    cell.district_id, cell.category_id)
