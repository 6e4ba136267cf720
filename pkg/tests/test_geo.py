import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from huffval.data import CustomerProfile, GeoPoint, MerchantProfile, StudyCell, VisitMatrix
from huffval.geo import (EARTH_RADIUS_KM, DistancePolicy, customer_merchant_distance, distance_distribution,
                         distance_matrix, haversine_km, visit_weighted_histogram)

R = 6371.0088


def cosine_law_km(a, b):
    p1, p2 = math.radians(a[0]), math.radians(b[0])
    dl = math.radians(b[1] - a[1])
    c = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl)
    return R * math.acos(max(-1.0, min(1.0, c)))


def test_radius_constant():
    assert EARTH_RADIUS_KM == R


def test_identical_points_zero():
    p = GeoPoint(41.01, 28.97)
    assert haversine_km(p, p) == 0.0


def test_half_circumference():
    d = haversine_km(GeoPoint(0, 0), GeoPoint(0, 180))
    assert d == pytest.approx(math.pi * R, abs=1e-9)
    assert abs(d - 20015.1) <= 0.5


def test_city_points_match_cosine_law():
    rng = np.random.default_rng(1)
    for _ in range(200):
        a = (41 + rng.uniform(-0.3, 0.3), 29 + rng.uniform(-0.3, 0.3))
        b = (41 + rng.uniform(-0.3, 0.3), 29 + rng.uniform(-0.3, 0.3))
        got = haversine_km(GeoPoint(*a), GeoPoint(*b))
        assert got == pytest.approx(cosine_law_km(a, b), rel=1e-3)


def test_geopoint_validation():
    with pytest.raises(ValueError):
        GeoPoint(91, 0)
    with pytest.raises(ValueError):
        GeoPoint(0, float("nan"))


lat = st.floats(-89.9, 89.9)
lon = st.floats(-179.9, 179.9)


@settings(max_examples=300, deadline=None)
@given(lat, lon, lat, lon)
def test_symmetry_exact(a1, o1, a2, o2):
    a, b = GeoPoint(a1, o1), GeoPoint(a2, o2)
    assert haversine_km(a, b) == haversine_km(b, a)


@settings(max_examples=300, deadline=None)
@given(lat, lon, lat, lon, lat, lon)
def test_triangle_inequality(a1, o1, a2, o2, a3, o3):
    a, b, c = GeoPoint(a1, o1), GeoPoint(a2, o2), GeoPoint(a3, o3)
    ab, bc, ac = haversine_km(a, b), haversine_km(b, c), haversine_km(a, c)
    assert ac <= (ab + bc) * (1 + 1e-9) + 1e-9


def _customer(home, work=None):
    return CustomerProfile("c", 30, "F", "single", "BSc", "employed", 1.0, GeoPoint(*home),
                           GeoPoint(*work) if work else None)


def _km_north(km):
    return km / (math.pi * R / 180.0)


def test_policy_min_takes_closer_anchor():
    m = MerchantProfile("m", "g", "1", GeoPoint(0.0, 0.0))
    c = _customer((_km_north(2.0), 0.0), (_km_north(5.0), 0.0))
    assert customer_merchant_distance(c, m, DistancePolicy("min_home_work")) == pytest.approx(2.0, rel=1e-9)
    assert customer_merchant_distance(c, m, DistancePolicy("work")) == pytest.approx(5.0, rel=1e-9)
    assert customer_merchant_distance(c, m, DistancePolicy("home")) == pytest.approx(2.0, rel=1e-9)


def test_missing_work_falls_back_to_home():
    m = MerchantProfile("m", "g", "1", GeoPoint(0.0, 0.0))
    c = _customer((_km_north(3.0), 0.0))
    assert customer_merchant_distance(c, m, DistancePolicy("work")) == pytest.approx(3.0, rel=1e-9)


def test_floor_clamp():
    m = MerchantProfile("m", "g", "1", GeoPoint(10.0, 10.0))
    c = _customer((10.0, 10.0))
    assert customer_merchant_distance(c, m, DistancePolicy(floor_km=0.05)) == 0.05


def test_policy_validation():
    with pytest.raises(ValueError):
        DistancePolicy("office")
    with pytest.raises(ValueError):
        DistancePolicy(floor_km=0)


@pytest.mark.parametrize("anchor", ["home_only", "work_only", "min_home_work"])
def test_distance_matrix_brute_force(anchor):
    rng = np.random.default_rng(2)
    n, m = 40, 12
    cust = pd.DataFrame({"home_lat": 41 + rng.uniform(0, .2, n), "home_lon": 29 + rng.uniform(0, .2, n),
                         "work_lat": 41 + rng.uniform(0, .2, n), "work_lon": 29 + rng.uniform(0, .2, n)})
    cust.loc[::3, ["work_lat", "work_lon"]] = np.nan
    cust.loc[1, ["home_lat", "home_lon"]] = [41.1, 29.1]
    merch = pd.DataFrame({"lat": 41 + rng.uniform(0, .2, m), "lon": 29 + rng.uniform(0, .2, m)})
    merch.loc[0, ["lat", "lon"]] = [41.1, 29.1]
    policy = DistancePolicy(anchor, 0.05)
    got = distance_matrix(cust, merch, policy)
    for i in range(n):
        for j in range(m):
            home = cosine_law_km((cust.home_lat[i], cust.home_lon[i]), (merch.lat[j], merch.lon[j]))
            if np.isnan(cust.work_lat[i]):
                d = home
            else:
                work = cosine_law_km((cust.work_lat[i], cust.work_lon[i]), (merch.lat[j], merch.lon[j]))
                d = {"home_only": home, "work_only": work, "min_home_work": min(home, work)}[anchor]
            assert got[i, j] == pytest.approx(max(d, 0.05), rel=1e-6, abs=1e-6)
    assert (got >= 0.05).all()


def test_single_visit_histogram():
    h = visit_weighted_histogram(np.array([[3.0]]), np.array([[4]]), 1.0)
    assert h.counts.sum() == 4 and (h.counts > 0).sum() == 1
    assert h.mean_km == 3.0
    assert h.bin_edges[np.argmax(h.counts)] == 3.0


def test_histogram_mean_and_total():
    rng = np.random.default_rng(3)
    d = rng.uniform(0.05, 12, (50, 8))
    w = rng.integers(0, 6, (50, 8))
    h = visit_weighted_histogram(d, w, 0.5)
    assert h.total_weight == w.sum()
    direct = sum(float(d[i, j]) * int(w[i, j]) for i in range(50) for j in range(8)) / w.sum()
    assert h.mean_km == pytest.approx(direct, abs=1e-9)
    frame = h.to_frame()
    assert list(frame.columns) == ["bin_lo", "bin_hi", "weight"]
    with pytest.raises(ValueError):
        visit_weighted_histogram(d, w, 0.0)


def test_distance_distribution_from_visit_matrix():
    merchants = pd.DataFrame({"merchant_id": ["m1", "m2"], "category_id": ["g", "g"], "district_id": ["1", "1"],
                              "lat": [0.0, 0.0], "lon": [0.0, 0.0], "revenue_minor": [1, 1]})
    cell = StudyCell("1", "g", merchants, ("a", "b"))
    vm = VisitMatrix(cell, np.array([[2, 1], [0, 3]]))
    customers = pd.DataFrame({"home_lat": [_km_north(1.0), _km_north(4.0)], "home_lon": [0.0, 0.0],
                              "work_lat": [np.nan, np.nan], "work_lon": [np.nan, np.nan]},
                             index=pd.Index(["a", "b"], name="customer_id"))
    h = distance_distribution(vm, customers, DistancePolicy(), 1.0)
    assert h.total_weight == 6
    assert h.mean_km == pytest.approx((3 * 1.0 + 3 * 4.0) / 6, rel=1e-9)
