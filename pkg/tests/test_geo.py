import math

import numpy as np
import pytest

from qospred.data import GeoContext, QosMatrix
from qospred.geo import (
    EARTH_RADIUS_KM,
    cosine_cols,
    cosine_rows,
    cosine_services,
    cosine_users,
    haversine,
    haversine_matrix,
    haversine_to_point,
)

PARIS = GeoContext(48.8566, 2.3522)
BERLIN = GeoContext(52.5200, 13.4050)


def test_haversine_identical_points():
    p = GeoContext(48.85, 2.35)
    assert haversine(p, p) == 0.0


def test_haversine_antipodal_equator():
    d = haversine(GeoContext(0, 0), GeoContext(0, 180))
    assert d == pytest.approx(math.pi * EARTH_RADIUS_KM, abs=1e-9)


def test_haversine_berlin_paris():
    # evaluated by hand from the formula before the build
    assert haversine(BERLIN, PARIS) == pytest.approx(877.4633259175432, abs=1e-6)


def test_haversine_symmetric_and_bounded():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a = GeoContext(float(rng.uniform(-90, 90)), float(rng.uniform(-180, 180)))
        b = GeoContext(float(rng.uniform(-90, 90)), float(rng.uniform(-180, 180)))
        d_ab = haversine(a, b)
        assert d_ab == haversine(b, a)
        assert 0.0 <= d_ab <= math.pi * EARTH_RADIUS_KM + 1e-9


def test_haversine_vector_helpers_match_scalar():
    rng = np.random.default_rng(1)
    coords = np.column_stack([rng.uniform(-80, 80, 12), rng.uniform(-170, 170, 12)])
    mat = haversine_matrix(coords)
    to0 = haversine_to_point(coords, coords[0])
    for i in range(12):
        ref = haversine(
            GeoContext(*coords[0]), GeoContext(coords[i, 0], coords[i, 1])
        )
        assert mat[0, i] == pytest.approx(ref, abs=1e-9)
        assert to0[i] == pytest.approx(ref, abs=1e-9)
    assert np.allclose(mat, mat.T)


def test_cosine_users_identical_rows():
    q = QosMatrix(np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]))
    assert cosine_users(0, 1, q) == pytest.approx(1.0)


def test_cosine_users_disjoint_support_is_zero():
    q = QosMatrix(np.array([[3.0, 0.0, 4.0], [0.0, 5.0, 0.0]]))
    assert cosine_users(0, 1, q) == 0.0


def test_cosine_users_parallel_rows():
    q = QosMatrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    assert cosine_users(0, 1, q) == pytest.approx(1.0)


def test_cosine_services_partial_overlap():
    # columns (1,1,0) and (1,0,0): one common user, norms sqrt(2) and 1
    q = QosMatrix(np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 0.0]]))
    assert cosine_services(0, 1, q) == pytest.approx(1 / math.sqrt(2))
    assert cosine_services(0, 0, q) == pytest.approx(1.0)


def test_cosine_zero_row_is_zero():
    q = QosMatrix(np.array([[0.0, 0.0], [1.0, 2.0]]))
    assert cosine_users(0, 1, q) == 0.0
    assert cosine_users(0, 0, q) == 0.0


def test_cosine_symmetry_and_range_random():
    rng = np.random.default_rng(2)
    for _ in range(30):
        values = rng.random((6, 8)) * (rng.random((6, 8)) > 0.4)
        q = QosMatrix(values)
        for i in range(6):
            for j in range(6):
                s = cosine_users(i, j, q)
                assert 0.0 <= s <= 1.0
                assert s == cosine_users(j, i, q)


def test_cosine_matrix_matches_pairwise():
    rng = np.random.default_rng(3)
    values = rng.random((7, 9)) * (rng.random((7, 9)) > 0.3)
    q = QosMatrix(values)
    rows = cosine_rows(values)
    cols = cosine_cols(values)
    for i in range(7):
        for j in range(7):
            assert rows[i, j] == pytest.approx(cosine_users(i, j, q), abs=1e-12)
    for i in range(9):
        for j in range(9):
            assert cols[i, j] == pytest.approx(cosine_services(i, j, q), abs=1e-12)


def test_cosine_scaling_invariance_on_identical_support():
    rng = np.random.default_rng(4)
    row = rng.random(10) + 0.1
    q = QosMatrix(np.vstack([row, 3.0 * row]))
    assert cosine_users(0, 1, q) == pytest.approx(1.0)
