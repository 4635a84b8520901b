"""Distance and similarity kernels used by the filtering stages.

Great-circle distance between geo contexts uses the haversine formula on a
sphere of radius 6371 km. Similarity between two users (or services) is the
cosine of their invocation-history vectors: the numerator runs over commonly
invoked entries only (zeros encode "never invoked" and vanish from the dot
product) while each norm runs over that entity's own full invoked set. An
empty common set, or an all-zero history, yields similarity 0.
"""

from __future__ import annotations

import numpy as np

from .data import GeoContext, QosMatrix

EARTH_RADIUS_KM = 6371.0


def haversine(a: GeoContext, b: GeoContext) -> float:
    """Great-circle distance in kilometers."""
    lat1, lon1 = np.radians(a.latitude), np.radians(a.longitude)
    lat2, lon2 = np.radians(b.latitude), np.radians(b.longitude)
    s = (
        np.sin((lat2 - lat1) / 2.0) ** 2
        + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    )
    return float(2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(min(s, 1.0))))


def haversine_to_point(coords: np.ndarray, point: np.ndarray) -> np.ndarray:
    """Distances (km) from each row of ``coords`` (lat, lon in degrees) to ``point``.

    Rows with NaN coordinates yield NaN.
    """
    lat = np.radians(coords[:, 0])
    lon = np.radians(coords[:, 1])
    lat0, lon0 = np.radians(point[0]), np.radians(point[1])
    s = np.sin((lat - lat0) / 2.0) ** 2 + np.cos(lat0) * np.cos(lat) * np.sin(
        (lon - lon0) / 2.0
    ) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(s, 0.0, 1.0)))


def haversine_matrix(coords: np.ndarray) -> np.ndarray:
    """Pairwise distances (km) between rows of ``coords``; NaN where a
    coordinate is missing."""
    lat = np.radians(coords[:, 0])[:, None]
    lon = np.radians(coords[:, 1])[:, None]
    s = np.sin((lat.T - lat) / 2.0) ** 2 + np.cos(lat) * np.cos(lat.T) * np.sin(
        (lon.T - lon) / 2.0
    ) ** 2
    with np.errstate(invalid="ignore"):
        return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(s, 0.0, 1.0)))


def cosine_rows(values: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity between rows of a zero-coded value grid.

    Returns an (n, n) matrix in [0, 1] with 0 wherever either row is all-zero
    or the rows share no nonzero entry.
    """
    v = np.asarray(values, dtype=np.float64)
    dots = v @ v.T
    norms = np.sqrt(np.diag(dots).copy())
    denom = np.outer(norms, norms)
    with np.errstate(divide="ignore", invalid="ignore"):
        sims = np.where(denom > 0, dots / denom, 0.0)
    return np.clip(sims, 0.0, 1.0)


def cosine_cols(values: np.ndarray) -> np.ndarray:
    """Column-wise mirror of :func:`cosine_rows`."""
    return cosine_rows(np.asarray(values, dtype=np.float64).T)


def cosine_rows_to_target(values: np.ndarray, target: int) -> np.ndarray:
    """Cosine similarity of every row to one target row."""
    v = np.asarray(values, dtype=np.float64)
    dots = v @ v[target]
    norms = np.sqrt((v * v).sum(axis=1))
    denom = norms * norms[target]
    with np.errstate(divide="ignore", invalid="ignore"):
        sims = np.where(denom > 0, dots / denom, 0.0)
    return np.clip(sims, 0.0, 1.0)


def cosine_users(i: int, j: int, q: QosMatrix) -> float:
    """Cosine similarity between the invocation histories of users i and j."""
    return _cosine_pair(q.values[i], q.values[j])


def cosine_services(i: int, j: int, q: QosMatrix) -> float:
    """Cosine similarity between the invocation histories of services i and j."""
    return _cosine_pair(q.values[:, i], q.values[:, j])


def _cosine_pair(a: np.ndarray, b: np.ndarray) -> float:
    num = float(a @ b)
    na = float(np.sqrt(a @ a))
    nb = float(np.sqrt(b @ b))
    if num == 0.0 or na == 0.0 or nb == 0.0:
        return 0.0
    return float(min(num / (na * nb), 1.0))
