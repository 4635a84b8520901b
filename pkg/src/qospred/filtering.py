"""Hybrid filtering: context and similarity clustering around a target pair.

User-intensive filtering clusters users first (on the full training matrix),
restricts the rows, then clusters services on the reduced matrix;
service-intensive filtering mirrors the order. Each clustering is a
transitive closure: starting from the target, any candidate within the
distance threshold (or at/above the similarity threshold) of any current
member joins, until a fixed point. The context cluster and similarity
cluster are merged by context-sensitivity: when their overlap reaches the
count threshold the intersection wins, otherwise the similarity cluster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, QosMatrix, Split
from .errors import PipelineError
from .geo import cosine_rows, cosine_rows_to_target, haversine_matrix, haversine_to_point

MIN_NEIGHBORS = 5


@dataclass(frozen=True)
class FilterThresholds:
    """Data-driven thresholds for one target pair.

    Distance thresholds are the k-quantile of descending-sorted contextual
    distances to the target (None when contexts are unavailable); similarity
    thresholds are max(ascending k-quantile, k * max similarity);
    context-sensitivity counts are the k-fraction of the similarity-filtered
    set size. k = 0.5 reduces every rule to its median form.
    """

    t_uc: float | None  # km
    t_sc: float | None  # km
    t_us: float  # similarity in [0, 1]
    t_ss: float
    t_ucs: float  # count
    t_scs: float
    k: float


@dataclass(frozen=True)
class FilterResult:
    """Filtered user/service index sets (ascending) and the induced submatrix."""

    users: np.ndarray  # int64, ascending, contains the target user
    services: np.ndarray  # int64, ascending, contains the target service
    submatrix: QosMatrix
    mode: str  # "user-intensive" | "service-intensive"

    def user_pos(self, user: int) -> int:
        pos = int(np.searchsorted(self.users, user))
        if pos >= len(self.users) or self.users[pos] != user:
            raise PipelineError(f"user {user} not in filter result")
        return pos

    def service_pos(self, service: int) -> int:
        pos = int(np.searchsorted(self.services, service))
        if pos >= len(self.services) or self.services[pos] != service:
            raise PipelineError(f"service {service} not in filter result")
        return pos


def quantile_threshold(values: np.ndarray, k: float, descending: bool) -> float:
    """Value of the ceil(n*k)-th element of the sorted sequence (1-indexed,
    clamped to the sequence ends)."""
    vals = np.sort(np.asarray(values, dtype=np.float64))
    if vals.size == 0:
        raise PipelineError("empty candidate set for threshold computation")
    if descending:
        vals = vals[::-1]
    idx = min(max(int(math.ceil(vals.size * k)), 1), vals.size)
    return float(vals[idx - 1])


def compute_thresholds(
    dataset: Dataset,
    split: Split,
    target_user: int,
    target_service: int,
    k: float = 0.5,
    *,
    time_slice: int = 0,
    user_sims: np.ndarray | None = None,
    service_sims: np.ndarray | None = None,
) -> FilterThresholds:
    """Derive all six thresholds for one target pair from the training matrix."""
    if not 0.0 <= k <= 1.0:
        raise PipelineError(f"k must be in [0, 1], got {k}")
    train = split.train_values(dataset.matrix(time_slice))
    n_users, n_services = train.shape
    if n_users < 2 or n_services < 2:
        raise PipelineError("need at least two users and two services")

    t_uc = t_sc = None
    if not dataset.context_free:
        u_coords = dataset.user_coords()
        s_coords = dataset.service_coords()
        du = haversine_to_point(u_coords, u_coords[target_user])
        ds = haversine_to_point(s_coords, s_coords[target_service])
        t_uc = quantile_threshold(np.delete(du, target_user), k, descending=True)
        t_sc = quantile_threshold(np.delete(ds, target_service), k, descending=True)

    u_sims_t = (
        user_sims[target_user]
        if user_sims is not None
        else cosine_rows_to_target(train, target_user)
    )
    s_sims_t = (
        service_sims[target_service]
        if service_sims is not None
        else cosine_rows_to_target(train.T, target_service)
    )
    u_others = np.delete(u_sims_t, target_user)
    s_others = np.delete(s_sims_t, target_service)
    t_us = max(quantile_threshold(u_others, k, descending=False), k * float(u_others.max()))
    t_ss = max(quantile_threshold(s_others, k, descending=False), k * float(s_others.max()))

    all_users = np.arange(n_users)
    all_services = np.arange(n_services)
    u_cluster = cluster_by_similarity(
        all_users, target_user, train, "user", t_us, sims=user_sims
    )
    s_cluster = cluster_by_similarity(
        all_services, target_service, train, "service", t_ss, sims=service_sims
    )
    return FilterThresholds(
        t_uc=t_uc,
        t_sc=t_sc,
        t_us=t_us,
        t_ss=t_ss,
        t_ucs=k * len(u_cluster),
        t_scs=k * len(s_cluster),
        k=k,
    )


def _closure(adjacency: np.ndarray, start: int) -> np.ndarray:
    """Members reachable from ``start`` in the boolean adjacency matrix."""
    n = adjacency.shape[0]
    visited = np.zeros(n, dtype=bool)
    visited[start] = True
    frontier = np.array([start])
    while frontier.size:
        reach = adjacency[frontier].any(axis=0) & ~visited
        visited |= reach
        frontier = np.flatnonzero(reach)
    return np.flatnonzero(visited)


def cluster_by_context(
    candidates: np.ndarray, target: int, coords: np.ndarray, threshold: float
) -> np.ndarray:
    """Transitive closure of candidates within ``threshold`` km of any member.

    Candidates without coordinates cannot join. Returns ascending original
    indices, always containing the target.
    """
    if np.isnan(coords[target]).any():
        raise PipelineError(f"target {target} has no geo context")
    nodes = np.unique(np.append(np.asarray(candidates, dtype=np.int64), target))
    valid = ~np.isnan(coords[nodes]).any(axis=1)
    nodes = nodes[valid | (nodes == target)]
    dists = haversine_matrix(coords[nodes])
    adjacency = dists <= threshold
    adjacency[np.isnan(dists)] = False
    start = int(np.searchsorted(nodes, target))
    return nodes[_closure(adjacency, start)]


def cluster_by_similarity(
    candidates: np.ndarray,
    target: int,
    matrix: np.ndarray | QosMatrix,
    axis: str,
    threshold: float,
    *,
    sims: np.ndarray | None = None,
) -> np.ndarray:
    """Transitive closure of candidates with cosine similarity >= threshold to
    any member, over rows (axis="user") or columns (axis="service")."""
    values = matrix.values if isinstance(matrix, QosMatrix) else np.asarray(matrix)
    if axis not in ("user", "service"):
        raise PipelineError(f"axis must be 'user' or 'service', got {axis!r}")
    nodes = np.unique(np.append(np.asarray(candidates, dtype=np.int64), target))
    if sims is None:
        vecs = values[nodes] if axis == "user" else values[:, nodes].T
        sim = cosine_rows(vecs)
    else:
        sim = sims[np.ix_(nodes, nodes)]
    adjacency = sim >= threshold
    start = int(np.searchsorted(nodes, target))
    return nodes[_closure(adjacency, start)]


def context_sensitive_merge(
    context_set: np.ndarray, similarity_set: np.ndarray, threshold_count: float
) -> np.ndarray:
    """Intersection when the overlap reaches ``threshold_count`` (the target's
    invocation pattern is context sensitive), otherwise the similarity set."""
    inter = np.intersect1d(context_set, similarity_set)
    if inter.size >= threshold_count:
        return inter
    return np.asarray(similarity_set, dtype=np.int64)


def _top_up(
    members: np.ndarray,
    target: int,
    sims_to_target: np.ndarray,
    min_neighbors: int,
) -> np.ndarray:
    """Fallback for degenerate clusters: target plus its most similar peers."""
    if members.size >= min_neighbors:
        return members
    order = np.argsort(-sims_to_target, kind="stable")
    order = order[order != target]
    take = order[: max(min_neighbors - 1, members.size)]
    return np.unique(np.append(take, target))


def user_intensive_filter(
    dataset: Dataset,
    split: Split,
    target_user: int,
    target_service: int,
    thresholds: FilterThresholds,
    *,
    context_filter: bool = True,
    min_neighbors: int = MIN_NEIGHBORS,
    time_slice: int = 0,
    user_sims: np.ndarray | None = None,
) -> FilterResult:
    """Filter users on the full training matrix, then services on the
    row-reduced matrix."""
    train = split.train_values(dataset.matrix(time_slice))
    users, services, sub = _two_stage_filter(
        train,
        dataset,
        target_user,
        target_service,
        thresholds,
        users_first=True,
        context_filter=context_filter,
        min_neighbors=min_neighbors,
        first_sims=user_sims,
    )
    return FilterResult(
        users=users, services=services, submatrix=QosMatrix(sub), mode="user-intensive"
    )


def service_intensive_filter(
    dataset: Dataset,
    split: Split,
    target_user: int,
    target_service: int,
    thresholds: FilterThresholds,
    *,
    context_filter: bool = True,
    min_neighbors: int = MIN_NEIGHBORS,
    time_slice: int = 0,
    service_sims: np.ndarray | None = None,
) -> FilterResult:
    """Filter services on the full training matrix, then users on the
    column-reduced matrix."""
    train = split.train_values(dataset.matrix(time_slice))
    users, services, sub = _two_stage_filter(
        train,
        dataset,
        target_user,
        target_service,
        thresholds,
        users_first=False,
        context_filter=context_filter,
        min_neighbors=min_neighbors,
        first_sims=service_sims,
    )
    return FilterResult(
        users=users, services=services, submatrix=QosMatrix(sub), mode="service-intensive"
    )


def _two_stage_filter(
    train: np.ndarray,
    dataset: Dataset,
    target_user: int,
    target_service: int,
    thresholds: FilterThresholds,
    *,
    users_first: bool,
    context_filter: bool,
    min_neighbors: int,
    first_sims: np.ndarray | None,
):
    use_ctx = context_filter and not dataset.context_free
    n_users, n_services = train.shape

    if users_first:
        first = dict(
            axis="user",
            target=target_user,
            candidates=np.arange(n_users),
            coords=dataset.user_coords() if use_ctx else None,
            t_c=thresholds.t_uc,
            t_s=thresholds.t_us,
            t_cs=thresholds.t_ucs,
        )
        second = dict(
            axis="service",
            target=target_service,
            candidates=np.arange(n_services),
            coords=dataset.service_coords() if use_ctx else None,
            t_c=thresholds.t_sc,
            t_s=thresholds.t_ss,
        )
    else:
        first = dict(
            axis="service",
            target=target_service,
            candidates=np.arange(n_services),
            coords=dataset.service_coords() if use_ctx else None,
            t_c=thresholds.t_sc,
            t_s=thresholds.t_ss,
            t_cs=thresholds.t_scs,
        )
        second = dict(
            axis="user",
            target=target_user,
            candidates=np.arange(n_users),
            coords=dataset.user_coords() if use_ctx else None,
            t_c=thresholds.t_uc,
            t_s=thresholds.t_us,
        )

    first_set = _filter_one_axis(
        train, thresholds.k, min_neighbors, use_ctx, first, sims=first_sims,
        merge_count=first["t_cs"],
    )
    reduced = train[first_set, :] if users_first else train[:, first_set]
    second_set = _filter_one_axis(
        reduced, thresholds.k, min_neighbors, use_ctx, second, sims=None, merge_count=None
    )

    if users_first:
        users, services = first_set, second_set
        sub = train[np.ix_(users, services)]
    else:
        users, services = second_set, first_set
        sub = train[np.ix_(users, services)]
    return users, services, sub


def _filter_one_axis(
    matrix: np.ndarray,
    k: float,
    min_neighbors: int,
    use_ctx: bool,
    spec: dict,
    *,
    sims: np.ndarray | None,
    merge_count: float | None,
) -> np.ndarray:
    axis = spec["axis"]
    target = spec["target"]
    candidates = spec["candidates"]
    sim_cluster = cluster_by_similarity(
        candidates, target, matrix, axis, spec["t_s"], sims=sims
    )
    if use_ctx and spec["t_c"] is not None:
        ctx_cluster = cluster_by_context(candidates, target, spec["coords"], spec["t_c"])
        count = merge_count if merge_count is not None else k * len(sim_cluster)
        merged = context_sensitive_merge(ctx_cluster, sim_cluster, count)
    else:
        merged = sim_cluster
    vecs = matrix if axis == "user" else matrix.T
    sims_to_target = cosine_rows_to_target(vecs, target)
    return _top_up(merged, target, sims_to_target, min_neighbors)
