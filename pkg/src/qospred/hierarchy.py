"""Hierarchical prediction: four level-1 regressors, a controller, and an
aggregator.

For one target cell, four networks each learn to map a row of one filled
matrix (all services except the target) to the target service's column, and
predict the target user's row. The controller then decides how to fuse the
four outputs: when enough cells are observed in the common region of both
filtered submatrices it builds a level-2 training set of (four predictions,
actual) tuples and trains a small fusion network; otherwise it estimates
each block's mean absolute error on per-matrix samples and the best block's
output wins.

Building the level-2 set needs predictions for cells whose actual value is
known. The default "fast" mode holds the sampled rows of the target column
out of each network's training data, trains once per matrix, and predicts
the held-out rows jointly; "exact" mode retrains all four networks for every
sampled cell (leave-one-out), which is faithful but costs 4x|sample|
trainings.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import mlp
from .config import PipelineConfig, derive_seed
from .data import Dataset, Split
from .errors import PipelineError
from .fill import FilledMatrices, cf_estimates, cf_fill, mf_fill, mf_reconstruction
from .filtering import (
    FilterResult,
    compute_thresholds,
    service_intensive_filter,
    user_intensive_filter,
)
from .geo import cosine_rows

BLOCK_NAMES = ("cf_ui", "mf_ui", "cf_si", "mf_si")
BLOCK_SIDES = (0, 0, 1, 1)  # filter result feeding each block


@dataclass(frozen=True)
class Nrl1Output:
    """Level-1 predictions, one per filled matrix, clamped to >= 0."""

    phi1: float  # from cf_ui
    phi2: float  # from mf_ui
    phi3: float  # from cf_si
    phi4: float  # from mf_si
    degenerate: tuple = ()  # blocks that fell back to the collaborative fill value

    def as_array(self) -> np.ndarray:
        return np.array([self.phi1, self.phi2, self.phi3, self.phi4])

    def __post_init__(self):
        if not np.isfinite(self.as_array()).all():
            raise PipelineError("non-finite level-1 prediction")


@dataclass(frozen=True)
class ControllerDataset:
    """Training data emitted by the controller for the chosen aggregator."""

    branch: str  # "nrl2" | "mae-ag"
    lam: np.ndarray | None  # (n, 5) tuples (phi1..phi4, actual) on the nrl2 branch
    lams: tuple | None  # four (n_b, 2) arrays (phi, actual) on the mae-ag branch
    intersection_size: int
    diagnostics: dict = field(default_factory=dict)


@dataclass
class PredictionTrace:
    """Per-target record of the hierarchy's intermediate and final outputs."""

    target: tuple
    nrl1: Nrl1Output
    branch: str
    final: float
    block_maes: tuple | None = None
    diagnostics: dict = field(default_factory=dict)
    filter_sets: dict | None = None  # filtered user/service indices per side
    elapsed_s: float = 0.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "target": list(self.target),
                "phi": [self.nrl1.phi1, self.nrl1.phi2, self.nrl1.phi3, self.nrl1.phi4],
                "degenerate_blocks": list(self.nrl1.degenerate),
                "branch": self.branch,
                "final": self.final,
                "block_maes": None if self.block_maes is None else list(self.block_maes),
                "diagnostics": self.diagnostics,
                "filter_sets": self.filter_sets,
                "elapsed_s": round(self.elapsed_s, 4),
            }
        )


def _parallel(tasks, threads: int):
    if threads <= 1 or len(tasks) <= 1:
        return [t() for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return [f.result() for f in [pool.submit(t) for t in tasks]]


def _train_column_nets(
    values: np.ndarray,
    label_col: int,
    exclude_rows: np.ndarray,
    predict_rows: np.ndarray,
    config: mlp.MlpConfig,
):
    """Train one regressor for ``label_col`` on the rows not excluded and
    predict the requested rows. Returns None when fewer than two training
    rows remain (degenerate filtering)."""
    n, m = values.shape
    keep = np.setdiff1d(np.arange(n), exclude_rows)
    if keep.size < 2:
        return None
    cols = np.delete(np.arange(m), label_col)
    model = mlp.train(config, values[np.ix_(keep, cols)], values[keep, label_col])
    return np.array([mlp.predict(model, values[r, cols]) for r in predict_rows])


def run_nrl1(
    filled: FilledMatrices,
    filters: tuple,
    target: tuple,
    config: PipelineConfig,
    seed: int = 0,
) -> Nrl1Output:
    """Train the four level-1 networks and predict the target cell.

    Each network trains on every row except the target user's, with the
    target service's column as the label and all other columns as features.
    Blocks with fewer than two training rows fall back to the collaborative
    fill value at the target cell.
    """
    t1, t2 = target

    def make_task(b):
        filt = filters[BLOCK_SIDES[b]]
        values = filled.by_index(b).values
        i = filt.user_pos(t1)
        j = filt.service_pos(t2)
        cfg = config.nrl1_config(derive_seed(seed, "nrl1", b))
        return lambda: _train_column_nets(values, j, np.array([i]), np.array([i]), cfg)

    results = _parallel([make_task(b) for b in range(4)], config.threads)
    phis = []
    degenerate = []
    for b, res in enumerate(results):
        if res is None:
            cf_side = filled.cf_ui if BLOCK_SIDES[b] == 0 else filled.cf_si
            filt = filters[BLOCK_SIDES[b]]
            phis.append(float(cf_side.values[filt.user_pos(t1), filt.service_pos(t2)]))
            degenerate.append(b)
        else:
            phis.append(max(float(res[0]), 0.0))
    return Nrl1Output(*phis, degenerate=tuple(degenerate))


def nrl1_from_fills(filled: FilledMatrices, filters: tuple, target: tuple) -> Nrl1Output:
    """Level-1 outputs taken directly from the four fill values at the target
    (the no-level-1 ablation)."""
    t1, t2 = target
    phis = []
    for b in range(4):
        filt = filters[BLOCK_SIDES[b]]
        phis.append(
            float(filled.by_index(b).values[filt.user_pos(t1), filt.service_pos(t2)])
        )
    return Nrl1Output(*phis)


def controller(
    filled: FilledMatrices,
    filters: tuple,
    target: tuple,
    t_d: int,
    train: np.ndarray,
    config: PipelineConfig,
    seed: int = 0,
    *,
    force_branch: str | None = None,
) -> ControllerDataset:
    """Choose the aggregator branch and build its training data.

    The branch predicate counts the training-observed cells lying in both
    filtered regions: at least ``t_d`` of them selects the level-2 branch,
    anything less the MAE branch.
    """
    ui, si = filters
    t1, t2 = target
    mask = train > 0
    common_users = np.intersect1d(ui.users, si.users)
    common_services = np.intersect1d(si.services, ui.services)
    inter_mask = mask[np.ix_(common_users, common_services)]
    intersection_size = int(inter_mask.sum())
    branch = force_branch or ("nrl2" if intersection_size >= t_d else "mae-ag")
    diagnostics: dict = {}

    if branch == "nrl2":
        if config.controller_mode == "exact":
            lam = _lambda_exact(
                filled, filters, target, common_users, common_services,
                train, config, seed, diagnostics,
            )
        else:
            lam = _lambda_fast(
                filled, filters, target, common_users, train, config, seed, diagnostics
            )
        return ControllerDataset(branch, lam, None, intersection_size, diagnostics)

    if config.controller_mode == "exact":
        lams = _mae_pools_exact(filled, filters, target, train, config, seed, diagnostics)
    else:
        lams = _mae_pools_fast(filled, filters, target, train, config, seed, diagnostics)
    return ControllerDataset(branch, None, lams, intersection_size, diagnostics)


def _lambda_fast(filled, filters, target, common_users, train, config, seed, diagnostics):
    """Hold the sampled rows of the target column out of training, train the
    four networks once, and predict the held-out rows jointly."""
    ui, si = filters
    t1, t2 = target
    mask = train > 0
    pool = common_users[(common_users != t1) & mask[common_users, t2]]
    want = config.effective_lambda_size
    cap = min(want, pool.size, len(ui.users) - 3, len(si.users) - 3)
    if cap < want:
        diagnostics["lambda_shortfall"] = int(want - max(cap, 0))
    if cap <= 0:
        return np.empty((0, 5))
    rng = np.random.default_rng(derive_seed(seed, "controller-pool"))
    sampled = np.sort(rng.choice(pool, size=cap, replace=False))

    def make_task(b):
        filt = filters[BLOCK_SIDES[b]]
        values = filled.by_index(b).values
        j = filt.service_pos(t2)
        positions = np.array([filt.user_pos(u) for u in sampled])
        exclude = np.append(positions, filt.user_pos(t1))
        cfg = config.nrl1_config(derive_seed(seed, "controller-nn", b))
        return lambda: _train_column_nets(values, j, exclude, positions, cfg)

    results = _parallel([make_task(b) for b in range(4)], config.threads)
    if any(r is None for r in results):
        diagnostics["lambda_degenerate"] = True
        return np.empty((0, 5))
    phis = np.maximum(np.stack(results, axis=1), 0.0)
    actual = train[sampled, t2]
    return np.column_stack([phis, actual])


def _lambda_exact(filled, filters, target, common_users, common_services, train,
                  config, seed, diagnostics):
    """Leave-one-out level-2 data: retrain all four networks per sampled cell."""
    t1, t2 = target
    mask = train > 0
    grid = mask[np.ix_(common_users, common_services)]
    cells = np.argwhere(grid)
    cells = np.array(
        [
            (common_users[a], common_services[b])
            for a, b in cells
            if not (common_users[a] == t1 and common_services[b] == t2)
        ]
    )
    want = config.effective_lambda_size
    take = min(want, len(cells))
    if take < want:
        diagnostics["lambda_shortfall"] = int(want - take)
    if take == 0:
        return np.empty((0, 5))
    rng = np.random.default_rng(derive_seed(seed, "controller-pool"))
    sampled = cells[rng.choice(len(cells), size=take, replace=False)]

    rows = []
    for u, s in sampled:
        phis = []
        for b in range(4):
            filt = filters[BLOCK_SIDES[b]]
            values = filled.by_index(b).values
            i = filt.user_pos(int(u))
            j = filt.service_pos(int(s))
            cfg = config.nrl1_config(derive_seed(seed, "controller-exact", b, int(u), int(s)))
            res = _train_column_nets(values, j, np.array([i]), np.array([i]), cfg)
            if res is None:
                diagnostics["lambda_degenerate"] = True
                return np.empty((0, 5))
            phis.append(max(float(res[0]), 0.0))
        rows.append([*phis, float(train[u, s])])
    return np.array(rows)


def _mae_pools_fast(filled, filters, target, train, config, seed, diagnostics):
    """Per-matrix held-out samples of the target column for MAE estimation."""
    t1, t2 = target
    mask = train > 0

    def make_task(b):
        filt = filters[BLOCK_SIDES[b]]
        values = filled.by_index(b).values
        users = filt.users
        pool = users[(users != t1) & mask[users, t2]]
        cap = min(config.t_d, pool.size, len(users) - 3)
        if cap < config.t_d:
            diagnostics[f"mae_pool_shortfall_{BLOCK_NAMES[b]}"] = int(config.t_d - max(cap, 0))
        if cap <= 0:
            return lambda: np.empty((0, 2))
        rng = np.random.default_rng(derive_seed(seed, "controller-mae", b))
        sampled = np.sort(rng.choice(pool, size=cap, replace=False))
        j = filt.service_pos(t2)
        positions = np.array([filt.user_pos(u) for u in sampled])
        exclude = np.append(positions, filt.user_pos(t1))
        cfg = config.nrl1_config(derive_seed(seed, "controller-mae-nn", b))

        def task():
            res = _train_column_nets(values, j, exclude, positions, cfg)
            if res is None:
                return np.empty((0, 2))
            return np.column_stack([np.maximum(res, 0.0), train[sampled, t2]])

        return task

    results = _parallel([make_task(b) for b in range(4)], config.threads)
    return tuple(results)


def _mae_pools_exact(filled, filters, target, train, config, seed, diagnostics):
    t1, t2 = target
    mask = train > 0
    out = []
    for b in range(4):
        filt = filters[BLOCK_SIDES[b]]
        values = filled.by_index(b).values
        grid = mask[np.ix_(filt.users, filt.services)]
        cells = np.argwhere(grid)
        cells = np.array(
            [
                (filt.users[a], filt.services[c])
                for a, c in cells
                if not (filt.users[a] == t1 and filt.services[c] == t2)
            ]
        )
        take = min(config.t_d, len(cells))
        if take < config.t_d:
            diagnostics[f"mae_pool_shortfall_{BLOCK_NAMES[b]}"] = int(config.t_d - take)
        if take == 0:
            out.append(np.empty((0, 2)))
            continue
        rng = np.random.default_rng(derive_seed(seed, "controller-mae", b))
        sampled = cells[rng.choice(len(cells), size=take, replace=False)]
        rows = []
        for u, s in sampled:
            i = filt.user_pos(int(u))
            j = filt.service_pos(int(s))
            cfg = config.nrl1_config(derive_seed(seed, "controller-mae-exact", b, int(u), int(s)))
            res = _train_column_nets(values, j, np.array([i]), np.array([i]), cfg)
            if res is None:
                continue
            rows.append([max(float(res[0]), 0.0), float(train[u, s])])
        out.append(np.array(rows) if rows else np.empty((0, 2)))
    return tuple(out)


def run_nrl2(
    lam: np.ndarray, nrl1_out: Nrl1Output, config: PipelineConfig, seed: int = 0
) -> float:
    """Train the fusion network on (phi1..phi4, actual) tuples and predict the
    target from its four level-1 outputs; clamped to >= 0."""
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim != 2 or lam.shape[1] != 5 or lam.shape[0] < 1:
        raise PipelineError(f"level-2 training data must be (n, 5) with n >= 1, got {lam.shape}")
    phis = nrl1_out.as_array()
    if not np.isfinite(lam).all():
        raise PipelineError("non-finite values in level-2 training data")
    model = mlp.train(config.nrl2_config(derive_seed(seed, "nrl2")), lam[:, :4], lam[:, 4])
    return max(float(mlp.predict(model, phis)), 0.0)


def mae_aggregate(lams: tuple, nrl1_out: Nrl1Output) -> tuple:
    """Pick the level-1 block with the lowest mean absolute error.

    Returns (prediction, per-block MAEs); ties break toward the lowest block
    index. Every per-block sample must be nonempty.
    """
    maes = []
    for b, lam in enumerate(lams):
        lam = np.asarray(lam, dtype=np.float64)
        if lam.shape[0] == 0:
            raise PipelineError(f"empty MAE sample for block {BLOCK_NAMES[b]}")
        maes.append(float(np.abs(lam[:, 0] - lam[:, 1]).mean()))
    best = int(np.argmin(maes))
    return float(nrl1_out.as_array()[best]), tuple(maes)


def predict_one(
    dataset: Dataset,
    split: Split,
    target: tuple,
    config: PipelineConfig = PipelineConfig(),
    *,
    aggregator: str = "controller",
    use_nrl1: bool = True,
    time_slice: int = 0,
    seed: int = 0,
    user_sims: np.ndarray | None = None,
    service_sims: np.ndarray | None = None,
) -> PredictionTrace:
    """Run the full pipeline for one target cell and return its trace.

    ``aggregator`` is "controller" (branch chosen by the intersection
    predicate), "nrl2-only" or "mae-ag-only"; ``use_nrl1=False`` replaces the
    level-1 networks with raw fill-route estimates.
    """
    t0 = time.perf_counter()
    t1, t2 = int(target[0]), int(target[1])
    if split.train_mask[t1, t2]:
        raise PipelineError(f"target cell ({t1}, {t2}) is inside the training mask")
    train = split.train_values(dataset.matrix(time_slice))
    if user_sims is None:
        user_sims = cosine_rows(train)
    if service_sims is None:
        service_sims = cosine_rows(train.T)

    thresholds = compute_thresholds(
        dataset, split, t1, t2, config.k,
        time_slice=time_slice, user_sims=user_sims, service_sims=service_sims,
    )
    ui = user_intensive_filter(
        dataset, split, t1, t2, thresholds,
        context_filter=config.context_filter, min_neighbors=config.min_neighbors,
        time_slice=time_slice, user_sims=user_sims,
    )
    si = service_intensive_filter(
        dataset, split, t1, t2, thresholds,
        context_filter=config.context_filter, min_neighbors=config.min_neighbors,
        time_slice=time_slice, service_sims=service_sims,
    )

    cf_stats_ui: dict = {}
    cf_stats_si: dict = {}
    fill_tasks = [
        lambda: cf_fill(ui, stats=cf_stats_ui),
        lambda: mf_fill(ui, config.mf_config(derive_seed(seed, "mf", 0))),
        lambda: cf_fill(si, stats=cf_stats_si),
        lambda: mf_fill(si, config.mf_config(derive_seed(seed, "mf", 1))),
    ]
    cf_ui_m, mf_ui_m, cf_si_m, mf_si_m = _parallel(fill_tasks, config.threads)
    filled = FilledMatrices(cf_ui=cf_ui_m, mf_ui=mf_ui_m, cf_si=cf_si_m, mf_si=mf_si_m)

    diagnostics = {
        "ui_users": len(ui.users),
        "ui_services": len(ui.services),
        "si_users": len(si.users),
        "si_services": len(si.services),
        "cf_mean_fallback_ui": cf_stats_ui.get("mean_fallback_cells", 0),
        "cf_mean_fallback_si": cf_stats_si.get("mean_fallback_cells", 0),
    }

    phi_source = "nn" if use_nrl1 else "fill"
    if use_nrl1:
        nrl1_out = run_nrl1(filled, (ui, si), (t1, t2), config, seed)
        if nrl1_out.degenerate:
            diagnostics["degenerate_blocks"] = list(nrl1_out.degenerate)
    else:
        nrl1_out = nrl1_from_fills(filled, (ui, si), (t1, t2))

    force = {"controller": None, "nrl2-only": "nrl2", "mae-ag-only": "mae-ag"}.get(aggregator)
    if aggregator not in ("controller", "nrl2-only", "mae-ag-only"):
        raise PipelineError(f"unknown aggregator {aggregator!r}")
    if phi_source == "fill":
        ctrl = _controller_from_fills(
            filled, (ui, si), (t1, t2), config.t_d, train, config, seed, force
        )
    else:
        ctrl = controller(
            filled, (ui, si), (t1, t2), config.t_d, train, config, seed,
            force_branch=force,
        )
    diagnostics["intersection_size"] = ctrl.intersection_size
    diagnostics.update(ctrl.diagnostics)

    block_maes = None
    if ctrl.branch == "nrl2":
        if ctrl.lam is None or ctrl.lam.shape[0] == 0:
            final = max(float(nrl1_out.as_array().mean()), 0.0)
            diagnostics["empty_lambda_fallback"] = True
        else:
            final = run_nrl2(ctrl.lam, nrl1_out, config, seed)
    else:
        nonempty = [(b, lam) for b, lam in enumerate(ctrl.lams) if lam.shape[0] > 0]
        if not nonempty:
            final = max(float(nrl1_out.as_array().mean()), 0.0)
            diagnostics["empty_lambda_fallback"] = True
        else:
            final, sub_maes = _mae_aggregate_partial(nonempty, nrl1_out)
            maes_full = [None] * 4
            for (b, _), m in zip(nonempty, sub_maes):
                maes_full[b] = m
            block_maes = tuple(maes_full)

    return PredictionTrace(
        target=(t1, t2),
        nrl1=nrl1_out,
        branch=ctrl.branch,
        final=final,
        block_maes=block_maes,
        diagnostics=diagnostics,
        filter_sets={
            "ui_users": ui.users.tolist(),
            "ui_services": ui.services.tolist(),
            "si_users": si.users.tolist(),
            "si_services": si.services.tolist(),
        },
        elapsed_s=time.perf_counter() - t0,
    )


def _mae_aggregate_partial(nonempty, nrl1_out: Nrl1Output) -> tuple:
    """MAE aggregation over the blocks that produced samples."""
    maes = []
    for b, lam in nonempty:
        lam = np.asarray(lam, dtype=np.float64)
        maes.append(float(np.abs(lam[:, 0] - lam[:, 1]).mean()))
    best = nonempty[int(np.argmin(maes))][0]
    return float(nrl1_out.as_array()[best]), tuple(maes)


def _controller_from_fills(filled, filters, target, t_d, train, config, seed, force_branch):
    """Controller for the no-level-1 ablation: tuples carry fill-route
    estimates instead of network predictions, so cells may come from anywhere
    in the common region."""
    ui, si = filters
    t1, t2 = target
    mask = train > 0
    common_users = np.intersect1d(ui.users, si.users)
    common_services = np.intersect1d(ui.services, si.services)
    inter_mask = mask[np.ix_(common_users, common_services)]
    intersection_size = int(inter_mask.sum())
    branch = force_branch or ("nrl2" if intersection_size >= t_d else "mae-ag")
    diagnostics: dict = {}

    ests = _estimate_matrices(filled, filters, config, seed)

    if branch == "nrl2":
        cells = [
            (int(u), int(s))
            for u in common_users
            for s in common_services
            if mask[u, s] and not (u == t1 and s == t2)
        ]
        want = config.effective_lambda_size
        take = min(want, len(cells))
        if take < want:
            diagnostics["lambda_shortfall"] = int(want - take)
        if take == 0:
            return ControllerDataset(branch, np.empty((0, 5)), None, intersection_size, diagnostics)
        rng = np.random.default_rng(derive_seed(seed, "controller-pool"))
        chosen = [cells[c] for c in rng.choice(len(cells), size=take, replace=False)]
        rows = []
        for u, s in chosen:
            phis = [
                float(ests[b][filters[BLOCK_SIDES[b]].user_pos(u),
                              filters[BLOCK_SIDES[b]].service_pos(s)])
                for b in range(4)
            ]
            rows.append([*phis, float(train[u, s])])
        return ControllerDataset(branch, np.array(rows), None, intersection_size, diagnostics)

    lams = []
    for b in range(4):
        filt = filters[BLOCK_SIDES[b]]
        cells = [
            (int(u), int(s))
            for u in filt.users
            for s in filt.services
            if mask[u, s] and not (u == t1 and s == t2)
        ]
        take = min(config.t_d, len(cells))
        if take < config.t_d:
            diagnostics[f"mae_pool_shortfall_{BLOCK_NAMES[b]}"] = int(config.t_d - take)
        if take == 0:
            lams.append(np.empty((0, 2)))
            continue
        rng = np.random.default_rng(derive_seed(seed, "controller-mae", b))
        chosen = [cells[c] for c in rng.choice(len(cells), size=take, replace=False)]
        rows = [
            [float(ests[b][filt.user_pos(u), filt.service_pos(s)]), float(train[u, s])]
            for u, s in chosen
        ]
        lams.append(np.array(rows))
    return ControllerDataset(branch, None, tuple(lams), intersection_size, diagnostics)


def _estimate_matrices(filled, filters, config, seed):
    """Honest per-cell estimates for each route: collaborative estimates with
    each cell's own term excluded, and the raw factorization reconstruction."""
    ui, si = filters
    return (
        cf_estimates(ui),
        mf_reconstruction(ui, config.mf_config(derive_seed(seed, "mf", 0))),
        cf_estimates(si),
        mf_reconstruction(si, config.mf_config(derive_seed(seed, "mf", 1))),
    )
