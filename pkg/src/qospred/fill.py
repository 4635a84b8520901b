"""Densify filtered submatrices before the regression stage.

Two routes fill each missing cell. The collaborative route takes a
similarity-weighted average over the entities that observed the cell's
column (user-intensive mode) or row (service-intensive mode), then corrects
it by the similarity-weighted mean signed deviation of that average across
the target row's (or column's) observed cells. The factorization route fits
low-rank factors to the observed cells by per-cell stochastic gradient
descent with L2 regularization and reconstructs the missing cells. Both
routes preserve observed entries exactly and clamp fills to be non-negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .data import QosMatrix
from .errors import ConfigError, PipelineError
from .filtering import FilterResult
from .geo import cosine_rows


@dataclass(frozen=True)
class MfConfig:
    rank: int = 10
    learning_rate: float = 0.005
    regularization: float = 0.02
    epochs: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigError("rank must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.regularization < 0:
            raise ConfigError("regularization must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")


@dataclass(frozen=True)
class FilledMatrices:
    """The four dense matrices feeding level-1 regression."""

    cf_ui: QosMatrix
    mf_ui: QosMatrix
    cf_si: QosMatrix
    mf_si: QosMatrix

    def by_index(self, b: int) -> QosMatrix:
        return (self.cf_ui, self.mf_ui, self.cf_si, self.mf_si)[b]


def _zero_diag(m: np.ndarray) -> np.ndarray:
    out = m.copy()
    np.fill_diagonal(out, 0.0)
    return out


def _weighted_averages(values: np.ndarray, weights: np.ndarray):
    """Column averages at every cell: avg[i, j] = weighted mean of column j
    over the other rows that observed it. Returns (avg, defined mask)."""
    obs = (values > 0).astype(np.float64)
    w = _zero_diag(weights)
    num = w @ values
    den = w @ obs
    defined = den > 0
    avg = np.divide(num, den, out=np.zeros_like(num), where=defined)
    return avg, defined


def _signed_deviation(values, avg, avg_defined, dev_weights, exclude_own: bool):
    """Weighted mean signed deviation (observed - average) along rows,
    weighted by column similarities. Cells with an undefined average are
    skipped; with ``exclude_own`` each cell's own deviation term is removed
    (used when estimating observed cells)."""
    obs = values > 0
    usable = (obs & avg_defined).astype(np.float64)
    err = (values - avg) * usable
    num = err @ dev_weights
    den = usable @ dev_weights
    if exclude_own:
        own_w = np.diag(dev_weights)
        num = num - err * own_w
        den = den - usable * own_w
    dev = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return dev


def cf_fill(
    filter_result: FilterResult,
    *,
    user_sims: np.ndarray | None = None,
    service_sims: np.ndarray | None = None,
    stats: dict | None = None,
) -> QosMatrix:
    """Collaborative fill of the filter result's submatrix.

    Zero cells whose weight denominator is zero (no similar entity observed
    that column/row) fall back to the matrix-wide mean of observed entries;
    the count is recorded under ``stats["mean_fallback_cells"]``.
    """
    values = filter_result.submatrix.values
    if user_sims is None:
        user_sims = cosine_rows(values)
    if service_sims is None:
        service_sims = cosine_rows(values.T)

    if filter_result.mode == "user-intensive":
        avg, defined = _weighted_averages(values, user_sims)
        dev = _signed_deviation(values, avg, defined, service_sims, exclude_own=False)
    elif filter_result.mode == "service-intensive":
        avg_t, defined_t = _weighted_averages(values.T, service_sims)
        dev_t = _signed_deviation(values.T, avg_t, defined_t, user_sims, exclude_own=False)
        avg, defined, dev = avg_t.T, defined_t.T, dev_t.T
    else:
        raise PipelineError(f"unknown filter mode {filter_result.mode!r}")

    observed = values > 0
    prediction = np.maximum(avg + dev, 0.0)
    out = values.copy()
    fill_here = ~observed & defined
    out[fill_here] = prediction[fill_here]
    fallback = ~observed & ~defined
    n_fallback = int(fallback.sum())
    if n_fallback:
        mean_obs = float(values[observed].mean()) if observed.any() else 0.0
        out[fallback] = mean_obs
    if stats is not None:
        stats["mean_fallback_cells"] = n_fallback
    return QosMatrix(out)


def cf_estimates(
    filter_result: FilterResult,
    *,
    user_sims: np.ndarray | None = None,
    service_sims: np.ndarray | None = None,
) -> np.ndarray:
    """Collaborative estimate at every cell, treating each cell as unknown.

    Unlike :func:`cf_fill`, observed cells get the value the fill would have
    produced without their own observation (their deviation term is
    excluded), so the estimates can serve as honest model outputs.
    """
    values = filter_result.submatrix.values
    if user_sims is None:
        user_sims = cosine_rows(values)
    if service_sims is None:
        service_sims = cosine_rows(values.T)
    if filter_result.mode == "user-intensive":
        avg, defined = _weighted_averages(values, user_sims)
        dev = _signed_deviation(values, avg, defined, service_sims, exclude_own=True)
    else:
        avg_t, defined_t = _weighted_averages(values.T, service_sims)
        dev_t = _signed_deviation(values.T, avg_t, defined_t, user_sims, exclude_own=True)
        avg, defined, dev = avg_t.T, defined_t.T, dev_t.T
    est = np.maximum(avg + dev, 0.0)
    observed = values > 0
    if (~defined).any():
        mean_obs = float(values[observed].mean()) if observed.any() else 0.0
        est[~defined] = mean_obs
    return est


@njit(nogil=True, cache=True)
def _mf_epoch(P, Q, rows, cols, vals, order, lr, reg):
    rank = P.shape[1]
    for t in range(order.size):
        c = order[t]
        i = rows[c]
        j = cols[c]
        e = vals[c]
        for f in range(rank):
            e -= P[i, f] * Q[j, f]
        for f in range(rank):
            pif = P[i, f]
            qjf = Q[j, f]
            P[i, f] += lr * 2.0 * (e * qjf - reg * pif)
            Q[j, f] += lr * 2.0 * (e * pif - reg * qjf)


def mf_factorize(values: np.ndarray, config: MfConfig):
    """Fit low-rank factors to the nonzero cells of ``values``.

    Returns (P, Q, losses) where losses[t] is the regularized squared error
    over observed cells before epoch t's update (losses[-1] is final); the
    returned factors are the best seen across epochs.
    """
    obs = np.argwhere(values > 0)
    if obs.shape[0] == 0:
        raise PipelineError("matrix has no observed entries to factorize")
    rows = np.ascontiguousarray(obs[:, 0], dtype=np.int64)
    cols = np.ascontiguousarray(obs[:, 1], dtype=np.int64)
    vals = np.ascontiguousarray(values[rows, cols], dtype=np.float64)

    rng = np.random.default_rng(config.seed)
    scale = 0.1 * np.sqrt(float(vals.mean()))
    n, m = values.shape
    P = rng.uniform(0.0, scale, size=(n, config.rank))
    Q = rng.uniform(0.0, scale, size=(m, config.rank))

    def full_loss(P, Q):
        recon = (P[rows] * Q[cols]).sum(axis=1)
        sq = float(((vals - recon) ** 2).sum())
        return sq + config.regularization * (float((P * P).sum()) + float((Q * Q).sum()))

    losses = [full_loss(P, Q)]
    best = losses[0]
    best_P, best_Q = P.copy(), Q.copy()
    for _ in range(config.epochs):
        order = rng.permutation(obs.shape[0])
        _mf_epoch(P, Q, rows, cols, vals, order, config.learning_rate, config.regularization)
        loss = full_loss(P, Q)
        losses.append(loss)
        if loss < best:
            best = loss
            best_P, best_Q = P.copy(), Q.copy()
    return best_P, best_Q, np.array(losses)


def mf_fill(filter_result: FilterResult, config: MfConfig = MfConfig()) -> QosMatrix:
    """Factorization fill: missing cells take the low-rank reconstruction,
    observed cells keep their original values."""
    values = filter_result.submatrix.values
    observed = values > 0
    if observed.all():
        return QosMatrix(values.copy())
    P, Q, _ = mf_factorize(values, config)
    recon = np.maximum(P @ Q.T, 0.0)
    out = np.where(observed, values, recon)
    return QosMatrix(out)


def mf_reconstruction(filter_result: FilterResult, config: MfConfig = MfConfig()) -> np.ndarray:
    """Raw clamped low-rank reconstruction at every cell (no pass-through)."""
    P, Q, _ = mf_factorize(filter_result.submatrix.values, config)
    return np.maximum(P @ Q.T, 0.0)
