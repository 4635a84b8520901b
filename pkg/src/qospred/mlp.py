"""Minimal feed-forward neural regression trained by backpropagation.

Hidden layers use a logistic sigmoid (or tanh); the output layer is affine.
Training minimizes the mean squared error with stochastic gradient descent
(batch size 1, order reshuffled per epoch under the seed) plus classical
momentum, stopping early once the epoch-mean L2 norm of the full parameter
gradient falls below ``min_gradient``. Features are min-max scaled to [0, 1]
using the training set's per-feature range; targets stay in raw units.

All parameters live in one flat vector; layer layout is described by an
integer metadata table so the same compiled kernels serve any depth. The
work buffer holds [scaled input | layer activations...] so every layer reads
its input at a uniform non-negative offset. The training kernel folds the
gradient into the momentum update without materializing it; the same delta
sweep also feeds :func:`gradient_check`, and a step-equivalence test pins
the fused update to the materialized gradients.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigError, PipelineError

_ACTIVATIONS = {"sigmoid": 0, "tanh": 1}


@dataclass(frozen=True)
class MlpConfig:
    hidden_sizes: tuple = (256, 128)
    learning_rate: float = 0.01
    momentum: float = 0.9
    max_epochs: int = 50
    min_gradient: float = 1e-5
    seed: int = 0
    activation: str = "sigmoid"
    dtype: str = "float64"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.min_gradient <= 0:
            raise ConfigError("min_gradient must be > 0")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))


@dataclass
class Mlp:
    """Trained network: flat parameters plus layer metadata and feature scaling."""

    input_dim: int
    hidden_sizes: tuple
    activation: str
    params: np.ndarray  # flat (n_params,)
    meta: np.ndarray  # int64 (n_layers, 4): w_offset, b_offset, in_dim, out_dim
    feat_lo: np.ndarray
    feat_span: np.ndarray  # hi - lo, zeros replaced by 1 (constant features map to 0)
    epochs_run: int = 0

    @property
    def n_params(self) -> int:
        return self.params.size

    def work_size(self) -> int:
        return self.input_dim + int(self.meta[:, 3].sum())

    def scale(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=self.params.dtype) - self.feat_lo) / self.feat_span


def _layer_meta(input_dim: int, hidden_sizes: tuple) -> np.ndarray:
    dims = [input_dim, *hidden_sizes, 1]
    meta = np.zeros((len(dims) - 1, 4), dtype=np.int64)
    offset = 0
    for l in range(len(dims) - 1):
        din, dout = dims[l], dims[l + 1]
        meta[l] = (offset, offset + din * dout, din, dout)
        offset += din * dout + dout
    return meta


def _init_params(meta: np.ndarray, rng: np.random.Generator, dtype) -> np.ndarray:
    total = int(meta[-1, 1] + meta[-1, 3])
    params = np.zeros(total, dtype=dtype)
    for w_off, b_off, din, dout in meta:
        bound = 1.0 / np.sqrt(din)
        w = rng.uniform(-bound, bound, size=din * dout)
        params[w_off : w_off + din * dout] = w.astype(dtype)
        # biases start at zero
    return params


@njit(nogil=True, cache=True)
def _layer_affine(params, w_off, b_off, din, dout, work, in_pos, out_pos):
    """One layer's affine map; scalar offsets keep the hot loops
    straight-line so they vectorize."""
    for j in range(dout):
        work[out_pos + j] = params[b_off + j]
    for i in range(din):
        xi = work[in_pos + i]
        if xi != 0.0:
            row = w_off + i * dout
            for j in range(dout):
                work[out_pos + j] += xi * params[row + j]


@njit(nogil=True, cache=True)
def _layer_activate(work, pos, dout, act_id):
    if act_id == 0:
        for j in range(dout):
            work[pos + j] = 1.0 / (1.0 + np.exp(-work[pos + j]))
    else:
        for j in range(dout):
            work[pos + j] = np.tanh(work[pos + j])


@njit(nogil=True, cache=True)
def _layer_delta(params, w_off, din, dout, work, deltas, in_pos, a_pos, act_id):
    """Propagate deltas from a layer's output to its input activations."""
    for i in range(din):
        acc = params[0] - params[0]  # dtype-pure zero
        row = w_off + i * dout
        for j in range(dout):
            acc += params[row + j] * deltas[a_pos + j]
        z = work[in_pos + i]
        if act_id == 0:
            deltas[in_pos + i] = acc * z * (1.0 - z)
        else:
            deltas[in_pos + i] = acc * (1.0 - z * z)


@njit(nogil=True, cache=True)
def _forward(params, meta, x, act_id, work):
    """Forward pass: ``work`` becomes [input | activations...]; returns the
    scalar output."""
    n_layers = meta.shape[0]
    d0 = meta[0, 2]
    for i in range(d0):
        work[i] = x[i]
    a_pos = d0
    for l in range(n_layers):
        din = meta[l, 2]
        dout = meta[l, 3]
        _layer_affine(params, meta[l, 0], meta[l, 1], din, dout, work, a_pos - din, a_pos)
        if l < n_layers - 1:
            _layer_activate(work, a_pos, dout, act_id)
        a_pos += dout
    return work[a_pos - 1]


@njit(nogil=True, cache=True)
def _backward_deltas(params, meta, x, y, act_id, work, deltas):
    """Forward pass plus the backward delta sweep; the gradient of the
    per-sample squared error is delta ⊗ layer input. Returns the loss."""
    out = _forward(params, meta, x, act_id, work)
    err = out - y
    n_layers = meta.shape[0]
    d0 = meta[0, 2]
    pos = d0
    for l in range(n_layers - 1):
        pos += meta[l, 3]
    deltas[pos] = 2.0 * err  # affine output layer
    a_pos = pos
    for l in range(n_layers - 1, 0, -1):
        din = meta[l, 2]
        _layer_delta(params, meta[l, 0], din, meta[l, 3], work, deltas,
                     a_pos - din, a_pos, act_id)
        a_pos -= din
    return err * err


@njit(nogil=True, cache=True)
def _loss_grad(params, meta, x, y, act_id, work, deltas, grad):
    """Per-sample squared-error loss and its full gradient (into ``grad``)."""
    loss = _backward_deltas(params, meta, x, y, act_id, work, deltas)
    n_layers = meta.shape[0]
    a_pos = meta[0, 2]
    for l in range(n_layers):
        w_off = meta[l, 0]
        b_off = meta[l, 1]
        din = meta[l, 2]
        dout = meta[l, 3]
        in_pos = a_pos - din
        for j in range(dout):
            grad[b_off + j] = deltas[a_pos + j]
        for i in range(din):
            xi = work[in_pos + i]
            row = w_off + i * dout
            for j in range(dout):
                grad[row + j] = deltas[a_pos + j] * xi
        a_pos += dout
    return loss


_TRAIN_KERNELS: dict = {}
_KERNEL_LOCK = threading.Lock()


def _train_kernel_source(n_layers: int) -> str:
    """Emit a straight-line SGD kernel for a fixed layer count.

    Layer dimensions arrive as scalar arguments and every buffer offset is
    derived from them arithmetically, which lets the compiler prove the
    activation segments disjoint and vectorize the inner loops; driving the
    same loops from an offset table defeats that analysis. Velocity updates
    fold the gradient in without materializing it (weights:
    v = momentum*v - (lr*input)*delta; biases: v = momentum*v - lr*delta);
    the per-step gradient norm uses the exact identity
    ||g||^2 = sum_l ||delta_l||^2 * (1 + ||input_l||^2). A bit-equality test
    pins this kernel to the reference gradients of ``_loss_grad``.
    """
    dims = [f"h{l}" for l in range(n_layers + 1)]
    head = ["def _kernel(params, X, Y, lr, momentum, orders, min_gradient, act_id, "
            + ", ".join(dims) + "):"]
    body = []
    # offsets derived arithmetically from the dims
    body.append("w0 = 0")
    body.append("b0 = h0 * h1")
    for l in range(1, n_layers):
        body.append(f"w{l} = b{l-1} + h{l}")
        body.append(f"b{l} = w{l} + h{l} * h{l+1}")
    body.append("o0 = 0")
    for l in range(n_layers):
        body.append(f"o{l+1} = o{l} + h{l}")
    body.append(f"n_work = o{n_layers} + h{n_layers}")
    body.append("work = np.zeros(n_work, dtype=params.dtype)")
    body.append("deltas = np.zeros(n_work, dtype=params.dtype)")
    body.append("vel = np.zeros(params.size, dtype=params.dtype)")
    body.append("n = X.shape[0]")
    body.append("for ep in range(orders.shape[0]):")
    body.append("    norm_sum = 0.0")
    body.append("    for t in range(n):")
    step = []
    step.append("s = orders[ep, t]")
    step.append("x = X[s]")
    step.append("for i in range(h0):")
    step.append("    work[i] = x[i]")
    # forward
    for l in range(n_layers):
        step.append(f"for j in range(h{l+1}):")
        step.append(f"    work[o{l+1} + j] = params[b{l} + j]")
        step.append(f"for i in range(h{l}):")
        step.append(f"    xi = work[o{l} + i]")
        step.append("    if xi != 0.0:")
        step.append(f"        row = w{l} + i * h{l+1}")
        step.append(f"        for j in range(h{l+1}):")
        step.append(f"            work[o{l+1} + j] += xi * params[row + j]")
        if l < n_layers - 1:
            step.append("if act_id == 0:")
            step.append(f"    for j in range(h{l+1}):")
            step.append(f"        work[o{l+1} + j] = 1.0 / (1.0 + np.exp(-work[o{l+1} + j]))")
            step.append("else:")
            step.append(f"    for j in range(h{l+1}):")
            step.append(f"        work[o{l+1} + j] = np.tanh(work[o{l+1} + j])")
    # backward deltas (affine output layer)
    step.append(f"deltas[o{n_layers}] = 2.0 * (work[o{n_layers}] - Y[s])")
    for l in range(n_layers - 1, 0, -1):
        step.append(f"for i in range(h{l}):")
        step.append("    acc = params[0] - params[0]")
        step.append(f"    row = w{l} + i * h{l+1}")
        step.append(f"    for j in range(h{l+1}):")
        step.append(f"        acc += params[row + j] * deltas[o{l+1} + j]")
        step.append(f"    z = work[o{l} + i]")
        step.append("    if act_id == 0:")
        step.append(f"        deltas[o{l} + i] = acc * z * (1.0 - z)")
        step.append("    else:")
        step.append(f"        deltas[o{l} + i] = acc * (1.0 - z * z)")
    # gradient norm via the layer identity
    step.append("sq = 0.0")
    for l in range(n_layers):
        step.append("d_sq = 0.0")
        step.append(f"for j in range(h{l+1}):")
        step.append(f"    d_sq += float(deltas[o{l+1} + j]) * float(deltas[o{l+1} + j])")
        step.append("in_sq = 0.0")
        step.append(f"for i in range(h{l}):")
        step.append(f"    in_sq += float(work[o{l} + i]) * float(work[o{l} + i])")
        step.append("sq += d_sq * (1.0 + in_sq)")
    step.append("norm_sum += np.sqrt(sq)")
    # fused momentum update
    for l in range(n_layers):
        step.append(f"for j in range(h{l+1}):")
        step.append(f"    v = momentum * vel[b{l} + j] - lr * deltas[o{l+1} + j]")
        step.append(f"    vel[b{l} + j] = v")
        step.append(f"    params[b{l} + j] += v")
        step.append(f"for i in range(h{l}):")
        step.append(f"    xi = work[o{l} + i]")
        step.append(f"    row = w{l} + i * h{l+1}")
        step.append("    if xi == 0.0:")
        step.append(f"        for j in range(h{l+1}):")
        step.append("            v = momentum * vel[row + j]")
        step.append("            vel[row + j] = v")
        step.append("            params[row + j] += v")
        step.append("    else:")
        step.append("        c = lr * xi")
        step.append(f"        for j in range(h{l+1}):")
        step.append(f"            v = momentum * vel[row + j] - c * deltas[o{l+1} + j]")
        step.append("            vel[row + j] = v")
        step.append("            params[row + j] += v")
    body.extend("        " + line for line in step)
    body.append("    if norm_sum / n < min_gradient:")
    body.append("        return ep + 1")
    body.append("return orders.shape[0]")
    return "\n".join(head + ["    " + line for line in body])


def _get_train_kernel(n_layers: int):
    with _KERNEL_LOCK:
        kernel = _TRAIN_KERNELS.get(n_layers)
        if kernel is None:
            namespace = {"np": np}
            exec(
                compile(_train_kernel_source(n_layers), f"<train_kernel_{n_layers}>", "exec"),
                namespace,
            )
            kernel = njit(nogil=True)(namespace["_kernel"])
            _TRAIN_KERNELS[n_layers] = kernel
    return kernel


def train(config: MlpConfig, inputs, targets) -> Mlp:
    """Train a fresh network on (inputs, targets); deterministic under the seed."""
    X = np.asarray(inputs, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64).ravel()
    if X.ndim != 2:
        raise PipelineError(f"inputs must be a 2-d array, got shape {X.shape}")
    if X.shape[0] < 1:
        raise PipelineError("need at least one training sample")
    if X.shape[0] != Y.shape[0]:
        raise PipelineError(f"{X.shape[0]} inputs but {Y.shape[0]} targets")
    if not np.isfinite(X).all() or not np.isfinite(Y).all():
        raise PipelineError("non-finite values in training data")

    dtype = np.dtype(config.dtype)
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    span[span == 0] = 1.0
    Xs = np.ascontiguousarray(((X - lo) / span).astype(dtype))
    Ys = np.ascontiguousarray(Y.astype(dtype))

    rng = np.random.default_rng(config.seed)
    meta = _layer_meta(X.shape[1], config.hidden_sizes)
    params = _init_params(meta, rng, dtype)
    orders = np.empty((config.max_epochs, X.shape[0]), dtype=np.int64)
    for ep in range(config.max_epochs):
        orders[ep] = rng.permutation(X.shape[0])

    kernel = _get_train_kernel(meta.shape[0])
    dims = [int(d) for d in meta[:, 2]] + [1]
    epochs = kernel(
        params,
        Xs,
        Ys,
        dtype.type(config.learning_rate),
        dtype.type(config.momentum),
        orders,
        dtype.type(config.min_gradient),
        _ACTIVATIONS[config.activation],
        *dims,
    )
    return Mlp(
        input_dim=X.shape[1],
        hidden_sizes=config.hidden_sizes,
        activation=config.activation,
        params=params,
        meta=meta,
        feat_lo=lo.astype(dtype),
        feat_span=span.astype(dtype),
        epochs_run=int(epochs),
    )


def predict(model: Mlp, x) -> float:
    """Single prediction; pure function of (model, input)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != model.input_dim:
        raise PipelineError(
            f"input has {x.shape[0]} features, model expects {model.input_dim}"
        )
    work = np.zeros(model.work_size(), dtype=model.params.dtype)
    out = _forward(
        model.params,
        model.meta,
        np.ascontiguousarray(model.scale(x)),
        _ACTIVATIONS[model.activation],
        work,
    )
    return float(out)


def gradient_check(model: Mlp, x, target: float, step: float = 1e-5) -> float:
    """Worst relative disagreement between the analytic gradient and central
    finite differences of the per-sample squared error, at float64 precision.

    Per-parameter error is |analytic - numeric| / max(|analytic|, |numeric|,
    1e-3); gradients below the 1e-3 floor are measured against the floor so
    finite-difference noise on near-zero entries does not register.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != model.input_dim:
        raise PipelineError(
            f"input has {x.shape[0]} features, model expects {model.input_dim}"
        )
    params = model.params.astype(np.float64)
    meta = model.meta
    xs = np.ascontiguousarray(
        (x - model.feat_lo.astype(np.float64)) / model.feat_span.astype(np.float64)
    )
    y = float(target)
    act_id = _ACTIVATIONS[model.activation]
    work = np.zeros(model.work_size())
    deltas = np.zeros(model.work_size())
    analytic = np.zeros(params.size)
    _loss_grad(params, meta, xs, y, act_id, work, deltas, analytic)

    numeric = np.zeros_like(analytic)
    for i in range(params.size):
        orig = params[i]
        params[i] = orig + step
        lo_plus = (_forward(params, meta, xs, act_id, work) - y) ** 2
        params[i] = orig - step
        lo_minus = (_forward(params, meta, xs, act_id, work) - y) ** 2
        params[i] = orig
        numeric[i] = (lo_plus - lo_minus) / (2.0 * step)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    return float(np.max(np.abs(analytic - numeric) / denom))
