import numpy as np
import pytest

from qospred.errors import ConfigError, PipelineError
from qospred.mlp import Mlp, MlpConfig, _layer_meta, gradient_check, predict, train


def test_config_validation():
    with pytest.raises(ConfigError):
        MlpConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        MlpConfig(momentum=1.0)
    with pytest.raises(ConfigError):
        MlpConfig(max_epochs=0)
    with pytest.raises(ConfigError):
        MlpConfig(min_gradient=0.0)
    with pytest.raises(ConfigError):
        MlpConfig(activation="relu6")


def test_constant_target_converges():
    rng = np.random.default_rng(0)
    X = rng.random((30, 3))
    cfg = MlpConfig(hidden_sizes=(8,), max_epochs=300, seed=1, learning_rate=0.05)
    model = train(cfg, X, np.full(30, 5.0))
    preds = np.array([predict(model, x) for x in X])
    assert np.all(np.abs(preds - 5.0) < 0.05)


def test_linear_ground_truth_held_out():
    rng = np.random.default_rng(7)
    X = rng.random((200, 2))
    y = 2 * X[:, 0] + 3 * X[:, 1]
    cfg = MlpConfig(hidden_sizes=(16,), max_epochs=500, seed=3, learning_rate=0.05)
    model = train(cfg, X, y)
    Xh = rng.random((100, 2))
    yh = 2 * Xh[:, 0] + 3 * Xh[:, 1]
    mse = np.mean([(predict(model, x) - t) ** 2 for x, t in zip(Xh, yh)])
    assert mse < 1e-2


def test_training_is_bit_deterministic():
    rng = np.random.default_rng(11)
    X = rng.random((40, 5))
    y = rng.random(40)
    cfg = MlpConfig(hidden_sizes=(6, 4), max_epochs=30, seed=9)
    a = train(cfg, X, y)
    b = train(cfg, X, y)
    assert np.array_equal(a.params, b.params)
    assert a.epochs_run == b.epochs_run
    c = train(MlpConfig(hidden_sizes=(6, 4), max_epochs=30, seed=10), X, y)
    assert not np.array_equal(a.params, c.params)


def test_train_input_validation():
    cfg = MlpConfig(hidden_sizes=(4,), max_epochs=5)
    with pytest.raises(PipelineError):
        train(cfg, np.ones((3, 2)), np.ones(4))
    with pytest.raises(PipelineError):
        train(cfg, np.array([[1.0, np.nan]]), np.array([1.0]))
    with pytest.raises(PipelineError):
        train(cfg, np.ones((1, 2, 3)), np.ones(1))
    with pytest.raises(PipelineError):
        train(cfg, np.empty((0, 2)), np.empty(0))


def test_predict_dimension_check_and_purity():
    rng = np.random.default_rng(2)
    X = rng.random((10, 4))
    model = train(MlpConfig(hidden_sizes=(3,), max_epochs=5, seed=0), X, rng.random(10))
    with pytest.raises(PipelineError):
        predict(model, np.ones(5))
    x = rng.random(4)
    assert predict(model, x) == predict(model, x)


def test_zero_weight_network_outputs_bias():
    meta = _layer_meta(3, (4,))
    params = np.zeros(int(meta[-1, 1] + meta[-1, 3]))
    params[-1] = 2.5  # output bias
    model = Mlp(
        input_dim=3, hidden_sizes=(4,), activation="sigmoid",
        params=params, meta=meta, feat_lo=np.zeros(3), feat_span=np.ones(3),
    )
    # hidden sigmoids sit at 0.5 but their outgoing weights are zero
    assert predict(model, [0.3, 0.7, 0.1]) == pytest.approx(2.5)


def test_hand_propagated_2_2_1_network():
    # forward pass evaluated by hand before the build: x=(0.5, 0.25),
    # W1=[[0.1,-0.2],[0.3,0.4]], b1=(0.05,-0.05), W2=(0.7,-0.6), b2=0.2
    meta = _layer_meta(2, (2,))
    params = np.zeros(int(meta[-1, 1] + meta[-1, 3]))
    params[0:4] = [0.1, -0.2, 0.3, 0.4]
    params[4:6] = [0.05, -0.05]
    params[6:8] = [0.7, -0.6]
    params[8] = 0.2
    model = Mlp(
        input_dim=2, hidden_sizes=(2,), activation="sigmoid",
        params=params, meta=meta, feat_lo=np.zeros(2), feat_span=np.ones(2),
    )
    assert predict(model, [0.5, 0.25]) == pytest.approx(0.28804551895648145, abs=1e-15)


def test_gradient_check_random_networks():
    rng = np.random.default_rng(42)
    worst = 0.0
    for t in range(20):
        d = int(rng.integers(1, 8))
        depth = int(rng.integers(0, 3))
        hidden = tuple(int(h) for h in rng.integers(1, 9, size=depth))
        act = "sigmoid" if t % 2 == 0 else "tanh"
        cfg = MlpConfig(hidden_sizes=hidden, seed=t, max_epochs=1, activation=act)
        model = train(cfg, rng.random((4, d)), rng.random(4))
        err = gradient_check(model, rng.random(d), float(rng.random()))
        worst = max(worst, err)
    assert worst < 1e-4


def test_gradient_check_linear_network_is_exact():
    rng = np.random.default_rng(1)
    model = train(MlpConfig(hidden_sizes=(), seed=0, max_epochs=1), rng.random((5, 3)), rng.random(5))
    assert gradient_check(model, rng.random(3), 0.5) < 1e-7


def test_gradient_check_zero_everything():
    meta = _layer_meta(2, ())
    model = Mlp(
        input_dim=2, hidden_sizes=(), activation="sigmoid",
        params=np.zeros(3), meta=meta, feat_lo=np.zeros(2), feat_span=np.ones(2),
    )
    assert gradient_check(model, np.zeros(2), 0.0) == 0.0


def test_full_batch_convex_loss_non_increasing():
    # no hidden layer and a tiny step: per-epoch loss on the whole set must
    # not increase
    rng = np.random.default_rng(5)
    X = rng.random((30, 3))
    y = X @ np.array([1.0, -2.0, 0.5]) + 1.0

    def full_loss(model):
        return float(np.mean([(predict(model, x) - t) ** 2 for x, t in zip(X, y)]))

    losses = []
    for epochs in (1, 2, 4, 8, 16, 32):
        model = train(
            MlpConfig(hidden_sizes=(), learning_rate=0.001, momentum=0.0,
                      max_epochs=epochs, seed=3),
            X, y,
        )
        losses.append(full_loss(model))
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_min_gradient_stops_early():
    rng = np.random.default_rng(8)
    X = rng.random((20, 2))
    y = np.full(20, 3.0)
    cfg = MlpConfig(hidden_sizes=(), learning_rate=0.1, momentum=0.0,
                    max_epochs=5000, min_gradient=1e-3, seed=1)
    model = train(cfg, X, y)
    assert model.epochs_run < 5000


def test_train_kernel_matches_reference_gradients():
    """The generated training kernel must reproduce, bit for bit, momentum
    SGD on the gradients of the reference backward pass."""
    from qospred.mlp import _ACTIVATIONS, _init_params, _loss_grad

    for hidden, act, dt in (
        ((), "sigmoid", "float64"),
        ((5,), "sigmoid", "float32"),
        ((6, 3), "tanh", "float64"),
        ((8, 4), "sigmoid", "float32"),
    ):
        rng = np.random.default_rng(hash((hidden, act, dt)) % 2**32)
        n, d = 7, 4
        X = rng.random((n, d))
        y = rng.random(n)
        cfg = MlpConfig(hidden_sizes=hidden, learning_rate=0.05, momentum=0.9,
                        max_epochs=3, seed=11, activation=act, dtype=dt)
        model = train(cfg, X, y)

        # reference: same init, same orders, _loss_grad + explicit momentum
        dtype = np.dtype(dt)
        lo = X.min(axis=0)
        span = X.max(axis=0) - lo
        span[span == 0] = 1.0
        Xs = ((X - lo) / span).astype(dtype)
        Ys = y.astype(dtype)
        ref_rng = np.random.default_rng(11)
        meta = model.meta
        params = _init_params(meta, ref_rng, dtype)
        orders = np.stack([ref_rng.permutation(n) for _ in range(3)])
        vel = np.zeros_like(params)
        size = int(meta[0, 2] + meta[:, 3].sum())
        work = np.zeros(size, dtype=dtype)
        deltas = np.zeros(size, dtype=dtype)
        grad = np.zeros_like(params)
        lr = dtype.type(cfg.learning_rate)
        mom = dtype.type(cfg.momentum)
        act_id = _ACTIVATIONS[act]
        for ep in range(3):
            for s in orders[ep]:
                _loss_grad(params, meta, Xs[s], Ys[s], act_id, work, deltas, grad)
                # mirror the kernel's association: weights use (lr*input)*delta
                a_pos = int(meta[0, 2])
                for w_off, b_off, din, dout in meta:
                    in_vec = work[a_pos - din : a_pos]
                    d_vec = deltas[a_pos : a_pos + dout]
                    gw = np.outer(lr * in_vec, d_vec)
                    wslice = slice(w_off, w_off + din * dout)
                    bslice = slice(b_off, b_off + dout)
                    vel[wslice] = mom * vel[wslice] - gw.ravel()
                    params[wslice] += vel[wslice]
                    vel[bslice] = mom * vel[bslice] - lr * d_vec
                    params[bslice] += vel[bslice]
                    a_pos += dout
        assert np.array_equal(model.params, params), (hidden, act, dt)


def test_float32_mode_trains_and_is_deterministic():
    rng = np.random.default_rng(3)
    X = rng.random((25, 4))
    y = rng.random(25)
    cfg = MlpConfig(hidden_sizes=(8,), max_epochs=20, seed=2, dtype="float32")
    a = train(cfg, X, y)
    b = train(cfg, X, y)
    assert a.params.dtype == np.float32
    assert np.array_equal(a.params, b.params)
    # gradient check promotes to float64 internally
    assert gradient_check(a, rng.random(4), 0.3) < 1e-4
