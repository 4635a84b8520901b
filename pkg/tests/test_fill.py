import math

import numpy as np
import pytest

from qospred.data import QosMatrix
from qospred.errors import PipelineError
from qospred.fill import MfConfig, cf_estimates, cf_fill, mf_factorize, mf_fill
from qospred.filtering import FilterResult


def _fr(values, mode="user-intensive"):
    v = np.asarray(values, dtype=float)
    return FilterResult(
        users=np.arange(v.shape[0]),
        services=np.arange(v.shape[1]),
        submatrix=QosMatrix(v),
        mode=mode,
    )


# --- straight-line reference for the collaborative fill (no vectorization) ---

def _cos(a, b):
    num = float(np.dot(a, b))
    na, nb = math.sqrt(float(np.dot(a, a))), math.sqrt(float(np.dot(b, b)))
    if num == 0.0 or na == 0.0 or nb == 0.0:
        return 0.0
    return min(num / (na * nb), 1.0)


def brute_force_cf_fill(q, mode="user-intensive"):
    q = np.asarray(q, dtype=float)
    if mode == "service-intensive":
        return brute_force_cf_fill(q.T, "user-intensive").T
    n, m = q.shape
    W = [[_cos(q[i], q[k]) for k in range(n)] for i in range(n)]
    V = [[_cos(q[:, j], q[:, k]) for k in range(m)] for j in range(m)]

    def avg(i, j):
        num = den = 0.0
        for k in range(n):
            if k != i and q[k, j] != 0.0:
                num += W[i][k] * q[k, j]
                den += W[i][k]
        return (num / den) if den > 0.0 else None

    out = q.copy()
    mean_obs = q[q > 0].mean() if (q > 0).any() else 0.0
    for i in range(n):
        for j in range(m):
            if q[i, j] != 0.0:
                continue
            a = avg(i, j)
            if a is None:
                out[i, j] = mean_obs
                continue
            dev_num = dev_den = 0.0
            for k in range(m):
                if q[i, k] != 0.0:
                    ak = avg(i, k)
                    if ak is None:
                        continue
                    dev_num += V[j][k] * (q[i, k] - ak)
                    dev_den += V[j][k]
            d = dev_num / dev_den if dev_den > 0.0 else 0.0
            out[i, j] = max(a + d, 0.0)
    return out


GOLDEN_4X4 = np.array(
    [
        [2.0, 0.5, 1.0, 0.0],
        [1.8, 0.0, 1.1, 3.0],
        [0.4, 0.3, 0.0, 1.2],
        [2.2, 0.6, 1.0, 3.4],
    ]
)


def test_cf_fill_no_zeros_is_identity():
    values = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(cf_fill(_fr(values)).values, values)


def test_cf_fill_uniform_weights_average():
    # with unit similarities supplied, the missing cell is the plain mean of
    # its column's observed values and the deviation terms cancel
    values = np.array([[9.0, 9.0, 0.0], [9.0, 9.0, 2.0], [9.0, 9.0, 4.0]])
    ones = np.ones((3, 3))
    out = cf_fill(_fr(values), user_sims=ones, service_sims=ones)
    assert out.values[0, 2] == pytest.approx(3.0)


def test_cf_fill_golden_fixture_user_intensive():
    # evaluated with the straight-line reference before the build
    out = cf_fill(_fr(GOLDEN_4X4)).values
    assert out[0, 3] == pytest.approx(2.8795736928765097, abs=1e-12)
    assert out[1, 1] == pytest.approx(0.8020780997463786, abs=1e-12)
    # low-magnitude row: the deviation overwhelms the average, clamped at 0
    assert out[2, 2] == 0.0


def test_cf_fill_golden_fixture_service_intensive():
    out = cf_fill(_fr(GOLDEN_4X4, "service-intensive")).values
    assert out[0, 3] == pytest.approx(2.8329653600872695, abs=1e-12)
    assert out[1, 1] == pytest.approx(0.8867911614533746, abs=1e-12)
    assert out[2, 2] == 0.0


def test_cf_fill_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(0)
    for t in range(60):
        mode = "user-intensive" if t % 2 == 0 else "service-intensive"
        values = rng.random((5, 5)) + 0.1
        values[rng.random((5, 5)) < 0.4] = 0.0
        got = cf_fill(_fr(values, mode)).values
        ref = brute_force_cf_fill(values, mode)
        assert np.max(np.abs(got - ref)) < 1e-10


def test_cf_fill_preserves_observed_and_nonnegative():
    rng = np.random.default_rng(1)
    for t in range(20):
        values = rng.random((8, 6)) + 0.05
        values[rng.random((8, 6)) < 0.5] = 0.0
        if not (values > 0).any():
            continue
        fr = _fr(values, "user-intensive" if t % 2 else "service-intensive")
        out = cf_fill(fr).values
        obs = values > 0
        assert np.array_equal(out[obs], values[obs])
        assert (out >= 0).all()


def test_cf_fill_mean_fallback_counted():
    # service 2 observed by nobody: every row's fill there must use the
    # matrix mean
    values = np.array([[1.0, 2.0, 0.0], [2.0, 1.0, 0.0]])
    stats = {}
    out = cf_fill(_fr(values), stats=stats)
    assert stats["mean_fallback_cells"] == 2
    assert out.values[0, 2] == pytest.approx(values[values > 0].mean())


def test_cf_estimates_exclude_own_value():
    rng = np.random.default_rng(2)
    values = rng.random((6, 6)) + 0.5
    est = cf_estimates(_fr(values))
    # estimates at observed cells must not simply echo the observed value
    assert not np.allclose(est, values)
    assert est.shape == values.shape and (est >= 0).all()


def test_mf_fill_fully_observed_is_identity():
    values = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(mf_fill(_fr(values), MfConfig(epochs=2)).values, values)


def test_mf_fill_rank1_recovery():
    errs = []
    for s in range(10):
        rng = np.random.default_rng(100 + s)
        u = rng.uniform(0.5, 2.0, 20)
        v = rng.uniform(0.5, 2.0, 20)
        truth = np.outer(u, v)
        masked = rng.random((20, 20)) < 0.3
        values = np.where(masked, 0.0, truth)
        filled = mf_fill(_fr(values), MfConfig(seed=s)).values
        errs.append(np.mean(np.abs(filled[masked] - truth[masked]) / truth[masked]))
    assert max(errs) < 0.05


def test_mf_fill_deterministic():
    rng = np.random.default_rng(3)
    values = rng.random((12, 9)) + 0.1
    values[rng.random((12, 9)) < 0.4] = 0.0
    a = mf_fill(_fr(values), MfConfig(seed=5)).values
    b = mf_fill(_fr(values), MfConfig(seed=5)).values
    assert np.array_equal(a, b)


def test_mf_fill_preserves_observed_and_nonnegative():
    rng = np.random.default_rng(4)
    values = rng.random((10, 10)) + 0.1
    values[rng.random((10, 10)) < 0.35] = 0.0
    out = mf_fill(_fr(values), MfConfig(seed=1, epochs=100)).values
    obs = values > 0
    assert np.array_equal(out[obs], values[obs])
    assert (out >= 0).all()


def test_mf_factorize_loss_non_increasing_overall():
    rng = np.random.default_rng(5)
    values = (rng.random((15, 15)) + 0.5) * (rng.random((15, 15)) > 0.4)
    _, _, losses = mf_factorize(values, MfConfig(seed=2))
    assert losses[-1] <= losses[0]


def test_mf_factorize_empty_matrix_raises():
    with pytest.raises(PipelineError):
        mf_factorize(np.zeros((3, 3)), MfConfig())
