import numpy as np
import pytest

from qospred.data import (
    Dataset,
    GeoContext,
    QosMatrix,
    load_dataset,
    load_split,
    make_split,
    sample_test_instances,
    save_split,
)
from qospred.errors import ConfigError, DatasetError
from qospred.synth import make_dataset, write_dataset


def _matrix(n_obs=1000, shape=(40, 40), seed=0):
    rng = np.random.default_rng(seed)
    values = np.zeros(shape)
    cells = rng.choice(shape[0] * shape[1], size=n_obs, replace=False)
    values.flat[cells] = rng.random(n_obs) + 0.1
    return QosMatrix(values)


def test_geo_context_range_validation():
    GeoContext(90, 180)
    GeoContext(-90, -180)
    with pytest.raises(DatasetError):
        GeoContext(91, 0)
    with pytest.raises(DatasetError):
        GeoContext(0, 181)


def test_qos_matrix_rejects_negative():
    with pytest.raises(DatasetError):
        QosMatrix(np.array([[1.0, -0.5]]))


def test_split_ratio_arithmetic():
    m = _matrix(n_obs=1000)
    split = make_split(m, 0.10, seed=1)
    assert split.n_train() == 100
    assert split.validation_cells.shape[0] == 300
    assert split.test_cells.shape[0] == 600


def test_split_determinism_and_seed_sensitivity():
    m = _matrix()
    a = make_split(m, 0.10, seed=7)
    b = make_split(m, 0.10, seed=7)
    assert np.array_equal(a.train_mask, b.train_mask)
    assert np.array_equal(a.test_cells, b.test_cells)
    assert a.fingerprint() == b.fingerprint()
    c = make_split(m, 0.10, seed=8)
    assert not np.array_equal(a.train_mask, c.train_mask)


def test_split_partitions_observed_cells():
    m = _matrix(n_obs=500)
    split = make_split(m, 0.3, seed=2)
    observed = {tuple(c) for c in np.argwhere(m.values > 0)}
    train = {tuple(c) for c in np.argwhere(split.train_mask)}
    val = {tuple(c) for c in split.validation_cells}
    test = {tuple(c) for c in split.test_cells}
    assert train <= observed and val <= observed and test <= observed
    assert not (train & val) and not (train & test) and not (val & test)
    assert len(train) + len(val) + len(test) == len(observed)


def test_split_masked_matrix_has_only_train_cells():
    m = _matrix(n_obs=300)
    split = make_split(m, 0.4, seed=3)
    masked = split.train_values(m)
    assert np.count_nonzero(masked) == split.n_train()
    assert np.array_equal(masked > 0, split.train_mask)


def test_split_rejects_bad_density_and_empty_matrix():
    m = _matrix()
    with pytest.raises(ConfigError):
        make_split(m, 0.0, seed=0)
    with pytest.raises(ConfigError):
        make_split(m, 1.0, seed=0)
    with pytest.raises(DatasetError):
        make_split(QosMatrix(np.zeros((3, 3))), 0.5, seed=0)


def test_sample_test_instances():
    m = _matrix(n_obs=1000)
    split = make_split(m, 0.10, seed=1)
    sample = sample_test_instances(split, 200, seed=5)
    assert sample.shape == (200, 2)
    assert len({tuple(c) for c in sample}) == 200
    test_set = {tuple(c) for c in split.test_cells}
    assert {tuple(c) for c in sample} <= test_set
    again = sample_test_instances(split, 200, seed=5)
    assert np.array_equal(sample, again)
    everything = sample_test_instances(split, len(split.test_cells), seed=6)
    assert {tuple(c) for c in everything} == test_set
    with pytest.raises(ConfigError):
        sample_test_instances(split, len(split.test_cells) + 1, seed=0)


def test_split_round_trip(tmp_path):
    m = _matrix(n_obs=200, shape=(15, 20))
    split = make_split(m, 0.25, seed=9)
    path = tmp_path / "split.txt"
    save_split(split, path)
    loaded = load_split(path)
    assert loaded.density == split.density and loaded.seed == split.seed
    assert np.array_equal(loaded.train_mask, split.train_mask)
    assert np.array_equal(loaded.validation_cells, split.validation_cells)
    assert np.array_equal(loaded.test_cells, split.test_cells)


def test_load_dataset_round_trip(tmp_path):
    ds = make_dataset(12, 18, seed=4, observed_fraction=0.8)
    write_dataset(ds, tmp_path / "d")
    loaded = load_dataset(tmp_path / "d", "ws1", "rt")
    assert loaded.n_users == 12 and loaded.n_services == 18
    assert loaded.n_slices == 1
    assert not loaded.context_free
    assert np.allclose(loaded.matrix().values, ds.matrix().values, atol=1e-7)
    # bit-identical reload
    again = load_dataset(tmp_path / "d", "ws1", "rt")
    assert np.array_equal(loaded.matrix().values, again.matrix().values)


def test_load_dataset_multi_slice_context_free(tmp_path):
    ds = make_dataset(6, 9, seed=5, with_context=False, n_slices=3)
    write_dataset(ds, tmp_path / "d2")
    loaded = load_dataset(tmp_path / "d2", "ws2", "rt")
    assert loaded.n_slices == 3
    assert loaded.context_free
    assert loaded.matrix(2).values.shape == (6, 9)


def test_load_dataset_negative_sentinels_become_unobserved(tmp_path):
    root = tmp_path / "d3"
    root.mkdir()
    (root / "rtMatrix.txt").write_text("1.5 -1 0.3\n-1 2.0 -1\n")
    (root / "userlist.txt").write_text(
        "[User ID]\t[Latitude]\t[Longitude]\nu0\t10\t20\nu1\t11\t21\n"
    )
    (root / "wslist.txt").write_text(
        "[Service ID]\t[Latitude]\t[Longitude]\ns0\t0\t0\ns1\t1\t1\ns2\t2\t2\n"
    )
    ds = load_dataset(root, "ws1", "rt")
    assert np.array_equal(ds.matrix().values, [[1.5, 0, 0.3], [0, 2.0, 0]])


def test_load_dataset_parse_error_names_file_and_line(tmp_path):
    root = tmp_path / "d4"
    root.mkdir()
    (root / "rtMatrix.txt").write_text("1.0 2.0\n3.0 oops\n")
    with pytest.raises(DatasetError) as err:
        load_dataset(root, "ws2", "rt")
    message = str(err.value)
    assert "rtMatrix.txt" in message and "line 2" in message and "oops" in message


def test_load_dataset_dimension_mismatch(tmp_path):
    root = tmp_path / "d5"
    root.mkdir()
    (root / "rtMatrix.txt").write_text("1.0 2.0\n3.0 4.0\n")
    (root / "userlist.txt").write_text("[User ID]\t[Latitude]\t[Longitude]\nu0\t1\t2\n")
    (root / "wslist.txt").write_text(
        "[Service ID]\t[Latitude]\t[Longitude]\ns0\t0\t0\ns1\t1\t1\n"
    )
    with pytest.raises(DatasetError) as err:
        load_dataset(root, "ws1", "rt")
    assert "userlist" in str(err.value)


def test_load_dataset_missing_files(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "nope", "ws1", "rt")
    root = tmp_path / "d6"
    root.mkdir()
    with pytest.raises(DatasetError):
        load_dataset(root, "ws2", "rt")


def test_null_coordinates_flag_context_free(tmp_path):
    root = tmp_path / "d7"
    root.mkdir()
    (root / "rtMatrix.txt").write_text("1.0 2.0\n3.0 4.0\n")
    (root / "userlist.txt").write_text(
        "[User ID]\t[Latitude]\t[Longitude]\nu0\t1\t2\nu1\tnull\tnull\n"
    )
    (root / "wslist.txt").write_text(
        "[Service ID]\t[Latitude]\t[Longitude]\ns0\t0\t0\ns1\t1\t1\n"
    )
    ds = load_dataset(root, "ws1", "rt")
    assert ds.context_free
    assert ds.users[1][1] is None
