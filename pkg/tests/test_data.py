import warnings

import numpy as np
import pytest

from grouploss.data import (
    Dataset,
    ExcludedClassWarning,
    load_dataset,
    make_blobs,
    sample_batch,
    save_dataset,
    zero_shot_split,
)
from grouploss.errors import DatasetError, SamplerError

from . import oracles


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# load_dataset ---------------------------------------------------------------------------

def test_empty_file_is_an_error(tmp_path):
    with pytest.raises(DatasetError, match="empty"):
        load_dataset(write(tmp_path, ""))
    with pytest.raises(DatasetError, match="no rows"):
        load_dataset(write(tmp_path, "id,label,f0\n"))


def test_three_row_fixture(tmp_path):
    ds = load_dataset(write(tmp_path, "id,label,f0,f1\na,2,0.5,1\nb,7,-1,2e-3\nc,2,3,4\n"))
    assert len(ds) == 3 and ds.dim == 2
    assert list(ds.ids) == ["a", "b", "c"]
    assert {k: v.tolist() for k, v in ds.class_index.items()} == {2: [0, 2], 7: [1]}
    np.testing.assert_array_equal(ds.features, [[0.5, 1], [-1, 2e-3], [3, 4]])


def test_tsv_format(tmp_path):
    ds = load_dataset(write(tmp_path, "id\tlabel\tf0\nx\t1\t2.5\n", "d.tsv"), format="tsv")
    assert ds.features.tolist() == [[2.5]]
    with pytest.raises(DatasetError, match="format"):
        load_dataset(tmp_path / "d.tsv", format="parquet")


def test_large_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(11)
    ds = Dataset(rng.normal(size=(10_000, 6)) * 10.0 ** rng.integers(-20, 20, size=(10_000, 6)), rng.integers(0, 50, 10_000))
    path = tmp_path / "big.csv"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.labels, ds.labels)
    assert np.array_equal(back.ids, ds.ids)


@pytest.mark.parametrize(
    "body, line, what",
    [
        ("a,0,1,2\nb,1,3\n", 3, "fields"),
        ("a,0,1,2\nb,1,3,x\n", 3, "x"),
        ("a,0,1,2\nb,one,3,4\n", 3, "one"),
        ("a,0,1,2\nb,1,3,4\na,1,5,6\n", 4, "duplicate"),
        ("a,0,1,nan\n", 2, "non-finite"),
    ],
    ids=["ragged", "non-numeric", "bad-label", "duplicate-id", "nan"],
)
def test_parse_errors_carry_line_numbers(tmp_path, body, line, what):
    path = write(tmp_path, "id,label,f0,f1\n" + body)
    with pytest.raises(DatasetError, match=rf":{line}:.*{what}"):
        load_dataset(path)


def test_bad_header(tmp_path):
    with pytest.raises(DatasetError, match=":1:"):
        load_dataset(write(tmp_path, "name,label,f0\na,0,1\n"))


# make_blobs -------------------------------------------------------------------------------

def test_blobs_are_reproducible():
    a, b = make_blobs(seed=4), make_blobs(seed=4)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.features, make_blobs(seed=5).features)


def test_zero_spread_collapses_classes():
    ds = make_blobs(num_classes=4, per_class=6, spread=0.0, seed=1)
    for rows in ds.class_index.values():
        assert np.all(ds.features[rows] == ds.features[rows[0]])


def test_default_blobs_are_separable_by_raw_nearest_neighbor():
    ds = make_blobs()
    assert (len(ds), ds.dim, ds.num_classes) == (500, 32, 10)
    assert oracles.nearest_neighbor_accuracy(ds.features, ds.labels) >= 0.99


def test_class_means_are_far_apart():
    ds = make_blobs(num_classes=20, per_class=200, seed=2)
    means = np.array([ds.features[r].mean(axis=0) for r in ds.class_index.values()])
    gaps = np.linalg.norm(means[:, None] - means[None], axis=2)[np.triu_indices(20, 1)]
    # sample means wobble by about spread * sqrt(d / per_class) = 0.4
    assert gaps.min() >= 4 - 1.2


def test_infeasible_separation_raises():
    with pytest.raises(DatasetError, match="could not place"):
        make_blobs(num_classes=50, spread=5.0, center_box=1.0, informative_dims=2, max_tries=5)
    with pytest.raises(DatasetError):
        make_blobs(num_classes=0)
    with pytest.raises(DatasetError):
        make_blobs(spread=-1)


# sampler ------------------------------------------------------------------------------------

def test_no_anchor_batch():
    batch = sample_batch(make_blobs(seed=0), 5, 9, 0, np.random.default_rng(0))
    assert batch.anchors.indices == () and batch.size == 45


def test_batch_geometry_with_one_anchor_per_class():
    ds = make_blobs(seed=0)
    batch = sample_batch(ds, 3, 9, 1, np.random.default_rng(1))
    assert batch.size == 27 and len(batch.anchors.indices) == 3
    assert sorted(i // 9 for i in batch.anchors.indices) == [0, 1, 2]
    assert np.array_equal(batch.anchors.labels, batch.labels)
    for k, c in enumerate(batch.classes):
        block = slice(9 * k, 9 * k + 9)
        assert np.all(ds.labels[batch.indices[k]] == c)
        assert np.all(batch.labels[block] == ds.codes([c])[0])
        assert len(set(batch.indices[k].tolist())) == 9
        assert np.array_equal(batch.features[block], ds.features[batch.indices[k]])


def test_sampler_is_reproducible():
    ds = make_blobs(seed=0)
    a = sample_batch(ds, 5, 9, 2, np.random.default_rng(3))
    b = sample_batch(ds, 5, 9, 2, np.random.default_rng(3))
    assert np.array_equal(a.features, b.features) and a.anchors.indices == b.anchors.indices


def test_sampler_frequencies_are_uniform():
    ds = make_blobs(num_classes=12, per_class=15, d_in=4, informative_dims=4, seed=0)
    rng = np.random.default_rng(99)
    draws, k, s = 10_000, 5, 3
    class_hits = np.zeros(12)
    row_hits = np.zeros(len(ds))
    anchor_pos = np.zeros(s)
    for _ in range(draws):
        b = sample_batch(ds, k, s, 1, rng)
        class_hits[b.classes] += 1
        for rows in b.indices:
            row_hits[rows] += 1
        for i in b.anchors.indices:
            anchor_pos[i % s] += 1
    p = k / 12
    assert np.all(np.abs(class_hits - draws * p) <= 3 * np.sqrt(draws * p * (1 - p)) + 1)
    # each row: chosen when its class is (p) and then with prob s / per_class
    q = p * s / 15
    assert np.abs(row_hits - draws * q).max() <= 4 * np.sqrt(draws * q * (1 - q))
    n_anchor = draws * k
    assert np.all(np.abs(anchor_pos - n_anchor / s) <= 3 * np.sqrt(n_anchor * (1 / s) * (1 - 1 / s)) + 1)


def test_sampler_errors():
    ds = make_blobs(num_classes=4, per_class=5, seed=0)
    rng = np.random.default_rng(0)
    with pytest.raises(SamplerError):
        sample_batch(ds, 5, 3, 1, rng)
    with pytest.raises(SamplerError):
        sample_batch(ds, 2, 3, 3, rng)
    with pytest.raises(SamplerError):
        sample_batch(ds, 2, 0, 0, rng)
    with pytest.raises(SamplerError), warnings.catch_warnings():
        warnings.simplefilter("ignore", ExcludedClassWarning)
        sample_batch(ds, 2, 6, 1, rng)


def test_small_classes_are_excluded_with_warning():
    labels = np.array([0] * 5 + [1] * 2 + [2] * 5)
    ds = Dataset(np.random.default_rng(0).normal(size=(12, 3)), labels)
    with pytest.warns(ExcludedClassWarning):
        batch = sample_batch(ds, 2, 3, 1, np.random.default_rng(0))
    assert set(batch.classes.tolist()) == {0, 2}


def test_zero_shot_split_is_class_disjoint():
    train, test = zero_shot_split(make_blobs(num_classes=20, seed=0), 10)
    assert set(train.classes.tolist()) == set(range(10))
    assert set(test.classes.tolist()) == set(range(10, 20))
    assert (train.split, test.split) == ("train", "test")
    with pytest.raises(DatasetError):
        zero_shot_split(train, 10)


def test_dataset_rejects_bad_input():
    with pytest.raises(DatasetError):
        Dataset(np.zeros((3, 2)), [0, 1])
    with pytest.raises(DatasetError):
        Dataset(np.array([[np.inf]]), [0])
