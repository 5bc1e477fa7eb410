"""Tests for splits, synthetic data, loaders and content features"""

import numpy as np
import pandas as pd
import pytest

from gpatch.errors import DataError
from gpatch.io import write_vector_file
from gpatch.workflows import (
    USER,
    ITEM,
    PARTITIONS,
    IdInterner,
    SyntheticSpec,
    build_graph,
    make_split,
    make_synthetic,
    read_interactions,
    load_user_lists,
    load_ldac_features,
    load_features,
    load_feature_table,
    write_split,
    read_split,
)


@pytest.fixture
def dense_pairs():
    # every user interacts with every item
    users, items = np.meshgrid(np.arange(12), np.arange(10), indexing="ij")
    return users.ravel(), items.ravel()


def test_make_split(pipeline):
    split = pipeline.split
    split.validate()
    counts = split.counts()
    assert sum(counts.values()) == len(split)
    assert list(counts) == list(PARTITIONS)
    assert split.cold_items.sum() >= round(0.2 * split.n_items)
    for name in ["embed", "train"]:
        users, items = split.partition(name)
        assert not split.cold_items[items].any()
        assert not split.cold_users[users].any()
    keys = split.users * split.n_items + split.items
    assert np.unique(keys).size == keys.size


def test_make_split_deterministic(dense_pairs):
    a = make_split(*dense_pairs, 12, 10, seed=5)
    b = make_split(*dense_pairs, 12, 10, seed=5)
    c = make_split(*dense_pairs, 12, 10, seed=6)
    assert np.array_equal(a.part, b.part)
    assert np.array_equal(a.cold_items, b.cold_items)
    assert not np.array_equal(a.part, c.part)


def test_make_split_cold_halves(dense_pairs):
    # all warm interactions go to embed, cold ones split evenly per item
    split = make_split(
        *dense_pairs, 12, 10, cold_item_frac=0.3, ratios=(1, 0, 0, 0), seed=0
    )
    assert split.cold_items.sum() == 3
    assert not split.cold_users.any()
    assert split.counts() == {"embed": 84, "train": 0, "val": 18, "test": 18}
    for item in np.flatnonzero(split.cold_items):
        part = split.part[split.items == item]
        assert (part == PARTITIONS.index("val")).sum() == 6
        assert (part == PARTITIONS.index("test")).sum() == 6


def test_make_split_demotes():
    # no embed share: every node ends up cold and train is emptied
    users = np.array([0, 0, 1, 1, 2])
    items = np.array([0, 1, 0, 1, 1])
    split = make_split(users, items, 3, 2, cold_item_frac=0.0, ratios=(0, 1, 0, 0))
    assert split.cold_items.all() and split.cold_users.all()
    assert split.counts()["train"] == 0
    split.validate()


def test_make_split_warm_by_embed(pipeline):
    split = pipeline.split
    embed_users, embed_items = split.partition("embed")
    has_embed = np.bincount(embed_users, minlength=split.n_users) > 0
    assert np.array_equal(split.warm_users, has_embed)
    has_embed = np.bincount(embed_items, minlength=split.n_items) > 0
    assert np.array_equal(~split.cold_items, has_embed)
    # test interactions alone never make a user warm
    test_users, _ = split.partition("test")
    only_test = np.setdiff1d(test_users, embed_users)
    assert split.cold_users[only_test].all()


def test_make_split_errors(dense_pairs):
    with pytest.raises(ValueError, match="ratios"):
        make_split(*dense_pairs, 12, 10, ratios=(0.5, 0.5, 0.5, 0.0))
    with pytest.raises(ValueError, match="cold_item_frac"):
        make_split(*dense_pairs, 12, 10, cold_item_frac=1.0)
    with pytest.raises(DataError, match="no interactions"):
        make_split(np.array([], dtype=int), np.array([], dtype=int), 1, 1)


def test_make_synthetic():
    spec = SyntheticSpec(n_users=30, n_items=40, latent_dim=3, content_dim=4, seed=2)
    df, frames = make_synthetic(spec)
    df2, _ = make_synthetic(spec)
    assert df.equals(df2)
    assert len(df) == pytest.approx(0.01 * 30 * 40, abs=1)
    assert frames[USER].shape == (30, 4)
    assert frames[ITEM].index[0] == "i0"
    with pytest.raises(ValueError):
        SyntheticSpec(rho=1.5)
    with pytest.raises(DataError, match="unreachable"):
        make_synthetic(SyntheticSpec(n_users=2, n_items=2, density=0.1))


def test_make_synthetic_density():
    spec = SyntheticSpec(n_users=1000, n_items=1000, density=0.01, seed=4)
    df, _ = make_synthetic(spec)
    assert abs(len(df) / 1e6 - 0.01) <= 0.001
    assert not df.duplicated().any()


def test_make_synthetic_content():
    # noiseless content spans the latent space only
    spec = SyntheticSpec(n_users=50, n_items=60, latent_dim=3, content_dim=8, rho=1.0)
    _, frames = make_synthetic(spec)
    for side in [USER, ITEM]:
        assert np.linalg.matrix_rank(frames[side].values) == 3
    spec = SyntheticSpec(n_users=50, n_items=60, latent_dim=3, content_dim=8, rho=0.0)
    _, frames = make_synthetic(spec)
    assert np.linalg.matrix_rank(frames[ITEM].values) == 8


def test_read_interactions(tmpdir):
    fn = str(tmpdir.join("ratings.tsv"))
    with open(fn, "w") as fp:
        fp.write("# user item\nu1\ti1\nu2\tNA\n\nu1\ti1\n")
    df = read_interactions(fn)
    assert df.values.tolist() == [["u1", "i1"], ["u2", "NA"], ["u1", "i1"]]
    graph, interner = build_graph(df)
    assert graph.n_edges == 2
    with open(fn, "w") as fp:
        fp.write("u1\ti1\nu2\n")
    with pytest.raises(ValueError):
        read_interactions(fn)
    missing = str(tmpdir.join("missing.tsv"))
    with pytest.raises(DataError, match="missing.tsv"):
        read_interactions(missing)


def test_load_user_lists(tmpdir):
    fn = str(tmpdir.join("users.dat"))
    with open(fn, "w") as fp:
        fp.write("2 10 11\n1 12\n")
    df = load_user_lists(fn)
    assert df.values.tolist() == [["0", "10"], ["0", "11"], ["1", "12"]]
    with open(fn, "w") as fp:
        fp.write("3 10 11\n")
    with pytest.raises(DataError, match="count 3 does not match 2 items"):
        load_user_lists(fn)


def test_load_ldac_features(tmpdir):
    fn = str(tmpdir.join("mult.dat"))
    with open(fn, "w") as fp:
        fp.write("2 0:1 1:2\n1 1:1\n")
    df = load_ldac_features(fn)
    # term 1 occurs in every document and has zero idf
    assert df.index.tolist() == ["0", "1"]
    assert np.allclose(df.values, [[1.0, 0.0], [0.0, 0.0]])
    raw = load_ldac_features(fn, vocab_size=3, normalize=False)
    assert raw.shape == (2, 3)
    assert np.isclose(raw.values[0, 0], np.log(2.0))
    with pytest.raises(DataError, match="exceeds vocab_size"):
        load_ldac_features(fn, vocab_size=1)


def test_load_features(tmpdir):
    interner = IdInterner(users=["a", "b", "c"])
    fn = str(tmpdir.join("user.tsv"))
    matrix = np.array([[3.0, 4.0], [1.0, 0.0], [9.0, 9.0]])
    write_vector_file(fn, ["c", "a", "x"], matrix)
    cold = np.array([False, False, True])
    with pytest.raises(DataError, match="1 warm users without content"):
        load_features(fn, interner, USER, cold=cold)
    values = load_features(fn, interner, USER, cold=cold, warm_optional=True)
    assert np.array_equal(values, [[1.0, 0.0], [0.0, 0.0], [3.0, 4.0]])
    values = load_features(
        fn, interner, USER, cold=cold, warm_optional=True, normalize=True
    )
    assert np.allclose(values[2], [0.6, 0.8])
    cold = np.array([False, True, False])
    with pytest.raises(DataError, match="1 cold users without content"):
        load_features(fn, interner, USER, cold=cold, warm_optional=True)


def test_load_feature_table(tmpdir):
    interner = IdInterner(users=["a"], items=["x", "y"])
    fn = str(tmpdir.join("item.tsv"))
    write_vector_file(fn, ["x", "y"], np.eye(2))
    features = load_feature_table(None, fn, interner)
    assert features.dim(USER) == 0
    assert features.dim(ITEM) == 2
    assert features.user.shape == (1, 0)


def test_split_io(tmpdir, pipeline):
    manifest_fn = str(tmpdir.join("manifest.tsv"))
    cold_fn = str(tmpdir.join("cold_items.txt"))
    write_split(manifest_fn, cold_fn, pipeline.split, pipeline.interner)
    df = pd.read_csv(manifest_fn, sep="\t", header=None)
    assert set(df[2]) <= set(PARTITIONS)
    interner = IdInterner(
        users=pipeline.interner.ids(USER), items=pipeline.interner.ids(ITEM)
    )
    split = read_split(manifest_fn, cold_fn, interner)
    assert np.array_equal(split.part, pipeline.split.part)
    assert np.array_equal(split.cold_items, pipeline.split.cold_items)
    assert np.array_equal(split.cold_users, pipeline.split.cold_users)
    with open(manifest_fn, "a") as fp:
        fp.write("u0\ti0\tholdout\n")
    with pytest.raises(DataError, match="holdout"):
        read_split(manifest_fn, cold_fn, IdInterner())
