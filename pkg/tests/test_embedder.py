"""Tests for BPR-MF embeddings and embedding files"""

from os.path import join
import logging

import numpy as np
import pytest

from gpatch.errors import DataError
from gpatch.io import write_vector_file
from gpatch.workflows import (
    USER,
    ITEM,
    IdInterner,
    EmbeddingTable,
    bpr_gradients,
    bpr_step,
    train_bpr_mf,
    load_embeddings,
    write_embeddings,
)


def test_embedding_table():
    table = EmbeddingTable(np.ones((2, 3)), [[1.0, 2.0, 3.0], [np.nan] * 3])
    assert table.dim == 3
    assert (table.n_users, table.n_items) == (2, 2)
    assert table.present(ITEM).tolist() == [True, False]
    assert table == EmbeddingTable(table.user.copy(), table.item.copy())
    with pytest.raises(DataError, match="dimension mismatch"):
        EmbeddingTable(np.ones((2, 3)), np.ones((2, 4)))


def test_bpr_gradients():
    rng = np.random.default_rng(0)
    e_u, e_i, e_j = rng.standard_normal((3, 4))
    loss, grads = bpr_gradients(e_u, e_i, e_j)
    assert loss == pytest.approx(np.log1p(np.exp(-e_u @ (e_i - e_j))))
    h = 1e-6
    for arg, grad in enumerate(grads):
        for k in range(4):
            args = [e_u.copy(), e_i.copy(), e_j.copy()]
            args[arg][k] += h
            plus = bpr_gradients(*args)[0]
            args[arg][k] -= 2 * h
            minus = bpr_gradients(*args)[0]
            assert grad[k] == pytest.approx((plus - minus) / (2 * h), abs=1e-6)


def test_bpr_step():
    U, V = np.zeros((2, 2)), np.zeros((3, 2))
    loss = bpr_step(U, V, np.array([0]), np.array([1]), np.array([2]), lr=0.1)
    # all scores are zero before the update
    assert loss.tolist() == pytest.approx([np.log(2.0)])
    assert np.all(U == 0.0)
    U[0] = [1.0, 0.0]
    bpr_step(U, V, np.array([0]), np.array([1]), np.array([2]), lr=1.0)
    assert V[1, 0] > 0 > V[2, 0]


def test_train_bpr_mf(toy_graph):
    users, items = toy_graph.edges()
    emb = train_bpr_mf(users, items, 4, 4, dim=5, epochs=3, batch_size=2, seed=3)
    assert emb.dim == 5
    assert (emb.n_users, emb.n_items) == (4, 4)
    # node 3 has no interactions on either side
    assert emb.present(USER).tolist() == [True, True, True, False]
    assert emb.present(ITEM).tolist() == [True, True, True, False]
    again = train_bpr_mf(users, items, 4, 4, dim=5, epochs=3, batch_size=2, seed=3)
    assert emb == again
    other = train_bpr_mf(users, items, 4, 4, dim=5, epochs=3, batch_size=2, seed=4)
    assert emb != other
    with pytest.raises(DataError, match="embedding split is empty"):
        train_bpr_mf([], [], 2, 2, dim=2)


def test_train_bpr_mf_learns():
    # two disjoint blocks, positives should outscore the other block
    users = np.repeat(np.arange(4), 2)
    items = np.array([0, 1, 0, 1, 2, 3, 2, 3])
    emb = train_bpr_mf(users, items, 4, 4, dim=4, lr=0.1, l2=0.0, epochs=200, seed=0)
    scores = emb.user @ emb.item.T
    assert scores[0, :2].min() > scores[0, 2:].max()
    assert scores[3, 2:].min() > scores[3, :2].max()


@pytest.fixture
def interner():
    return IdInterner(users=["a", "b", "c"], items=["x", "y"])


def test_load_embeddings(tmpdir, interner, caplog):
    user_fn, item_fn = join(tmpdir, "user.txt"), join(tmpdir, "item.txt")
    # row order of the file differs from the dense order, "z" is unknown
    write_vector_file(user_fn, ["c", "a", "z"], [[3.0, 3.0], [1.0, 1.0], [9.0, 9.0]])
    write_vector_file(item_fn, ["y", "x"], [[2.0, 0.0], [1.0, 0.0]], binary=True)
    with caplog.at_level(logging.WARNING):
        emb = load_embeddings(user_fn, item_fn, interner)
    assert "1 unknown user ids" in caplog.text
    assert emb.user[0].tolist() == [1.0, 1.0]
    assert emb.user[2].tolist() == [3.0, 3.0]
    assert emb.present(USER).tolist() == [True, False, True]
    assert emb.item.tolist() == [[1.0, 0.0], [2.0, 0.0]]

    required = {USER: np.array([0, 1])}
    with caplog.at_level(logging.WARNING):
        load_embeddings(user_fn, item_fn, interner, required=required)
    assert "1 warm users without embedding" in caplog.text
    with pytest.raises(DataError, match="warm users without embedding"):
        load_embeddings(user_fn, item_fn, interner, required=required, strict=True)
    with pytest.raises(DataError, match="does not match 3"):
        load_embeddings(user_fn, item_fn, interner, dim=3)


def test_load_embeddings_errors(tmpdir, interner):
    user_fn, item_fn = join(tmpdir, "user.txt"), join(tmpdir, "item.txt")
    write_vector_file(user_fn, ["a"], [[1.0, 1.0]])
    write_vector_file(item_fn, ["x"], [[1.0, 1.0, 1.0]])
    with pytest.raises(DataError, match="Embedding dimension mismatch"):
        load_embeddings(user_fn, item_fn, interner)
    with pytest.raises(DataError, match="Vector file not found"):
        load_embeddings(join(tmpdir, "missing.txt"), item_fn, interner)


def test_write_embeddings(tmpdir, interner):
    emb = EmbeddingTable(
        [[0.1, 0.2], [np.nan, np.nan], [1.0 / 3.0, -2.0]], [[5.0, 6.0], [7.0, 8.0]]
    )
    user_fn, item_fn = join(tmpdir, "user.gpe"), join(tmpdir, "item.gpe")
    write_embeddings(user_fn, item_fn, emb, interner)
    assert load_embeddings(user_fn, item_fn, interner, dim=2) == emb
