# -*- coding: utf-8 -*-
"""Warm user and item embeddings: BPR matrix factorization and embedding files."""

import logging

import numpy as np
from scipy.special import expit

from ..errors import DataError, NumericError
from ..io import write_vector_file, read_vector_file
from .graph import USER, ITEM, SIDES, check_side
from .trainer import PairSet, sample_negatives

logger = logging.getLogger(__name__)

__all__ = [
    "EmbeddingTable",
    "bpr_gradients",
    "bpr_step",
    "train_bpr_mf",
    "load_embeddings",
    "write_embeddings",
]


class EmbeddingTable:
    """Dense embeddings of warm users and items.

    Rows of nodes without an embedding (cold nodes) are NaN tombstones so
    that any accidental use propagates.

    Parameters
    ----------
    user, item : numpy.ndarray
        Arrays of shape (n_users, d) and (n_items, d).
    """

    def __init__(self, user, item):
        user = np.asarray(user, dtype=np.float64)
        item = np.asarray(item, dtype=np.float64)
        if user.ndim != 2 or item.ndim != 2 or user.shape[1] != item.shape[1]:
            raise DataError(
                f"Embedding dimension mismatch: users {user.shape}, items {item.shape}."
            )
        self._vectors = {USER: user, ITEM: item}

    def __repr__(self):
        return (
            f"EmbeddingTable(n_users={self.n_users}, n_items={self.n_items}, "
            f"dim={self.dim})"
        )

    def __eq__(self, other):
        return isinstance(other, EmbeddingTable) and all(
            np.array_equal(self.vectors(s), other.vectors(s), equal_nan=True)
            for s in SIDES
        )

    @property
    def dim(self):
        return self._vectors[USER].shape[1]

    @property
    def n_users(self):
        return self._vectors[USER].shape[0]

    @property
    def n_items(self):
        return self._vectors[ITEM].shape[0]

    @property
    def user(self):
        return self._vectors[USER]

    @property
    def item(self):
        return self._vectors[ITEM]

    def vectors(self, side):
        return self._vectors[check_side(side)]

    def present(self, side):
        """Boolean mask of nodes with a (finite) embedding row."""
        return np.isfinite(self.vectors(side)).all(axis=1)


def bpr_gradients(e_u, e_i, e_j):
    """Gradients of the BPR loss ``-ln sigmoid(e_u.e_i - e_u.e_j)``.

    Returns
    -------
    loss : float
    grads : tuple of numpy.ndarray
        Gradients with respect to ``e_u``, ``e_i`` and ``e_j``.
    """
    x = np.dot(e_u, e_i - e_j)
    g = expit(-x)  # -d loss / dx
    loss = np.logaddexp(0.0, -x)
    return loss, (-g * (e_i - e_j), -g * e_u, g * e_u)


def bpr_step(U, V, users, pos, neg, lr, l2=0.0):
    """One in-place stochastic gradient step of BPR on a batch of triples.

    Repeated nodes in the batch accumulate their gradients in batch order.

    Returns
    -------
    loss : numpy.ndarray
        Per-triple BPR loss before the update.
    """
    e_u, e_i, e_j = U[users], V[pos], V[neg]
    x = np.einsum("bd,bd->b", e_u, e_i - e_j)
    g = expit(-x)[:, None]
    grad_u = -g * (e_i - e_j) + l2 * e_u
    grad_i = -g * e_u + l2 * e_i
    grad_j = g * e_u + l2 * e_j
    np.add.at(U, users, -lr * grad_u)
    np.add.at(V, pos, -lr * grad_i)
    np.add.at(V, neg, -lr * grad_j)
    return np.logaddexp(0.0, -x)


def train_bpr_mf(
    users,
    items,
    n_users,
    n_items,
    dim=200,
    lr=0.05,
    l2=1e-4,
    epochs=30,
    batch_size=256,
    seed=0,
    logger=logger,
):
    """Train matrix factorization embeddings with the BPR pairwise loss.

    Each epoch visits every observed pair once in a shuffled order and pairs
    it with one negative item drawn uniformly from items with interactions.
    Mini-batches are applied sequentially so a run is deterministic.

    Parameters
    ----------
    users, items : numpy.ndarray
        Dense indices of the observed (embedding split) interactions.
    n_users, n_items : int
        Size of the index spaces; nodes without interactions get NaN rows.
    dim : int
        Embedding size, by default 200.
    lr : float
        SGD learning rate.
    l2 : float
        L2 regularization of the touched rows.
    epochs : int
        Number of passes over the interactions.
    batch_size : int
        Triples per SGD step; 1 gives plain SGD.
    seed : int
        Seed of initialization, shuffling and negative sampling.

    Returns
    -------
    embeddings : EmbeddingTable
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if users.size == 0:
        raise DataError("Cannot train embeddings: embedding split is empty.")
    rng = np.random.default_rng(seed)
    U = rng.normal(0.0, 0.01, size=(n_users, dim))
    V = rng.normal(0.0, 0.01, size=(n_items, dim))
    observed = PairSet(users, items, n_items)
    candidates = np.unique(items)
    logger.info(
        f"Training BPR-MF embeddings (dim={dim}) on {users.size} interactions "
        f"for {epochs} epochs."
    )
    for epoch in range(epochs):
        perm = rng.permutation(users.size)
        losses = np.empty(users.size)
        for start in range(0, users.size, batch_size):
            idx = perm[start : start + batch_size]
            neg = sample_negatives(
                users[idx], 1, candidates, observed, rng, max_retries=10, warn=False
            )
            losses[start : start + idx.size] = bpr_step(
                U, V, users[idx], items[idx], neg, lr, l2
            )
        loss = float(losses.mean())
        if not (np.isfinite(loss) and np.isfinite(U).all() and np.isfinite(V).all()):
            raise NumericError(f"BPR-MF diverged at epoch {epoch + 1} (loss={loss}).")
        logger.debug(f"BPR-MF epoch {epoch + 1}/{epochs}: loss={loss:.6f}")

    # nodes without interactions have no embedding
    U[np.bincount(users, minlength=n_users) == 0] = np.nan
    V[np.bincount(items, minlength=n_items) == 0] = np.nan
    return EmbeddingTable(U, V)


def _load_side(
    fn, interner, side, dim=None, required=None, strict=False, logger=logger
):
    ids, matrix = read_vector_file(fn)
    if dim is not None and matrix.shape[1] != dim:
        raise DataError(
            f"{fn}: embedding dimension {matrix.shape[1]} does not match {dim}."
        )
    out = np.full((interner.size(side), matrix.shape[1]), np.nan)
    unknown = []
    for row, ext_id in enumerate(ids):
        if interner.has(side, ext_id):
            out[interner.index(side, ext_id)] = matrix[row]
        else:
            unknown.append(ext_id)
    if unknown:
        logger.warning(
            f"{len(unknown)} unknown {side} ids in {fn} skipped: {unknown[:10]}"
        )
    if required is not None:
        missing = [i for i in np.asarray(required) if not np.isfinite(out[i]).all()]
        if missing:
            names = [interner.ext_id(side, i) for i in missing[:10]]
            msg = f"{len(missing)} warm {side}s without embedding in {fn}: {names}"
            if strict:
                raise DataError(msg)
            logger.warning(msg)
    return out


def load_embeddings(
    user_fn, item_fn, interner, dim=None, required=None, strict=False, logger=logger
):
    """Read externally trained embeddings and align them to dense indices.

    Users and items are read with the same code path; rows are matched
    through their external IDs so the row order of the files is irrelevant.

    Parameters
    ----------
    user_fn, item_fn : str
        Embedding files (text or ``GPE1`` binary).
    interner : IdInterner
        Interner defining the dense indices.
    dim : int, optional
        Expected embedding dimension.
    required : dict, optional
        Per side, dense indices that must have an embedding (warm nodes).
    strict : bool, optional
        Raise instead of warn when a required node lacks an embedding.

    Returns
    -------
    embeddings : EmbeddingTable
    """
    required = required or {}
    kwargs = dict(dim=dim, strict=strict, logger=logger)
    user = _load_side(user_fn, interner, USER, required=required.get(USER), **kwargs)
    item = _load_side(item_fn, interner, ITEM, required=required.get(ITEM), **kwargs)
    if user.shape[1] != item.shape[1]:
        raise DataError(
            f"Embedding dimension mismatch: {user_fn} has {user.shape[1]}, "
            f"{item_fn} has {item.shape[1]}."
        )
    logger.info(f"Read embeddings from {user_fn} and {item_fn}.")
    return EmbeddingTable(user, item)


def write_embeddings(user_fn, item_fn, embeddings, interner, binary=True):
    """Write the present rows of ``embeddings`` keyed by external ID."""
    for fn, side in [(user_fn, USER), (item_fn, ITEM)]:
        rows = np.flatnonzero(embeddings.present(side))
        ids = [interner.ext_id(side, i) for i in rows]
        write_vector_file(fn, ids, embeddings.vectors(side)[rows], binary=binary)
