# -*- coding: utf-8 -*-
"""User-item bipartite interaction graph and ID interning."""

import logging

import numpy as np
import pandas as pd
import scipy.sparse as sp

from ..errors import DataError
from ..io import write_header, read_header, write_array, read_array

logger = logging.getLogger(__name__)

__all__ = [
    "USER",
    "ITEM",
    "SIDES",
    "other_side",
    "IdInterner",
    "BipartiteGraph",
    "build_graph",
    "graph_from_pairs",
    "write_graph",
    "read_graph",
]

USER = "user"
ITEM = "item"
SIDES = (USER, ITEM)
GRAPH_MAGIC = b"GPG1"


def check_side(side):
    if side not in SIDES:
        raise ValueError(f"Unknown side '{side}', select from {SIDES}.")
    return side


def other_side(side):
    """Return the opposite side of the bipartite graph."""
    return ITEM if check_side(side) == USER else USER


class IdInterner:
    """Bijective map between external IDs and dense indices, per side.

    Dense indices are contiguous from 0 and follow the order in which IDs
    were first added.
    """

    def __init__(self, users=(), items=()):
        self._ids = {USER: [], ITEM: []}
        self._index = {USER: {}, ITEM: {}}
        for ext_id in users:
            self.add(USER, ext_id)
        for ext_id in items:
            self.add(ITEM, ext_id)

    def __len__(self):
        return self.n_users + self.n_items

    def __eq__(self, other):
        return isinstance(other, IdInterner) and self._ids == other._ids

    def __repr__(self):
        return f"IdInterner(n_users={self.n_users}, n_items={self.n_items})"

    @property
    def n_users(self):
        return len(self._ids[USER])

    @property
    def n_items(self):
        return len(self._ids[ITEM])

    def size(self, side):
        return len(self._ids[check_side(side)])

    def add(self, side, ext_id):
        """Intern ``ext_id`` and return its dense index."""
        index = self._index[check_side(side)]
        idx = index.get(ext_id)
        if idx is None:
            idx = len(self._ids[side])
            index[ext_id] = idx
            self._ids[side].append(ext_id)
        return idx

    def add_many(self, side, ext_ids):
        """Intern a sequence of IDs and return their dense indices."""
        return np.array([self.add(side, e) for e in ext_ids], dtype=np.int64)

    def has(self, side, ext_id):
        return ext_id in self._index[check_side(side)]

    def index(self, side, ext_id):
        """Return the dense index of ``ext_id``; unknown IDs raise KeyError."""
        try:
            return self._index[check_side(side)][ext_id]
        except KeyError:
            raise KeyError(f"Unknown {side} id '{ext_id}'")

    def ext_id(self, side, idx):
        return self._ids[check_side(side)][idx]

    def ids(self, side):
        """List of external IDs of ``side`` in dense index order."""
        return list(self._ids[check_side(side)])


class BipartiteGraph:
    """Immutable user-item bipartite graph.

    Adjacency is held twice as binary CSR matrices, users x items and
    items x users, with sorted and duplicate-free indices. Nodes without
    edges (cold nodes) are representable and have an empty adjacency.

    Parameters
    ----------
    user_adj : scipy.sparse.spmatrix
        Binary matrix of shape (n_users, n_items).
    """

    def __init__(self, user_adj):
        user_adj = sp.csr_matrix(user_adj, dtype=np.int8)
        user_adj.sum_duplicates()
        user_adj.data[:] = 1
        user_adj.sort_indices()
        item_adj = user_adj.T.tocsr()
        item_adj.sort_indices()
        self._adj = {USER: user_adj, ITEM: item_adj}

    def __repr__(self):
        return (
            f"BipartiteGraph(n_users={self.n_users}, n_items={self.n_items}, "
            f"n_edges={self.n_edges})"
        )

    def __eq__(self, other):
        if not isinstance(other, BipartiteGraph) or self.shape != other.shape:
            return False
        a, b = self.user_adj, other.user_adj
        return np.array_equal(a.indptr, b.indptr) and np.array_equal(
            a.indices, b.indices
        )

    @property
    def user_adj(self):
        return self._adj[USER]

    @property
    def item_adj(self):
        return self._adj[ITEM]

    @property
    def shape(self):
        return self.user_adj.shape

    @property
    def n_users(self):
        return self.user_adj.shape[0]

    @property
    def n_items(self):
        return self.user_adj.shape[1]

    @property
    def n_edges(self):
        return int(self.user_adj.nnz)

    def size(self, side):
        return self.n_users if check_side(side) == USER else self.n_items

    def adjacency(self, side):
        """CSR adjacency with rows on ``side`` and columns on the other side."""
        return self._adj[check_side(side)]

    def neighbors(self, side, index):
        """Sorted opposite-side indices adjacent to node ``index`` of ``side``."""
        adj = self.adjacency(side)
        n = adj.shape[0]
        if not 0 <= index < n:
            raise IndexError(f"{side} index {index} out of range [0, {n}).")
        return adj.indices[adj.indptr[index] : adj.indptr[index + 1]].astype(np.int64)

    def degree(self, side, index=None):
        """Degree of node ``index`` or of all nodes of ``side``."""
        deg = np.diff(self.adjacency(side).indptr)
        if index is None:
            return deg
        return int(deg[index])

    def warm_mask(self, side):
        """Boolean mask of nodes with at least one edge."""
        return self.degree(side) > 0

    def warm_nodes(self, side):
        return np.flatnonzero(self.warm_mask(side))

    def edges(self):
        """Return (users, items) arrays of all edges in user-major order."""
        adj = self.user_adj
        users = np.repeat(np.arange(self.n_users), np.diff(adj.indptr))
        return users.astype(np.int64), adj.indices.astype(np.int64)


def build_graph(interactions, interner=None, n_users=None, n_items=None, logger=logger):
    """Build a deduplicated bipartite graph from interactions.

    External IDs are interned in order of first occurrence, users and items
    separately. Duplicate interactions collapse into a single edge.

    Parameters
    ----------
    interactions : pandas.DataFrame or list of (user, item)
        External user and item IDs, in columns "user" and "item" for a frame.
    interner : IdInterner, optional
        Existing interner to extend; the graph then spans all its nodes, so
        nodes without interactions here stay isolated.
    n_users, n_items : int, optional
        Minimal node counts; defaults to the interner sizes.

    Returns
    -------
    graph : BipartiteGraph
    interner : IdInterner
    """
    if isinstance(interactions, pd.DataFrame):
        df = interactions[["user", "item"]]
    else:
        df = pd.DataFrame(list(interactions), columns=["user", "item"])
    if len(df) == 0:
        raise DataError("no interactions")
    interner = IdInterner() if interner is None else interner
    codes, uniques = pd.factorize(df["user"], sort=False)
    users = interner.add_many(USER, uniques)[codes]
    codes, uniques = pd.factorize(df["item"], sort=False)
    items = interner.add_many(ITEM, uniques)[codes]
    graph = graph_from_pairs(
        users,
        items,
        max(interner.n_users, n_users or 0),
        max(interner.n_items, n_items or 0),
    )
    logger.debug(f"Built {graph} from {len(df)} interactions.")
    return graph, interner


def graph_from_pairs(users, items, n_users, n_items):
    """Graph over ``n_users`` x ``n_items`` nodes from dense index pairs."""
    data = np.ones(len(users), dtype=np.int8)
    adj = sp.coo_matrix((data, (users, items)), shape=(n_users, n_items))
    return BipartiteGraph(adj)


def write_graph(fn, graph):
    """Write the graph cache: ``GPG1``, n_users, n_items, n_edges (uint64), then
    user indptr, user indices, item indptr and item indices (int64)."""
    with open(fn, "wb") as fp:
        write_header(
            fp, GRAPH_MAGIC, "QQQ", graph.n_users, graph.n_items, graph.n_edges
        )
        for side in SIDES:
            adj = graph.adjacency(side)
            write_array(fp, adj.indptr, np.int64)
            write_array(fp, adj.indices, np.int64)


def read_graph(fn):
    """Read a graph cache written by :py:func:`write_graph`."""
    with open(fn, "rb") as fp:
        n_users, n_items, n_edges = read_header(fp, GRAPH_MAGIC, "QQQ", fn=fn)
        indptr = read_array(fp, np.int64, (n_users + 1,), fn=fn)
        indices = read_array(fp, np.int64, (n_edges,), fn=fn)
        item_indptr = read_array(fp, np.int64, (n_items + 1,), fn=fn)
        item_indices = read_array(fp, np.int64, (n_edges,), fn=fn)
    data = np.ones(n_edges, dtype=np.int8)
    adj = sp.csr_matrix((data, indices, indptr), shape=(n_users, n_items))
    graph = BipartiteGraph(adj)
    if not (
        np.array_equal(graph.item_adj.indptr, item_indptr)
        and np.array_equal(graph.item_adj.indices, item_indices)
    ):
        raise DataError(f"{fn}: item adjacency is not symmetric to user adjacency.")
    return graph
