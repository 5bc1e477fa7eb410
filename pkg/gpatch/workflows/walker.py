# -*- coding: utf-8 -*-
"""Random walks on the bipartite graph and their layer-wise mean pooling."""

import logging
from dataclasses import dataclass

import dask
import numpy as np
import xarray as xr

from ..errors import DataError
from ..io import write_header, read_header, write_array, read_array
from .graph import USER, ITEM, SIDES, check_side, other_side

logger = logging.getLogger(__name__)

__all__ = [
    "WalkConfig",
    "WalkSet",
    "LayerReps",
    "walk_rng",
    "sample_walks",
    "pool_layers",
    "precompute_all",
    "write_layerreps",
    "read_layerreps",
]

SIDE_CODE = {USER: 0, ITEM: 1}
REPS_MAGIC = b"GPL1"


@dataclass(frozen=True)
class WalkConfig:
    """Random-walk settings.

    Attributes
    ----------
    K : int
        Walk length, also the number of pooled layers besides the root.
    S : int
        Number of walks per root node.
    seed : int
        Master seed of all walks.
    """

    K: int = 3
    S: int = 25
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"Walk length K should be >= 1, got {self.K}.")
        if self.S < 1:
            raise ValueError(f"Number of walks S should be >= 1, got {self.S}.")
        if self.seed < 0:
            raise ValueError(f"Seed should be a non-negative integer, got {self.seed}.")


@dataclass
class WalkSet:
    """S walks from a root node.

    ``walks[s, k - 1]`` is the node at position k of walk s; position 0 is
    the root. Odd positions lie on the opposite side of the root.
    """

    side: str
    root: int
    walks: np.ndarray

    @property
    def S(self):
        return self.walks.shape[0]

    @property
    def K(self):
        return self.walks.shape[1]

    def side_at(self, k):
        """Side of the nodes at walk position ``k``."""
        return self.side if k % 2 == 0 else other_side(self.side)


class LayerReps:
    """Pooled layer-wise representations of the warm users and items.

    Backed by an :py:class:`xarray.Dataset` with variables "user" and "item"
    of dims (node, layer, dim); row 0 of each node block is the node's own
    embedding.

    Parameters
    ----------
    ds : xarray.Dataset
        Dataset as created by :py:meth:`LayerReps.from_blocks`.
    """

    def __init__(self, ds):
        self._ds = ds
        self._blocks = {}
        self._position = {}
        for side in SIDES:
            blocks = np.ascontiguousarray(ds[side].values, dtype=np.float64)
            nodes = ds[f"{side}_node"].values.astype(np.int64)
            position = np.full(self.size(side), -1, dtype=np.int64)
            position[nodes] = np.arange(nodes.size)
            self._blocks[side] = blocks
            self._position[side] = position

    @classmethod
    def from_blocks(cls, blocks, nodes, n_users, n_items, K, dim, **attrs):
        """Create from per-side node indices and (n, K+1, d) block arrays."""
        data_vars = {}
        for side in SIDES:
            data_vars[side] = (
                (f"{side}_node", "layer", "dim"),
                np.asarray(blocks[side], dtype=np.float64).reshape(-1, K + 1, dim),
            )
        coords = {
            "user_node": np.asarray(nodes[USER], dtype=np.int64),
            "item_node": np.asarray(nodes[ITEM], dtype=np.int64),
            "layer": np.arange(K + 1),
        }
        attrs.update(n_users=int(n_users), n_items=int(n_items), K=int(K), dim=int(dim))
        return cls(xr.Dataset(data_vars, coords=coords, attrs=attrs))

    def __repr__(self):
        return (
            f"LayerReps(K={self.K}, dim={self.dim}, "
            f"warm_users={self.nodes(USER).size}, warm_items={self.nodes(ITEM).size})"
        )

    def __eq__(self, other):
        return isinstance(other, LayerReps) and all(
            np.array_equal(self.nodes(s), other.nodes(s))
            and np.array_equal(self.blocks(s), other.blocks(s))
            for s in SIDES
        )

    @property
    def K(self):
        return int(self._ds.attrs["K"])

    @property
    def dim(self):
        return int(self._ds.attrs["dim"])

    @property
    def n_users(self):
        return int(self._ds.attrs["n_users"])

    @property
    def n_items(self):
        return int(self._ds.attrs["n_items"])

    def size(self, side):
        return self.n_users if check_side(side) == USER else self.n_items

    def to_dataset(self):
        """The underlying labelled :py:class:`xarray.Dataset`."""
        return self._ds

    def nodes(self, side):
        """Dense indices of the nodes of ``side`` with representations."""
        return self._ds[f"{check_side(side)}_node"].values.astype(np.int64)

    def blocks(self, side):
        """Array of shape (n_warm, K+1, d) aligned with :py:meth:`nodes`."""
        return self._blocks[check_side(side)]

    def warm_mask(self, side):
        return self._position[check_side(side)] >= 0

    def has(self, side, index):
        position = self._position[check_side(side)]
        return bool(0 <= index < position.size and position[index] >= 0)

    def rows(self, side, indices):
        """Blocks of shape (len(indices), K+1, d) for warm node ``indices``."""
        indices = np.atleast_1d(np.asarray(indices, dtype=np.int64))
        position = self._position[check_side(side)]
        if indices.size and (indices.min() < 0 or indices.max() >= position.size):
            raise KeyError(f"{side} index out of range [0, {position.size}).")
        pos = position[indices]
        if (pos < 0).any():
            missing = indices[pos < 0][:10].tolist()
            raise KeyError(f"No layer representations for {side}s {missing}.")
        return self._blocks[side][pos]

    def block(self, side, index):
        """Block of shape (K+1, d) of a single warm node."""
        return self.rows(side, [index])[0]


def walk_rng(seed, side, root):
    """Generator of the walks of one root, independent of scheduling order."""
    seq = np.random.SeedSequence(
        int(seed), spawn_key=(SIDE_CODE[check_side(side)], int(root))
    )
    return np.random.default_rng(seq)


def sample_walks(graph, side, root, cfg):
    """Sample ``cfg.S`` walks of ``cfg.K`` steps from a warm root node.

    Every step moves to a uniformly sampled neighbor of the previous node,
    so walks alternate between users and items. Walk s uses row s of a
    (S, K) block of uniforms drawn from :py:func:`walk_rng`.

    Parameters
    ----------
    graph : BipartiteGraph
    side : {"user", "item"}
        Side of the root.
    root : int
        Dense index of the root.
    cfg : WalkConfig

    Returns
    -------
    walkset : WalkSet
    """
    if graph.degree(side, root) == 0:
        raise DataError(f"cold node has no walks: {side} {root}")
    uniforms = walk_rng(cfg.seed, side, root).random((cfg.S, cfg.K))
    walks = np.empty((cfg.S, cfg.K), dtype=np.int64)
    current = np.full(cfg.S, root, dtype=np.int64)
    step_side = side
    for k in range(cfg.K):
        # interior nodes always have their predecessor as neighbor
        adj = graph.adjacency(step_side)
        start = adj.indptr[current]
        degree = adj.indptr[current + 1] - start
        pick = np.minimum((uniforms[:, k] * degree).astype(np.int64), degree - 1)
        current = adj.indices[start + pick].astype(np.int64)
        walks[:, k] = current
        step_side = other_side(step_side)
    return WalkSet(side=side, root=int(root), walks=walks)


def pool_layers(walkset, embeddings, dim=None):
    """Mean-pool the embeddings at each walk position.

    Parameters
    ----------
    walkset : WalkSet
    embeddings : EmbeddingTable
    dim : int, optional
        Expected embedding dimension.

    Returns
    -------
    block : numpy.ndarray
        Array of shape (K+1, d); row 0 is the root embedding and row k the
        arithmetic mean over the walks of the embedding at position k.
    """
    if dim is not None and embeddings.dim != dim:
        raise DataError(
            f"Embedding dimension {embeddings.dim} does not match expected {dim}."
        )
    block = np.empty((walkset.K + 1, embeddings.dim))
    block[0] = embeddings.vectors(walkset.side)[walkset.root]
    for k in range(1, walkset.K + 1):
        vectors = embeddings.vectors(walkset.side_at(k))[walkset.walks[:, k - 1]]
        block[k] = vectors.sum(axis=0) / walkset.S
    return block


def _pool_nodes(graph, side, nodes, embeddings, cfg):
    out = np.empty((len(nodes), cfg.K + 1, embeddings.dim))
    for n, root in enumerate(nodes):
        out[n] = pool_layers(sample_walks(graph, side, root, cfg), embeddings)
    return out


def precompute_all(
    graph, embeddings, cfg, threads=1, chunk_size=256, interner=None, logger=logger
):
    """Pool layer representations for every warm user and item.

    Nodes are processed in chunks, in parallel with the dask threaded
    scheduler when ``threads > 1``. Each root seeds its own walks, so the
    result is identical for any number of threads.

    Parameters
    ----------
    graph : BipartiteGraph
    embeddings : EmbeddingTable
        Must cover all warm nodes.
    cfg : WalkConfig
    threads : int, optional
        Number of worker threads.
    chunk_size : int, optional
        Root nodes per task.
    interner : IdInterner, optional
        Used to name nodes in error messages.

    Returns
    -------
    reps : LayerReps
    """
    blocks, nodes = {}, {}
    for side in SIDES:
        warm = graph.warm_nodes(side)
        missing = warm[~embeddings.present(side)[warm]]
        if missing.size:
            name = missing[0] if interner is None else interner.ext_id(side, missing[0])
            raise DataError(
                f"missing embedding for warm {side} '{name}' "
                f"({missing.size} warm {side}s without embedding)."
            )
        tasks = [
            dask.delayed(_pool_nodes)(
                graph, side, warm[i : i + chunk_size], embeddings, cfg
            )
            for i in range(0, warm.size, chunk_size)
        ]
        if tasks:
            scheduler = "threads" if threads > 1 else "sync"
            out = dask.compute(*tasks, scheduler=scheduler, num_workers=threads)
            blocks[side] = np.concatenate(out)
        else:
            blocks[side] = np.empty((0, cfg.K + 1, embeddings.dim))
        nodes[side] = warm
        logger.info(f"Pooled {cfg.K + 1} layers for {warm.size} warm {side}s.")
    return LayerReps.from_blocks(
        blocks,
        nodes,
        graph.n_users,
        graph.n_items,
        cfg.K,
        embeddings.dim,
        S=cfg.S,
        seed=cfg.seed,
    )


def write_layerreps(fn, reps):
    """Write the layer representation cache.

    Layout: ``GPL1``, K and d (uint32), n_users, n_items, n_warm_users and
    n_warm_items (uint64), then per side (users first) the warm node indices
    (int64) and the row-major (n_warm, K+1, d) float64 blocks.
    """
    with open(fn, "wb") as fp:
        write_header(
            fp,
            REPS_MAGIC,
            "IIQQQQ",
            reps.K,
            reps.dim,
            reps.n_users,
            reps.n_items,
            reps.nodes(USER).size,
            reps.nodes(ITEM).size,
        )
        for side in SIDES:
            write_array(fp, reps.nodes(side), np.int64)
            write_array(fp, reps.blocks(side), np.float64)


def read_layerreps(fn):
    """Read a layer representation cache written by :py:func:`write_layerreps`."""
    with open(fn, "rb") as fp:
        K, dim, n_users, n_items, n_wu, n_wi = read_header(
            fp, REPS_MAGIC, "IIQQQQ", fn=fn
        )
        nodes, blocks = {}, {}
        for side, count in [(USER, n_wu), (ITEM, n_wi)]:
            nodes[side] = read_array(fp, np.int64, (count,), fn=fn)
            blocks[side] = read_array(fp, np.float64, (count, K + 1, dim), fn=fn)
    return LayerReps.from_blocks(blocks, nodes, n_users, n_items, K, dim)
