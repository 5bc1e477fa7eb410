# -*- coding: utf-8 -*-
"""Dataset ingestion, cold-start splits, synthetic data and content features."""

import logging
from os.path import isfile
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.sparse as sp

from ..errors import DataError
from ..io import read_vector_file, write_vector_file
from .graph import USER, ITEM, SIDES, check_side
from .network import FeatureTable

logger = logging.getLogger(__name__)

__all__ = [
    "PARTITIONS",
    "SplitSpec",
    "SyntheticSpec",
    "make_split",
    "make_synthetic",
    "read_interactions",
    "load_user_lists",
    "load_ldac_features",
    "load_features",
    "load_feature_table",
    "features_from_frames",
    "write_features",
    "write_split",
    "read_split",
]

PARTITIONS = ("embed", "train", "val", "test")
EMBED, TRAIN, VAL, TEST = range(4)


@dataclass
class SplitSpec:
    """Cold-start split of a deduplicated interaction set.

    Attributes
    ----------
    users, items : numpy.ndarray
        Dense indices of the interactions.
    part : numpy.ndarray
        Partition code per interaction, an index into :py:data:`PARTITIONS`.
    n_users, n_items : int
    cold_items : numpy.ndarray
        Boolean mask of the cold items.
    cold_users : numpy.ndarray, optional
        Boolean mask of the cold users; by default users without an
        interaction in the embedding partition.
    seed : int
    """

    users: np.ndarray
    items: np.ndarray
    part: np.ndarray
    n_users: int
    n_items: int
    cold_items: np.ndarray
    cold_users: np.ndarray = None
    seed: int = 0

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.int64)
        self.items = np.asarray(self.items, dtype=np.int64)
        self.part = np.asarray(self.part, dtype=np.int8)
        self.cold_items = np.asarray(self.cold_items, dtype=bool)
        if self.cold_users is None:
            embed_users = self.users[self.part == EMBED]
            self.cold_users = np.bincount(embed_users, minlength=self.n_users) == 0
        self.cold_users = np.asarray(self.cold_users, dtype=bool)

    def __len__(self):
        return self.users.size

    @property
    def warm_items(self):
        return ~self.cold_items

    @property
    def warm_users(self):
        return ~self.cold_users

    def counts(self):
        """Number of interactions per partition."""
        counts = np.bincount(self.part, minlength=len(PARTITIONS))
        return dict(zip(PARTITIONS, counts.tolist()))

    def partition(self, name):
        """(users, items) of partition ``name``."""
        if name not in PARTITIONS:
            raise ValueError(f"Unknown partition '{name}', select from {PARTITIONS}.")
        sel = self.part == PARTITIONS.index(name)
        return self.users[sel], self.items[sel]

    def pairs(self, names):
        """(users, items) of the union of partitions ``names``."""
        codes = [PARTITIONS.index(n) for n in names]
        sel = np.isin(self.part, codes)
        return self.users[sel], self.items[sel]

    def validate(self):
        """Check disjointness and warm/cold consistency, raise DataError otherwise."""
        keys = self.users * self.n_items + self.items
        if np.unique(keys).size != keys.size:
            raise DataError("Split contains duplicate interactions.")
        learn = np.isin(self.part, [EMBED, TRAIN])
        if self.cold_items[self.items[learn]].any():
            raise DataError("Cold items appear in the embed or train partitions.")
        if self.cold_users[self.users[learn]].any():
            raise DataError("Cold users appear in the embed or train partitions.")
        embed = self.part == EMBED
        warm_items = np.bincount(self.items[embed], minlength=self.n_items) > 0
        if not np.array_equal(warm_items, ~self.cold_items):
            raise DataError("Warm items should be exactly the items seen in embed.")
        warm_users = np.bincount(self.users[embed], minlength=self.n_users) > 0
        if not np.array_equal(warm_users, ~self.cold_users):
            raise DataError("Warm users should be exactly the users seen in embed.")


@dataclass(frozen=True)
class SyntheticSpec:
    """Settings of a synthetic dataset with informative content.

    ``rho`` mixes a linear map of the latent preference vectors with noise
    in the content vectors: 0 gives content independent of the interactions
    and 1 content fully determined by the latent vectors.
    """

    n_users: int = 2000
    n_items: int = 3000
    latent_dim: int = 16
    content_dim: int = 32
    rho: float = 0.8
    density: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho should be in [0, 1], got {self.rho}.")
        if not 0.0 < self.density < 1.0:
            raise ValueError(f"density should be in (0, 1), got {self.density}.")
        if min(self.n_users, self.n_items, self.latent_dim, self.content_dim) < 1:
            raise ValueError("Synthetic sizes should be >= 1.")


def _even_halves(nodes, order):
    """True for the first half (rounded down) of the interactions of each node,
    in the order given by ``order``."""
    first = np.zeros(order.size, dtype=bool)
    if order.size == 0:
        return first
    keys = nodes[order]
    sorter = np.argsort(keys, kind="stable")
    sorted_keys = keys[sorter]
    starts = np.flatnonzero(np.r_[True, sorted_keys[1:] != sorted_keys[:-1]])
    counts = np.diff(np.r_[starts, sorted_keys.size])
    rank = np.arange(sorted_keys.size) - np.repeat(starts, counts)
    first[sorter] = rank < np.repeat(counts // 2, counts)
    return first


def make_split(
    users,
    items,
    n_users,
    n_items,
    cold_item_frac=0.2,
    ratios=(0.65, 0.15, 0.10, 0.10),
    seed=0,
    logger=logger,
):
    """Split interactions for cold-start training and evaluation.

    ``round(cold_item_frac * n_items)`` items are sampled uniformly as cold
    items. The interactions of the other items are shuffled and cut into the
    embed, train, val and test partitions by ``ratios``. Interactions of
    cold items go to val and test only, evenly per item.

    Warmth is defined by the embed partition only: a user or item is warm
    if and only if it has at least one embed interaction, whatever its
    train, val or test interactions. Users and items left without an embed
    interaction are demoted to cold; their train interactions are moved to
    val and test the same way as those of cold items.

    Parameters
    ----------
    users, items : numpy.ndarray
        Dense indices of the interactions; duplicates are dropped.
    n_users, n_items : int
    cold_item_frac : float
        Fraction of cold items, by default 0.2.
    ratios : tuple of float
        Shares of the warm interactions for embed, train, val and test.
    seed : int

    Returns
    -------
    split : SplitSpec
    """
    if not 0.0 <= cold_item_frac < 1.0:
        raise ValueError(f"cold_item_frac should be in [0, 1), got {cold_item_frac}.")
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.size != 4 or (ratios < 0).any() or abs(ratios.sum() - 1.0) > 1e-9:
        raise ValueError(f"ratios should be 4 shares summing to 1, got {ratios}.")
    keys = np.unique(np.asarray(users, dtype=np.int64) * n_items + np.asarray(items))
    if keys.size == 0:
        raise DataError("no interactions")
    users, items = keys // n_items, keys % n_items
    rng = np.random.default_rng(seed)

    n_cold = int(round(cold_item_frac * n_items))
    cold_items = np.zeros(n_items, dtype=bool)
    cold_items[rng.choice(n_items, size=n_cold, replace=False)] = True

    part = np.empty(keys.size, dtype=np.int8)
    warm_idx = rng.permutation(np.flatnonzero(~cold_items[items]))
    n_warm = warm_idx.size
    bounds = np.cumsum([int(round(r * n_warm)) for r in ratios[:3]])
    bounds = np.minimum(bounds, n_warm)
    for code, (lo, hi) in enumerate(zip(np.r_[0, bounds], np.r_[bounds, n_warm])):
        part[warm_idx[lo:hi]] = code

    cold_idx = rng.permutation(np.flatnonzero(cold_items[items]))
    part[cold_idx] = np.where(_even_halves(items, cold_idx), VAL, TEST)

    embed = part == EMBED
    lost_items = ~cold_items & (np.bincount(items[embed], minlength=n_items) == 0)
    cold_users = np.bincount(users[embed], minlength=n_users) == 0
    present_users = np.bincount(users, minlength=n_users) > 0
    if lost_items.any():
        logger.warning(
            f"{int(lost_items.sum())} items without embedding interactions "
            "demoted to cold items."
        )
        cold_items |= lost_items
    if (cold_users & present_users).any():
        logger.warning(
            f"{int((cold_users & present_users).sum())} users without embedding "
            "interactions demoted to cold users."
        )
    moved = np.flatnonzero((part == TRAIN) & (cold_users[users] | cold_items[items]))
    if moved.size:
        moved = rng.permutation(moved)
        nodes = np.where(cold_items[items[moved]], items[moved], n_items + users[moved])
        part[moved] = np.where(_even_halves(nodes, np.arange(moved.size)), VAL, TEST)

    split = SplitSpec(
        users, items, part, n_users, n_items, cold_items, cold_users, seed=seed
    )
    logger.info(
        f"Split {keys.size} interactions with {int(cold_items.sum())} cold items and "
        f"{int((cold_users & present_users).sum())} cold users: {split.counts()}"
    )
    return split


def make_synthetic(spec, logger=logger):
    """Generate interactions and content features from latent preferences.

    User and item latent vectors are standard normal. A pair interacts when
    its affinity ``p.q / sqrt(latent_dim)`` lies above the quantile giving
    the requested density. Content is ``rho * (latent @ M) / sqrt(latent_dim)
    + (1 - rho) * noise`` with an independent random map ``M`` per side, so
    the raw content of a user and an item is not directly comparable and a
    learned mapping is needed to recover affinities from it.

    Parameters
    ----------
    spec : SyntheticSpec

    Returns
    -------
    interactions : pandas.DataFrame
        Columns "user" and "item" with external IDs "u<n>" and "i<n>".
    features : dict of pandas.DataFrame
        Content vectors per side, indexed by external ID.
    """
    n_target = spec.density * spec.n_users * spec.n_items
    if n_target < 1:
        raise DataError(
            f"density {spec.density} is unreachable on {spec.n_users} x "
            f"{spec.n_items} pairs."
        )
    rng = np.random.default_rng(spec.seed)
    scale = np.sqrt(spec.latent_dim)
    latent = {
        USER: rng.standard_normal((spec.n_users, spec.latent_dim)),
        ITEM: rng.standard_normal((spec.n_items, spec.latent_dim)),
    }
    affinity = latent[USER] @ latent[ITEM].T / scale
    threshold = np.quantile(affinity, 1.0 - spec.density)
    users, items = np.nonzero(affinity > threshold)
    prefix = {USER: "u", ITEM: "i"}
    interactions = pd.DataFrame(
        {"user": [f"u{u}" for u in users], "item": [f"i{i}" for i in items]}
    )
    features = {}
    for side in SIDES:
        proj = rng.standard_normal((spec.latent_dim, spec.content_dim))
        noise = rng.standard_normal((latent[side].shape[0], spec.content_dim))
        content = spec.rho * (latent[side] @ proj) / scale + (1.0 - spec.rho) * noise
        index = [f"{prefix[side]}{n}" for n in range(content.shape[0])]
        features[side] = pd.DataFrame(content, index=index)
    logger.info(
        f"Generated {len(interactions)} synthetic interactions "
        f"(density {len(interactions) / (spec.n_users * spec.n_items):.4f})."
    )
    return interactions, features


def read_interactions(path, logger=logger):
    """Read ``user<TAB>item`` lines; ``#`` starts a comment."""
    if not isfile(path):
        raise DataError(f"Interaction file not found: {path}")
    df = pd.read_csv(
        path,
        sep="\t",
        header=None,
        names=["user", "item"],
        usecols=[0, 1],
        dtype=str,
        comment="#",
        skip_blank_lines=True,
        keep_default_na=False,
    )
    if df.isna().values.any() or (df == "").values.any():
        raise DataError(f"{path}: every line should hold a user and an item id.")
    logger.info(f"Read {len(df)} interactions from {path}.")
    return df


def load_user_lists(path, logger=logger):
    """Read per-user item lists, one ``count item item ...`` line per user.

    The line number is the user ID and the listed numbers are item IDs.
    """
    if not isfile(path):
        raise DataError(f"User list file not found: {path}")
    rows = []
    with open(path, "r") as fp:
        for lnb, line in enumerate(fp):
            values = line.split()
            if not values:
                continue
            count, entries = int(values[0]), values[1:]
            if count != len(entries):
                raise DataError(
                    f"{path}:{lnb + 1}: count {count} does not match "
                    f"{len(entries)} items."
                )
            rows.extend((str(lnb), item) for item in entries)
    logger.info(f"Read {len(rows)} interactions from {path}.")
    return pd.DataFrame(rows, columns=["user", "item"])


def load_ldac_features(path, vocab_size=None, normalize=True, logger=logger):
    """Read sparse bag-of-words documents and convert them to tf-idf vectors.

    Each line is ``count id:cnt id:cnt ...`` and describes the item whose ID
    is the line number.

    Parameters
    ----------
    path : str
    vocab_size : int, optional
        Number of terms; defaults to the largest term id + 1.
    normalize : bool, optional
        L2-normalize the rows.

    Returns
    -------
    features : pandas.DataFrame
        Dense tf-idf rows indexed by item ID.
    """
    if not isfile(path):
        raise DataError(f"Document file not found: {path}")
    rows, cols, vals = [], [], []
    n_docs = 0
    with open(path, "r") as fp:
        for lnb, line in enumerate(fp):
            values = line.split()
            n_docs = lnb + 1
            for entry in values[1:]:
                term, _, cnt = entry.partition(":")
                rows.append(lnb)
                cols.append(int(term))
                vals.append(float(cnt))
    n_terms = vocab_size or (max(cols) + 1 if cols else 0)
    if cols and max(cols) >= n_terms:
        raise DataError(f"{path}: term id {max(cols)} exceeds vocab_size {n_terms}.")
    tf = sp.csr_matrix((vals, (rows, cols)), shape=(n_docs, n_terms))
    df = np.bincount(tf.indices, minlength=n_terms)
    idf = np.log(n_docs / np.maximum(df, 1))
    tfidf = (tf @ sp.diags(idf)).toarray()
    if normalize:
        norm = np.linalg.norm(tfidf, axis=1, keepdims=True)
        tfidf = np.divide(tfidf, norm, out=np.zeros_like(tfidf), where=norm > 0)
    logger.info(f"Read {n_docs} documents with {n_terms} terms from {path}.")
    return pd.DataFrame(tfidf, index=[str(n) for n in range(n_docs)])


def _align(ids, matrix, interner, side, cold, warm_optional, normalize, source, logger):
    side = check_side(side)
    values = np.zeros((interner.size(side), matrix.shape[1]))
    present = np.zeros(interner.size(side), dtype=bool)
    unknown = 0
    for row, ext_id in enumerate(ids):
        if interner.has(side, ext_id):
            idx = interner.index(side, ext_id)
            values[idx] = matrix[row]
            present[idx] = True
        else:
            unknown += 1
    if unknown:
        logger.debug(f"{unknown} {side} rows in {source} are not in the graph.")
    cold = np.zeros(present.size, dtype=bool) if cold is None else cold
    missing_cold = np.flatnonzero(cold & ~present)
    if missing_cold.size:
        names = [interner.ext_id(side, i) for i in missing_cold[:10]]
        raise DataError(
            f"{missing_cold.size} cold {side}s without content in {source}: {names}"
        )
    missing_warm = np.flatnonzero(~cold & ~present)
    if missing_warm.size:
        names = [interner.ext_id(side, i) for i in missing_warm[:10]]
        if not warm_optional:
            raise DataError(
                f"{missing_warm.size} warm {side}s without content in {source}: "
                f"{names}"
            )
        logger.warning(
            f"{missing_warm.size} warm {side}s without content, using zero vectors."
        )
    if normalize:
        norm = np.linalg.norm(values, axis=1, keepdims=True)
        values = np.divide(values, norm, out=np.zeros_like(values), where=norm > 0)
    return values


def load_features(
    path,
    interner,
    side,
    cold=None,
    warm_optional=False,
    normalize=False,
    logger=logger,
):
    """Read content vectors and align them to dense indices.

    The file uses the embedding vector format (text or binary).

    Parameters
    ----------
    path : str
    interner : IdInterner
    side : {"user", "item"}
    cold : numpy.ndarray, optional
        Boolean mask of cold nodes; their rows are mandatory.
    warm_optional : bool, optional
        Accept missing warm rows and fill them with zeros.
    normalize : bool, optional
        L2-normalize every row.

    Returns
    -------
    values : numpy.ndarray
        Array of shape (n_side, content_dim).
    """
    ids, matrix = read_vector_file(path)
    logger.info(f"Read {len(ids)} {side} content vectors from {path}.")
    return _align(
        ids, matrix, interner, side, cold, warm_optional, normalize, path, logger
    )


def features_from_frames(
    frames, interner, cold=None, warm_optional=False, normalize=False, logger=logger
):
    """Build a FeatureTable from per-side frames indexed by external ID.

    A side missing from ``frames`` gets zero-dimensional content.
    """
    cold = cold or {}
    values = {}
    for side in SIDES:
        df = frames.get(side)
        if df is None:
            values[side] = np.zeros((interner.size(side), 0))
            continue
        ids = [str(i) for i in df.index]
        values[side] = _align(
            ids,
            df.to_numpy(dtype=np.float64),
            interner,
            side,
            cold.get(side),
            warm_optional,
            normalize,
            f"{side} frame",
            logger,
        )
    return FeatureTable(values[USER], values[ITEM])


def load_feature_table(
    user_fn,
    item_fn,
    interner,
    cold=None,
    warm_optional=False,
    normalize=False,
    logger=logger,
):
    """Read user and item content files into a FeatureTable.

    A side without a file gets zero-dimensional content, so its patched
    representation of cold nodes is a constant.
    """
    cold = cold or {}
    values = {}
    for side, fn in [(USER, user_fn), (ITEM, item_fn)]:
        if fn is None:
            values[side] = np.zeros((interner.size(side), 0))
            has_cold = cold.get(side) is not None and cold[side].any()
            if has_cold:
                logger.warning(f"No {side} content, cold {side}s share one patch.")
            continue
        values[side] = load_features(
            fn,
            interner,
            side,
            cold=cold.get(side),
            warm_optional=warm_optional,
            normalize=normalize,
            logger=logger,
        )
    return FeatureTable(values[USER], values[ITEM])


def write_features(user_fn, item_fn, features, interner):
    """Write the content rows of both sides in the text vector format."""
    for fn, side in [(user_fn, USER), (item_fn, ITEM)]:
        rows = np.flatnonzero(features.mask(side))
        ids = [interner.ext_id(side, i) for i in rows]
        write_vector_file(fn, ids, features.values(side)[rows], binary=False)


def write_split(manifest_fn, cold_fn, split, interner):
    """Write ``user<TAB>item<TAB>partition`` lines and the cold item list."""
    user_ids = np.asarray(interner.ids(USER), dtype=object)
    item_ids = np.asarray(interner.ids(ITEM), dtype=object)
    df = pd.DataFrame(
        {
            "user": user_ids[split.users],
            "item": item_ids[split.items],
            "partition": np.asarray(PARTITIONS, dtype=object)[split.part],
        }
    )
    df.to_csv(manifest_fn, sep="\t", header=False, index=False)
    cold = pd.Series(item_ids[split.cold_items], dtype=object)
    cold.to_csv(cold_fn, header=False, index=False)


def read_split(manifest_fn, cold_fn, interner, seed=0, logger=logger):
    """Read a split manifest, interning unknown IDs.

    Manifests made by other tools (e.g. timeline-based splits) are accepted;
    cold users are derived as users without an embedding interaction.
    """
    for fn in (manifest_fn, cold_fn):
        if fn is not None and not isfile(fn):
            raise DataError(f"Split file not found: {fn}")
    df = pd.read_csv(
        manifest_fn,
        sep="\t",
        header=None,
        names=["user", "item", "partition"],
        dtype=str,
        comment="#",
        keep_default_na=False,
    )
    unknown = sorted(set(df["partition"]) - set(PARTITIONS))
    if unknown or df.isna().values.any() or (df == "").values.any():
        raise DataError(f"{manifest_fn}: invalid partition names {unknown}.")
    cold_ids = []
    if cold_fn is not None:
        with open(cold_fn, "r") as fp:
            cold_ids = [line.strip() for line in fp if line.strip()]
    users = interner.add_many(USER, df["user"])
    items = interner.add_many(ITEM, df["item"])
    cold_idx = interner.add_many(ITEM, cold_ids)
    cold_items = np.zeros(interner.n_items, dtype=bool)
    cold_items[cold_idx] = True
    part = np.array([PARTITIONS.index(p) for p in df["partition"]], dtype=np.int8)
    split = SplitSpec(
        users, items, part, interner.n_users, interner.n_items, cold_items, seed=seed
    )
    split.validate()
    logger.info(f"Read split with {len(split)} interactions from {manifest_fn}.")
    return split
