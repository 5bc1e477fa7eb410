# -*- coding: utf-8 -*-
"""Scorers routing user-item pairs to GWarmer or the Patching Networks, and
baseline scorers sharing the same interface."""

import logging

import numpy as np

from ..errors import DataError
from .graph import USER, ITEM, SIDES
from .network import warm_score, cold_score

logger = logging.getLogger(__name__)

__all__ = [
    "Scorer",
    "HybridScorer",
    "InnerProductScorer",
    "ContentScorer",
    "RandomScorer",
    "score_pairs_recompute",
    "BASELINES",
]


class Scorer:
    """Base class of scorers.

    Subclasses implement :py:meth:`score_users`; :py:meth:`score_pairs`
    defaults to taking its diagonal per pair.
    """

    name = None

    def score_users(self, users, items):
        """Score matrix of shape (len(users), len(items))."""
        raise NotImplementedError()

    def score_pairs(self, users, items):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        return np.array(
            [self.score_users([u], [i])[0, 0] for u, i in zip(users, items)]
        )


class HybridScorer(Scorer):
    """GPatch inference scorer.

    Pairs of a warm user and a warm item are scored by GWarmer, all other
    pairs by the Patching Networks with cold sides masked. Warm and patched
    representations are computed once at construction; rows of cold nodes
    in the warm table are zeros and never selected, so embeddings of cold
    nodes are never read.

    Parameters
    ----------
    params : ModelParams
    reps : LayerReps
    features : FeatureTable
    """

    name = "gpatch"

    def __init__(self, params, reps, features):
        self.warm_mask = {}
        self.warm = {}
        self.patch = {}
        for side in SIDES:
            warm = reps.warm_mask(side)
            x = np.zeros((warm.size, reps.dim))
            nodes = reps.nodes(side)
            x[nodes] = np.einsum(
                "bkd,k->bd", reps.blocks(side), params.layer_weights(side)
            )
            # patched representations: warm nodes keep x, cold nodes are masked
            has_content = features.mask(side)
            z = np.concatenate([x, features.values(side)], axis=1)[has_content]
            patched = np.full((warm.size, params.out_dim), np.nan)
            patched[has_content], _ = params.network(side).forward(z)
            self.warm_mask[side] = warm
            self.warm[side] = x
            self.patch[side] = patched

    def route(self, users, items):
        """Boolean array, True for pairs scored by GWarmer."""
        return self.warm_mask[USER][users] & self.warm_mask[ITEM][items]

    def score_pairs(self, users, items):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        warm = np.einsum("bd,bd->b", self.warm[USER][users], self.warm[ITEM][items])
        cold = np.einsum("bd,bd->b", self.patch[USER][users], self.patch[ITEM][items])
        return np.where(self.route(users, items), warm, cold)

    def score_users(self, users, items):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        warm = self.warm[USER][users] @ self.warm[ITEM][items].T
        cold = self.patch[USER][users] @ self.patch[ITEM][items].T
        route = self.warm_mask[USER][users][:, None] & self.warm_mask[ITEM][items]
        return np.where(route, warm, cold)


def score_pairs_recompute(users, items, params, reps, features):
    """Score pairs through the full forward path, without precomputed tables."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    route = reps.warm_mask(USER)[users] & reps.warm_mask(ITEM)[items]
    out = np.empty(users.size)
    if route.any():
        out[route] = warm_score(users[route], items[route], reps, params)
    if (~route).any():
        out[~route] = cold_score(
            users[~route], items[~route], reps, features, params, mode="infer"
        )
    return out


class InnerProductScorer(Scorer):
    """Inner product of raw embeddings; items or users without embedding
    score ``-inf``."""

    name = "inner_product"

    def __init__(self, embeddings):
        self.vectors = {}
        self.present = {}
        for side in SIDES:
            present = embeddings.present(side)
            self.vectors[side] = np.where(
                present[:, None], embeddings.vectors(side), 0.0
            )
            self.present[side] = present

    def score_users(self, users, items):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        scores = self.vectors[USER][users] @ self.vectors[ITEM][items].T
        known = self.present[USER][users][:, None] & self.present[ITEM][items]
        return np.where(known, scores, -np.inf)

    def score_pairs(self, users, items):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        scores = np.einsum(
            "bd,bd->b", self.vectors[USER][users], self.vectors[ITEM][items]
        )
        known = self.present[USER][users] & self.present[ITEM][items]
        return np.where(known, scores, -np.inf)


class ContentScorer(Scorer):
    """Dot product of user and item content vectors."""

    name = "content"

    def __init__(self, features):
        if features.dim(USER) != features.dim(ITEM):
            raise DataError(
                f"Content baseline needs equal user and item content dims, got "
                f"{features.dim(USER)} and {features.dim(ITEM)}."
            )
        self.features = features

    def score_users(self, users, items):
        return self.features.user[users] @ self.features.item[items].T

    def score_pairs(self, users, items):
        return np.einsum(
            "bd,bd->b", self.features.user[users], self.features.item[items]
        )


class RandomScorer(Scorer):
    """Uniform random scores, reproducible per user from ``seed``."""

    name = "random"

    def __init__(self, n_items, seed=0):
        self.n_items = n_items
        self.seed = seed

    def _user_scores(self, user):
        seq = np.random.SeedSequence(int(self.seed), spawn_key=(int(user),))
        return np.random.default_rng(seq).random(self.n_items)

    def score_users(self, users, items):
        items = np.asarray(items, dtype=np.int64)
        out = np.empty((len(users), items.size))
        for row, user in enumerate(users):
            out[row] = self._user_scores(user)[items]
        return out


BASELINES = {
    InnerProductScorer.name: InnerProductScorer,
    ContentScorer.name: ContentScorer,
    RandomScorer.name: RandomScorer,
}
