# -*- coding: utf-8 -*-
"""Joint training of GWarmer and the Patching Networks."""

import time
import logging
from dataclasses import dataclass, fields

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from ..errors import DataError, NumericError
from .network import LAYER_INITS, draw_masks, backward

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "TrainLogRecord",
    "ValidationSet",
    "PairSet",
    "Adam",
    "make_rngs",
    "sample_negatives",
    "make_validation_set",
    "auc_score",
    "validate_auc",
    "train_epoch",
    "fit",
    "write_train_log",
    "read_train_log",
]


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.

    ``batch_size`` counts training examples, positives and their sampled
    negatives together.
    """

    lr: float = 0.001
    batch_size: int = 1024
    l2: float = 1e-5
    tau: float = 0.5
    n_neg: int = 4
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    detach_patch_input: bool = False
    hidden: tuple = (200,)
    out_dim: int = 200
    layer_init: str = "root"

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"Learning rate should be >= 0, got {self.lr}.")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"Dropout ratio tau should be in [0, 1], got {self.tau}.")
        if self.n_neg < 1:
            raise ValueError(f"n_neg should be >= 1, got {self.n_neg}.")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs should be >= 1.")
        if self.patience < 0 or self.l2 < 0:
            raise ValueError("patience and l2 should be non-negative.")
        if self.layer_init not in LAYER_INITS:
            raise ValueError(
                f"layer_init should be one of {LAYER_INITS}, got {self.layer_init!r}."
            )
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @classmethod
    def from_dict(cls, options):
        """Create from a dict, ignoring keys that are no config field."""
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in options.items() if k in names})

    @property
    def positives_per_batch(self):
        return max(1, self.batch_size // (1 + self.n_neg))


@dataclass
class TrainLogRecord:
    epoch: int
    loss: float
    val_auc: float
    elapsed_ms: float


@dataclass
class ValidationSet:
    """Fixed validation pairs with labels, positives first."""

    users: np.ndarray
    items: np.ndarray
    y: np.ndarray

    def __len__(self):
        return self.users.size


class PairSet:
    """Set of observed (user, item) pairs with vectorized membership tests."""

    def __init__(self, users, items, n_items):
        self.n_items = int(n_items)
        keys = np.asarray(users, dtype=np.int64) * self.n_items
        self._keys = np.unique(keys + np.asarray(items, dtype=np.int64))

    def __len__(self):
        return self._keys.size

    def contains(self, users, items):
        """Boolean array, True where (users[k], items[k]) is observed."""
        keys = np.asarray(users, dtype=np.int64) * self.n_items + np.asarray(
            items, dtype=np.int64
        )
        if self._keys.size == 0:
            return np.zeros(keys.shape, dtype=bool)
        pos = np.minimum(np.searchsorted(self._keys, keys), self._keys.size - 1)
        return self._keys[pos] == keys

    def items_of(self, user):
        """Sorted items observed for ``user``."""
        lo, hi = np.searchsorted(
            self._keys, [user * self.n_items, (user + 1) * self.n_items]
        )
        return self._keys[lo:hi] - user * self.n_items


class Adam:
    """Adam optimizer updating a dict of parameter arrays in place.

    Parameters
    ----------
    lr : float
        Step size.
    beta1, beta2 : float
        Decay rates of the first and second moment estimates.
    eps : float
        Constant added to the denominator.
    """

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        """Apply one update to the arrays of ``params`` using ``grads``.

        Both arguments map tensor names to arrays of equal shape; ``params``
        arrays are modified in place.
        """
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for key, param in params.items():
            g = grads[key]
            if key not in self.m:
                self.m[key] = np.zeros_like(param)
                self.v[key] = np.zeros_like(param)
            m, v = self.m[key], self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            param -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def make_rngs(seed):
    """Independent generators per purpose: shuffle, negatives, masks, validation."""
    names = ("shuffle", "negatives", "masks", "validation")
    children = np.random.SeedSequence(int(seed)).spawn(len(names))
    return {name: np.random.default_rng(s) for name, s in zip(names, children)}


def sample_negatives(
    users,
    n_neg,
    candidates,
    observed,
    rng,
    max_retries=100,
    warn=True,
    logger=logger,
):
    """Sample ``n_neg`` negative items per user occurrence.

    Items are drawn uniformly from ``candidates``; draws that hit an
    observed pair are redrawn up to ``max_retries`` times and then accepted.

    Parameters
    ----------
    users : numpy.ndarray
        Dense user index of each positive.
    n_neg : int
        Negatives per positive.
    candidates : numpy.ndarray
        Dense indices of the items to sample from.
    observed : PairSet
        Pairs that should not be sampled.
    rng : numpy.random.Generator

    Returns
    -------
    items : numpy.ndarray
        Negative items aligned with ``np.repeat(users, n_neg)``.
    """
    users = np.repeat(np.asarray(users, dtype=np.int64), n_neg)
    candidates = np.asarray(candidates, dtype=np.int64)
    if candidates.size == 0:
        raise DataError("No candidate items to sample negatives from.")
    items = candidates[rng.integers(0, candidates.size, size=users.size)]
    retry = np.flatnonzero(observed.contains(users, items))
    for _ in range(max_retries):
        if retry.size == 0:
            break
        items[retry] = candidates[rng.integers(0, candidates.size, size=retry.size)]
        retry = retry[observed.contains(users[retry], items[retry])]
    if retry.size and warn:
        full = [
            int(u)
            for u in np.unique(users[retry])
            if observed.contains(np.full(candidates.size, u), candidates).all()
        ]
        if full:
            logger.warning(
                f"{len(full)} users interacted with all {candidates.size} candidate "
                f"items (e.g. user {full[0]}), accepting {retry.size} observed pairs "
                "as negatives."
            )
        else:
            logger.warning(
                f"Accepting {retry.size} observed pairs as negatives after "
                f"{max_retries} retries."
            )
    return items


def make_validation_set(users, items, candidates, observed, rng, logger=logger):
    """Validation positives with one fixed sampled negative each.

    Parameters
    ----------
    users, items : numpy.ndarray
        Validation interactions.
    candidates : numpy.ndarray
        Items to draw negatives from.
    observed : PairSet
        All known positives, excluded from the negatives.
    rng : numpy.random.Generator
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if users.size == 0:
        raise DataError("Empty validation set.")
    neg = sample_negatives(users, 1, candidates, observed, rng, logger=logger)
    return ValidationSet(
        users=np.concatenate([users, users]),
        items=np.concatenate([items, neg]),
        y=np.concatenate([np.ones(users.size), np.zeros(users.size)]),
    )


def auc_score(pos_scores, neg_scores):
    """Probability that a positive scores above a negative, ties counting 0.5."""
    pos_scores = np.asarray(pos_scores, dtype=np.float64)
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    n_pos, n_neg = pos_scores.size, neg_scores.size
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs at least one positive and one negative.")
    ranks = rankdata(np.concatenate([pos_scores, neg_scores]))
    return float((ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def validate_auc(val, scorer):
    """AUC of ``scorer`` on a :py:class:`ValidationSet`.

    ``scorer`` routes every pair like at inference, see
    :py:class:`~gpatch.workflows.scoring.HybridScorer`.
    """
    if len(val) == 0:
        raise DataError("Empty validation set.")
    scores = scorer.score_pairs(val.users, val.items)
    positive = val.y == 1
    return auc_score(scores[positive], scores[~positive])


def train_epoch(
    users,
    items,
    reps,
    features,
    params,
    adam,
    cfg,
    rngs,
    candidates,
    observed,
    logger=logger,
):
    """Run one epoch of mini-batch Adam on the joint loss.

    Positives are visited once in a shuffled order; each is joined by
    ``cfg.n_neg`` fresh negatives and every example gets independent user
    and item mask draws for the patching term.

    Parameters
    ----------
    users, items : numpy.ndarray
        Training positives (warm pairs).
    reps : LayerReps
    features : FeatureTable
    params : ModelParams
        Updated in place.
    adam : Adam
    cfg : TrainConfig
    rngs : dict of numpy.random.Generator
        Streams from :py:func:`make_rngs`.
    candidates : numpy.ndarray
        Warm items to draw negatives from.
    observed : PairSet
        Known positives excluded from the negatives.

    Returns
    -------
    loss : float
        Mean per-example loss over the epoch.
    """
    last_good = params.copy()
    perm = rngs["shuffle"].permutation(users.size)
    step = cfg.positives_per_batch
    total, count = 0.0, 0
    for start in range(0, perm.size, step):
        idx = perm[start : start + step]
        u_pos, i_pos = users[idx], items[idx]
        neg = sample_negatives(
            u_pos, cfg.n_neg, candidates, observed, rngs["negatives"], logger=logger
        )
        b_users = np.concatenate([u_pos, np.repeat(u_pos, cfg.n_neg)])
        b_items = np.concatenate([i_pos, neg])
        y = np.concatenate([np.ones(idx.size), np.zeros(neg.size)])
        draws = (
            draw_masks(rngs["masks"], b_users.size, cfg.tau),
            draw_masks(rngs["masks"], b_users.size, cfg.tau),
        )
        try:
            loss, grads = backward(
                b_users,
                b_items,
                y,
                draws,
                reps,
                features,
                params,
                l2=cfg.l2,
                detach_patch_input=cfg.detach_patch_input,
                reduction="mean",
            )
        except NumericError as err:
            raise NumericError(str(err), last_good=last_good) from err
        adam.step(params.tensors(), grads)
        if not params.is_finite():
            raise NumericError(
                f"Non-finite parameters after batch at offset {start}.",
                last_good=last_good,
            )
        total += loss * b_users.size
        count += b_users.size
    return total / count


def fit(
    train,
    val,
    reps,
    features,
    params,
    cfg,
    candidates,
    observed,
    scorer_factory,
    logger=logger,
):
    """Train until validation AUC stops improving.

    Parameters
    ----------
    train : tuple of numpy.ndarray
        (users, items) of the training positives.
    val : ValidationSet
    reps : LayerReps
    features : FeatureTable
    params : ModelParams
        Initial parameters, trained in place.
    cfg : TrainConfig
    candidates : numpy.ndarray
        Warm items for negative sampling.
    observed : PairSet
        Known positives excluded from the negatives.
    scorer_factory : callable
        ``scorer_factory(params)`` returns a scorer for validation.

    Returns
    -------
    best : ModelParams
        Parameters of the epoch with the highest validation AUC.
    records : list of TrainLogRecord
    """
    users, items = (np.asarray(a, dtype=np.int64) for a in train)
    if users.size == 0:
        raise DataError("Empty training partition.")
    rngs = make_rngs(cfg.seed)
    adam = Adam(lr=cfg.lr)
    best, best_auc, bad_epochs = params.copy(), -np.inf, 0
    records = []
    logger.info(
        f"Training GPatch on {users.size} positives with {cfg.n_neg} negatives each "
        f"(lr={cfg.lr}, batch={cfg.batch_size}, tau={cfg.tau}, l2={cfg.l2})."
    )
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        try:
            loss = train_epoch(
                users,
                items,
                reps,
                features,
                params,
                adam,
                cfg,
                rngs,
                candidates,
                observed,
                logger=logger,
            )
        except NumericError as err:
            raise NumericError(
                f"Training diverged in epoch {epoch}: {err}", last_good=best
            ) from err
        auc = validate_auc(val, scorer_factory(params))
        elapsed = (time.perf_counter() - t0) * 1000.0
        records.append(TrainLogRecord(epoch, loss, auc, elapsed))
        logger.debug(f"Epoch {epoch}: loss={loss:.6f} val_auc={auc:.6f}")
        if auc > best_auc:
            best, best_auc, bad_epochs = params.copy(), auc, 0
        else:
            bad_epochs += 1
            if bad_epochs >= max(cfg.patience, 1):
                logger.info(f"Early stopping after epoch {epoch}.")
                break
    logger.info(f"Best validation AUC {best_auc:.4f} after {len(records)} epochs.")
    return best, records


def write_train_log(fn, records):
    """Write training records as lines of ``epoch,loss,val_auc,elapsed_ms``."""
    columns = [f.name for f in fields(TrainLogRecord)]
    df = pd.DataFrame([vars(r) for r in records], columns=columns)
    df.to_csv(fn, index=False, float_format="%.10g")


def read_train_log(fn):
    df = pd.read_csv(fn)
    return [TrainLogRecord(**row) for row in df.to_dict(orient="records")]
