"""Tests for negative sampling, Adam, AUC and the training loop"""

import logging

import numpy as np
import pytest
from scipy.stats import chisquare

from gpatch.errors import DataError, NumericError
from gpatch.workflows import (
    ITEM,
    TrainConfig,
    TrainLogRecord,
    PairSet,
    Adam,
    ModelParams,
    HybridScorer,
    make_rngs,
    sample_negatives,
    make_validation_set,
    ValidationSet,
    validate_auc,
    auc_score,
    train_epoch,
    fit,
    write_train_log,
    read_train_log,
)


def test_train_config():
    cfg = TrainConfig()
    assert (cfg.lr, cfg.batch_size, cfg.tau, cfg.l2) == (0.001, 1024, 0.5, 1e-5)
    assert cfg.positives_per_batch == 204
    assert TrainConfig(lr=0.0).lr == 0.0
    assert TrainConfig.from_dict({"tau": 0.1, "K": 3}).tau == 0.1
    assert TrainConfig(hidden=[8, "4"]).hidden == (8, 4)
    for kwargs in [dict(lr=-1.0), dict(tau=1.5), dict(n_neg=0), dict(batch_size=0)]:
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)
    assert TrainConfig().layer_init == "root"
    with pytest.raises(ValueError, match="layer_init"):
        TrainConfig(layer_init="last")


def test_pair_set():
    pairs = PairSet([0, 0, 2, 0], [1, 3, 1, 1], n_items=4)
    assert len(pairs) == 3
    assert pairs.contains([0, 0, 1, 2], [1, 2, 1, 1]).tolist() == [
        True,
        False,
        False,
        True,
    ]
    assert pairs.items_of(0).tolist() == [1, 3]
    assert pairs.items_of(1).size == 0
    assert not PairSet([], [], 4).contains([0], [0]).any()


def test_sample_negatives():
    observed = PairSet([0, 0, 1], [0, 1, 2], n_items=4)
    rng = np.random.default_rng(0)
    users = np.array([0, 1, 0])
    neg = sample_negatives(users, 5, np.arange(4), observed, rng)
    assert neg.shape == (15,)
    assert not observed.contains(np.repeat(users, 5), neg).any()
    with pytest.raises(DataError):
        sample_negatives(users, 1, np.array([], dtype=int), observed, rng)


def test_sample_negatives_uniform():
    observed = PairSet([0, 0], [3, 7], n_items=20)
    neg = sample_negatives(
        np.zeros(36000, dtype=int), 1, np.arange(20), observed, np.random.default_rng(5)
    )
    counts = np.bincount(neg, minlength=20)
    assert counts[3] == counts[7] == 0
    free = np.delete(counts, [3, 7])
    assert chisquare(free).pvalue > 1e-3


def test_sample_negatives_full_user(caplog):
    observed = PairSet([0, 0], [0, 1], n_items=2)
    rng = np.random.default_rng(0)
    with caplog.at_level(logging.WARNING, logger="gpatch"):
        neg = sample_negatives([0], 3, np.arange(2), observed, rng, max_retries=2)
    assert neg.shape == (3,)
    assert "interacted with all 2 candidate items" in caplog.text


def test_make_rngs():
    a, b = make_rngs(3), make_rngs(3)
    assert a["masks"].random() == b["masks"].random()
    assert make_rngs(3)["masks"].random() != make_rngs(3)["shuffle"].random()


def test_adam():
    params = {"w": np.array([1.0, -2.0, 0.5])}
    grads = {"w": np.array([0.3, -4.0, 0.0])}
    Adam(lr=0.1).step(params, grads)
    # the first bias-corrected step has size lr in the gradient sign direction
    assert np.allclose(params["w"], [0.9, -1.9, 0.5], atol=1e-6)
    Adam(lr=0.0).step(params, grads)
    assert np.allclose(params["w"], [0.9, -1.9, 0.5], atol=1e-6)


def test_auc_score():
    assert auc_score([3.0, 2.0], [1.0, 0.0]) == 1.0
    assert auc_score([0.0], [1.0, 2.0]) == 0.0
    assert auc_score([1.0, 1.0], [1.0]) == 0.5
    assert auc_score([2.0, 0.5], [1.0]) == 0.5
    with pytest.raises(DataError):
        auc_score([], [1.0])


def test_auc_score_brute_force():
    rng = np.random.default_rng(8)
    for _ in range(1000):
        # integer scores give ties
        pos = rng.integers(0, 6, int(rng.integers(1, 12))).astype(float)
        neg = rng.integers(0, 6, int(rng.integers(1, 12))).astype(float)
        wins = (pos[:, None] > neg[None, :]) + 0.5 * (pos[:, None] == neg[None, :])
        assert np.isclose(auc_score(pos, neg), wins.mean(), rtol=0, atol=1e-12)


class _ItemScorer:
    def __init__(self, scores):
        self.scores = np.asarray(scores, dtype=float)

    def score_pairs(self, users, items):
        return self.scores[items]


def test_validate_auc():
    val = ValidationSet(
        users=np.array([0, 1, 0, 1]),
        items=np.array([2, 3, 0, 1]),
        y=np.array([1.0, 1.0, 0.0, 0.0]),
    )
    assert validate_auc(val, _ItemScorer([0.0, 1.0, 2.0, 3.0])) == 1.0
    assert validate_auc(val, _ItemScorer([3.0, 2.0, 1.0, 0.0])) == 0.0
    assert validate_auc(val, _ItemScorer([0.0, 5.0, 1.0, 2.0])) == 0.5
    empty = ValidationSet(np.array([], int), np.array([], int), np.array([]))
    with pytest.raises(DataError, match="Empty validation set"):
        validate_auc(empty, _ItemScorer([0.0]))


def _setup(pipeline, **kwargs):
    split, reps, features = pipeline.split, pipeline.reps, pipeline.features
    cfg = TrainConfig(hidden=(8,), out_dim=6, batch_size=32, n_neg=2, **kwargs)
    params = ModelParams.init(
        reps.K, reps.dim, features.dim("user"), features.dim(ITEM), (8,), 6, seed=0
    )
    known = PairSet(*split.pairs(("embed", "train")), split.n_items)
    val = make_validation_set(
        *split.partition("val"),
        np.arange(split.n_items),
        PairSet(*split.pairs(("embed", "train", "val")), split.n_items),
        make_rngs(0)["validation"],
    )
    return cfg, params, known, val


def test_validation_set(pipeline):
    _, _, _, val = _setup(pipeline)
    n = pipeline.split.counts()["val"]
    assert len(val) == 2 * n
    assert val.y.sum() == n
    observed = PairSet(*pipeline.split.pairs(("embed", "train", "val")), 10**6)
    negatives = val.y == 0
    assert not observed.contains(val.users[negatives], val.items[negatives]).any()


def test_fit(pipeline):
    cfg, params, known, val = _setup(pipeline, max_epochs=3, patience=5)
    reps, features = pipeline.reps, pipeline.features
    init = params.copy()
    best, records = fit(
        pipeline.split.partition("train"),
        val,
        reps,
        features,
        params,
        cfg,
        pipeline.graph.warm_nodes(ITEM),
        known,
        lambda p: HybridScorer(p, reps, features),
    )
    assert [r.epoch for r in records] == [1, 2, 3]
    assert all(np.isfinite(r.loss) and 0.0 <= r.val_auc <= 1.0 for r in records)
    assert best.is_finite()
    assert params != init
    # same seed, same result
    cfg, params2, known, val = _setup(pipeline, max_epochs=3, patience=5)
    best2, records2 = fit(
        pipeline.split.partition("train"),
        val,
        reps,
        features,
        params2,
        cfg,
        pipeline.graph.warm_nodes(ITEM),
        known,
        lambda p: HybridScorer(p, reps, features),
    )
    assert best2 == best
    assert [r.loss for r in records2] == [r.loss for r in records]


def test_fit_early_stopping(pipeline):
    # without updates the validation AUC never improves after epoch 1
    cfg, params, known, val = _setup(pipeline, lr=0.0, max_epochs=10, patience=2)
    reps, features = pipeline.reps, pipeline.features
    best, records = fit(
        pipeline.split.partition("train"),
        val,
        reps,
        features,
        params,
        cfg,
        pipeline.graph.warm_nodes(ITEM),
        known,
        lambda p: HybridScorer(p, reps, features),
    )
    assert len(records) == 3
    assert len(set(r.val_auc for r in records)) == 1
    assert best == params


def test_train_epoch_divergence(pipeline):
    cfg, params, known, _ = _setup(pipeline)
    params.patch_user.weights[-1][:] = np.inf
    with pytest.raises(NumericError) as excinfo:
        train_epoch(
            *pipeline.split.partition("train"),
            pipeline.reps,
            pipeline.features,
            params,
            Adam(cfg.lr),
            cfg,
            make_rngs(0),
            pipeline.graph.warm_nodes(ITEM),
            known,
        )
    assert excinfo.value.last_good is not None


def test_train_log_io(tmpdir):
    fn = str(tmpdir.join("train_log.txt"))
    records = [TrainLogRecord(1, 0.5, 0.75, 12.0), TrainLogRecord(2, 0.25, 0.8, 11.5)]
    write_train_log(fn, records)
    with open(fn) as fp:
        assert fp.readline().strip() == "epoch,loss,val_auc,elapsed_ms"
    assert read_train_log(fn) == records


def test_train_epoch_deterministic(pipeline):
    losses, results = [], []
    for _ in range(2):
        cfg, params, known, _ = _setup(pipeline)
        loss = train_epoch(
            *pipeline.split.partition("train"),
            pipeline.reps,
            pipeline.features,
            params,
            Adam(cfg.lr),
            cfg,
            make_rngs(4),
            pipeline.graph.warm_nodes(ITEM),
            known,
        )
        losses.append(loss)
        results.append(params)
    assert losses[0] == losses[1]
    assert results[0] == results[1]


def test_train_epoch_overfits(small_model):
    # every user has a single unobserved item, so negatives are fixed
    users, items = np.arange(3), np.arange(3)
    known = PairSet(np.r_[users, users], np.r_[items, (items + 2) % 3], n_items=4)
    cfg = TrainConfig(lr=0.005, batch_size=6, n_neg=1, tau=0.0, l2=0.0)
    params = small_model.params.copy()
    adam, rngs = Adam(cfg.lr), make_rngs(0)
    losses = [
        train_epoch(
            users,
            items,
            small_model.reps,
            small_model.features,
            params,
            adam,
            cfg,
            rngs,
            np.arange(3),
            known,
        )
        for _ in range(25)
    ]
    assert all(b < a for a, b in zip(losses[:-1], losses[1:]))
    assert losses[-1] < 0.8 * losses[0]
