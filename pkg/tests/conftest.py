"""add global fixtures"""

from os.path import join, dirname, abspath
from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest

from gpatch.workflows import (
    USER,
    ITEM,
    SyntheticSpec,
    WalkConfig,
    LayerReps,
    FeatureTable,
    ModelParams,
    build_graph,
    graph_from_pairs,
    make_split,
    make_synthetic,
    train_bpr_mf,
    features_from_frames,
    precompute_all,
)

TESTDATADIR = join(dirname(abspath(__file__)), "data")


@pytest.fixture
def toy_interactions():
    # u0: i0 i1, u1: i1 i2, u2: i2
    return pd.DataFrame(
        {
            "user": ["u0", "u0", "u1", "u1", "u2"],
            "item": ["i0", "i1", "i1", "i2", "i2"],
        }
    )


@pytest.fixture
def toy_graph(toy_interactions):
    graph, interner = build_graph(toy_interactions)
    return graph


@pytest.fixture
def small_model():
    """Random reps over 3 warm users and 3 warm items, item 3 is cold."""
    rng = np.random.default_rng(42)
    K, dim = 2, 3
    reps = LayerReps.from_blocks(
        {
            USER: rng.standard_normal((3, K + 1, dim)),
            ITEM: rng.standard_normal((3, K + 1, dim)),
        },
        {USER: np.arange(3), ITEM: np.arange(3)},
        n_users=4,
        n_items=4,
        K=K,
        dim=dim,
    )
    features = FeatureTable(
        user=rng.standard_normal((4, 2)), item=rng.standard_normal((4, 2))
    )
    params = ModelParams.init(K, dim, 2, 2, hidden=(4,), out_dim=3, seed=7)
    return SimpleNamespace(reps=reps, features=features, params=params)


@pytest.fixture(scope="module")
def pipeline():
    """Synthetic split with BPR embeddings, layer reps and content."""
    spec = SyntheticSpec(
        n_users=40, n_items=50, latent_dim=4, content_dim=5, density=0.15, seed=1
    )
    df, frames = make_synthetic(spec)
    full, interner = build_graph(df)
    split = make_split(*full.edges(), interner.n_users, interner.n_items, seed=1)
    graph = graph_from_pairs(
        *split.partition("embed"), split.n_users, split.n_items
    )
    embeddings = train_bpr_mf(
        *graph.edges(), graph.n_users, graph.n_items, dim=6, epochs=2, seed=1
    )
    reps = precompute_all(graph, embeddings, WalkConfig(K=2, S=4, seed=1))
    cold = {USER: split.cold_users, ITEM: split.cold_items}
    features = features_from_frames(frames, interner, cold)
    return SimpleNamespace(
        interner=interner,
        split=split,
        graph=graph,
        embeddings=embeddings,
        reps=reps,
        features=features,
    )
