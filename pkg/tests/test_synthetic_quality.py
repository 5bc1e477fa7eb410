"""End-to-end ranking quality on a synthetic dataset with informative content"""

import pytest

from gpatch import GPatchModel


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("quality"))
    mod = GPatchModel(root=root, mode="w+", deterministic=True)
    mod.setup_interactions(
        synthetic=dict(n_users=1000, n_items=1500, rho=0.8, density=0.02, seed=0)
    )
    mod.setup_split(cold_item_frac=0.2, seed=0)
    mod.setup_features()
    mod.setup_embeddings(dim=64, seed=0)
    mod.setup_layerreps(K=3, S=25, seed=0)
    mod.setup_training(max_epochs=30, seed=0)
    return mod


def _ndcg(mod, mode, baseline=None):
    (report,) = mod.evaluate(modes=[mode], N=20, baseline=baseline)
    return report.mean("ndcg")


def test_hybrid_beats_baselines(trained):
    hybrid = _ndcg(trained, "hybrid")
    assert hybrid > 2.0 * _ndcg(trained, "hybrid", baseline="random")
    assert hybrid > _ndcg(trained, "hybrid", baseline="content")


def test_warm_not_below_inner_product(trained):
    assert _ndcg(trained, "warm") >= _ndcg(trained, "warm", baseline="inner_product")


def test_cold_beats_random(trained):
    assert _ndcg(trained, "cold") > 2.0 * _ndcg(trained, "cold", baseline="random")
