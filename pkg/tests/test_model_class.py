"""Test the gpatch command line interface and its exit codes"""

import shutil
from os.path import join, dirname, abspath, isfile

import pandas as pd
import pytest
from click.testing import CliRunner
from hydromt.cli.cli_utils import parse_config

from gpatch.cli.main import main as gpatch_cli

TESTDATADIR = join(dirname(abspath(__file__)), "data")

_synth = ["--n-users", "60", "--n-items", "80", "--latent-dim", "4"]
_synth += ["--content-dim", "6", "--density", "0.1", "--seed", "3"]
_train = ["--batch-size", "64", "--n-neg", "2", "--hidden", "8", "--out-dim", "8"]


def _invoke(*args):
    return CliRunner().invoke(gpatch_cli, [str(a) for a in args])


@pytest.fixture(scope="module")
def stage_root(tmp_path_factory):
    """Synthetic split with content, embeddings and layer representations."""
    root = str(tmp_path_factory.mktemp("stages") / "model")
    r = _invoke("synth", root, "--deterministic", *_synth)
    assert r.exit_code == 0, r.output
    r = _invoke("embed", root, "--dim", 8, "--epochs", 2, "--seed", 3)
    assert r.exit_code == 0, r.output
    r = _invoke("precompute", root, "-K", 2, "-S", 4, "--seed", 3)
    assert r.exit_code == 0, r.output
    return root


@pytest.fixture
def root(stage_root, tmpdir):
    root = str(tmpdir.join("model"))
    shutil.copytree(stage_root, root)
    return root


@pytest.fixture
def interactions_fn(tmpdir):
    fn = str(tmpdir.join("ratings.tsv"))
    with open(fn, "w") as fp:
        for user in range(20):
            for k in range(5):
                fp.write(f"u{user}\ti{(3 * user + k) % 15}\n")
    return fn


def test_model_build(tmpdir):
    root = str(tmpdir.join("synthetic"))
    config = join(TESTDATADIR, "gpatch_build_synthetic.ini")
    r = _invoke("build", root, "-i", config, "-vv")
    assert r.exit_code == 0, r.output
    assert isfile(join(root, "hydromt.log"))
    assert isfile(join(root, "eval", "report.csv"))
    config = join(TESTDATADIR, "gpatch_update_tau.ini")
    r = _invoke("update", root, "-i", config)
    assert r.exit_code == 0, r.output
    run = parse_config(join(root, "run.ini"))
    assert run["setup_training"]["tau"] == 0.9
    assert run["setup_layerreps"]["K"] == 2


def test_stages(root):
    r = _invoke("train", root, "--tau", 0.5, "--max-epochs", 2, *_train)
    assert r.exit_code == 0, r.output
    assert "best validation AUC" in r.output
    assert isfile(join(root, "model", "params.gpm"))
    r = _invoke("eval", root, "--mode", "hybrid", "--mode", "cold", "-N", 5)
    assert r.exit_code == 0, r.output
    report = pd.read_csv(join(root, "eval", "report.csv"))
    assert set(report["mode"]) == {"hybrid", "cold"}
    r = _invoke("eval", root, "--mode", "hybrid", "-N", 5, "--baseline", "random")
    assert r.exit_code == 0, r.output
    assert isfile(join(root, "eval", "report_random.csv"))
    a = join(root, "eval", "per_user_hybrid.csv")
    b = join(root, "eval", "per_user_hybrid_random.csv")
    r = _invoke("ttest", a, b, "--metric", "ndcg")
    assert r.exit_code == 0, r.output
    assert r.output.splitlines()[-1].startswith("ndcg,")
    r = _invoke("bench", root, "--repeats", 1, "--n-pairs", 20)
    assert r.exit_code == 0, r.output
    assert isfile(join(root, "eval", "bench.csv"))


def test_recommend(root):
    r = _invoke("train", root, "--max-epochs", 1, *_train)
    assert r.exit_code == 0, r.output
    manifest = pd.read_csv(
        join(root, "split", "manifest.tsv"), sep="\t", header=None, dtype=str
    )
    user = manifest[0].iloc[0]
    out = join(root, "recs.csv")
    r = _invoke("recommend", root, user, "nobody", "-N", 3, "-o", out)
    assert r.exit_code == 0, r.output
    assert "nobody: no recommendations" in r.output
    recs = pd.read_csv(out, dtype={"user": str, "item": str})
    assert recs["user"].tolist() == [user] * 3
    assert recs["rank"].tolist() == [1, 2, 3]
    r = _invoke("recommend", root, "nobody")
    assert r.exit_code == 2


def test_sweep(root):
    args = ["--tau", 0.2, "--tau", 0.8, "-N", 5, "--max-epochs", 1]
    r = _invoke("sweep", root, *args, *_train)
    assert r.exit_code == 0, r.output
    table = pd.read_csv(join(root, "eval", "sweep_tau.csv"))
    assert table["tau"].tolist() == [0.2, 0.8]


def test_numeric_failure(root):
    args = ["--lr", 1e300, "--batch-size", 3, "--n-neg", 2, "--max-epochs", 1]
    r = _invoke("train", root, *args)
    assert r.exit_code == 3, r.output
    assert "Numeric failure" in r.output
    assert isfile(join(root, "model", "params_last_good.gpm"))
    assert not isfile(join(root, "model", "params.gpm"))


def test_split_deterministic(tmpdir, interactions_fn):
    digests = []
    for name in ["a", "b"]:
        root = str(tmpdir.join(name))
        r = _invoke("split", root, "--interactions", interactions_fn, "--seed", 7)
        assert r.exit_code == 0, r.output
        digests.append(parse_config(join(root, "run.ini"))["digests"])
    assert digests[0] == digests[1]
    assert "split/manifest.tsv" in digests[0]


def test_usage_and_data_errors(tmpdir):
    root = str(tmpdir.join("model"))
    r = _invoke("split", root)
    assert r.exit_code == 1
    r = _invoke("split", root, "--interactions", str(tmpdir.join("missing.tsv")))
    assert r.exit_code == 2
    assert "missing.tsv" in r.output
    r = _invoke("eval", str(tmpdir.join("empty")))
    assert r.exit_code == 2
    assert "No gpatch model found" in r.output
    r = _invoke("train", root, "--bogus")
    assert r.exit_code == 1


def test_stale_artifacts(root):
    with open(join(root, "layerreps", "reps.gpl"), "ab") as fp:
        fp.write(b"\0")
    r = _invoke("train", root, "--max-epochs", 1, *_train)
    assert r.exit_code == 2
    assert "layerreps/reps.gpl was modified" in r.output


def test_ttest(tmpdir):
    a, b = str(tmpdir.join("a.csv")), str(tmpdir.join("b.csv"))
    with open(a, "w") as fp:
        fp.write("user,recall\nu1,0.5\nu2,0.25\nu3,1.0\n")
    with open(b, "w") as fp:
        fp.write("user,recall\nu1,0.5\nu2,0.25\nu3,1.0\nu4,0.0\n")
    r = _invoke("ttest", a, b)
    assert r.exit_code == 0, r.output
    lines = r.output.splitlines()
    assert lines[-2] == "metric,n,mean_a,mean_b,statistic,pvalue,degenerate"
    assert lines[-1] == "recall,3,0.5833333333,0.5833333333,0,1,True"
    with open(b, "w") as fp:
        fp.write("user,recall\nu1,0.5\nu9,0.25\n")
    r = _invoke("ttest", a, b)
    assert r.exit_code == 2
