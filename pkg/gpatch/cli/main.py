# -*- coding: utf-8 -*-
"""Command line interface of gpatch.

Every pipeline stage is one command acting on a model root folder::

    gpatch split ROOT --interactions ratings.tsv --cold-frac 0.2 --seed 7
    gpatch embed ROOT
    gpatch features ROOT --user-features user.tsv --item-features item.tsv
    gpatch precompute ROOT -K 3 -S 25
    gpatch train ROOT --tau 0.5
    gpatch eval ROOT --mode hybrid --mode cold -N 20
    gpatch recommend ROOT u1 u2 -N 10

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

import sys
import logging
from os.path import join, isfile

import click
import numpy as np
import pandas as pd
from hydromt.cli.cli_utils import parse_config
from hydromt.log import setuplog

from .. import __version__
from ..errors import DataError, NumericError
from ..gpatch import GPatchModel
from ..workflows import evaluator, scoring
from ..workflows.network import LAYER_INITS

logger = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class ExitCodeGroup(click.Group):
    """Click group mapping exceptions to the gpatch exit codes."""

    def main(self, args=None, prog_name=None, complete_var=None, **extra):
        extra.pop("standalone_mode", None)
        try:
            rv = super().main(
                args, prog_name, complete_var, standalone_mode=False, **extra
            )
        except click.ClickException as err:
            err.show()
            sys.exit(EXIT_USAGE)
        except click.exceptions.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(EXIT_USAGE)
        except NumericError as err:
            click.echo(f"Numeric failure: {err}", err=True)
            sys.exit(EXIT_NUMERIC)
        except (DataError, OSError) as err:
            click.echo(f"Data error: {err}", err=True)
            sys.exit(EXIT_DATA)
        sys.exit(rv if isinstance(rv, int) else 0)


## common arguments and options
root_arg = click.argument("root", type=click.Path(file_okay=False))
verbose_opt = click.option("--verbose", "-v", count=True, help="Increase verbosity.")
quiet_opt = click.option("--quiet", "-q", count=True, help="Decrease verbosity.")
threads_opt = click.option(
    "--threads", default=1, show_default=True, help="Maximum number of workers."
)
deterministic_opt = click.option(
    "--deterministic",
    is_flag=True,
    help="Single worker and fixed seeds: identical inputs give identical files.",
)
force_opt = click.option(
    "--force", is_flag=True, help="Use upstream artifacts even if they are stale."
)
seed_opt = click.option("--seed", default=0, show_default=True, help="Random seed.")


def common_opts(func):
    for opt in [force_opt, deterministic_opt, threads_opt, quiet_opt, verbose_opt]:
        func = opt(func)
    return root_arg(func)


def open_model(root, verbose, quiet, threads, deterministic, force, create=False):
    """Open the model at ``root`` in append mode and set up logging.

    A new root is only created for the first stage (``create``).
    """
    exists = isfile(join(root, GPatchModel._CONF))
    if not exists and not create:
        raise DataError(f"No gpatch model found at {root}, run 'gpatch split' first.")
    log_level = max(10, 30 - 10 * (verbose - quiet))
    mod = GPatchModel(
        root=root,
        mode="r+" if exists else "w+",
        threads=threads,
        deterministic=deterministic,
        force=force,
        logger=setuplog("gpatch", join(root, "hydromt.log"), log_level=log_level),
    )
    return mod


## MAIN


@click.group(cls=ExitCodeGroup)
@click.version_option(__version__, message="gpatch version: %(version)s")
def main():
    """Command line interface for GPatch cold-start recommendation."""
    pass


## STAGES


@main.command(short_help="Split interactions into partitions with cold items.")
@common_opts
@click.option(
    "--interactions",
    "interactions_fn",
    type=click.Path(dir_okay=False),
    help="Interaction file.",
)
@click.option(
    "--format",
    "fmt",
    type=click.Choice(["tsv", "users_dat"]),
    default="tsv",
    show_default=True,
)
@click.option("--cold-frac", default=0.2, show_default=True, help="Cold item share.")
@click.option(
    "--ratios",
    nargs=4,
    type=float,
    default=(0.65, 0.15, 0.10, 0.10),
    show_default=True,
    help="Embed, train, val and test shares of warm interactions.",
)
@seed_opt
@click.option("--manifest", "manifest_fn", help="Use an existing split manifest.")
@click.option("--cold-items", "cold_items_fn", help="Cold item list of --manifest.")
def split(
    root,
    verbose,
    quiet,
    threads,
    deterministic,
    force,
    interactions_fn,
    fmt,
    cold_frac,
    ratios,
    seed,
    manifest_fn,
    cold_items_fn,
):
    """Write the split manifest, cold item list and walk graph to ROOT."""
    if interactions_fn is None and manifest_fn is None:
        raise click.UsageError("Either --interactions or --manifest is required.")
    mod = open_model(root, verbose, quiet, threads, deterministic, force, create=True)
    if manifest_fn is None:
        mod.setup_interactions(interactions_fn, fmt=fmt)
    mod.setup_split(
        cold_item_frac=cold_frac,
        ratios=ratios,
        seed=seed,
        manifest_fn=manifest_fn,
        cold_items_fn=cold_items_fn,
    )
    mod.write()


@main.command(short_help="Generate a synthetic dataset, split it and add content.")
@common_opts
@click.option("--n-users", default=2000, show_default=True)
@click.option("--n-items", default=3000, show_default=True)
@click.option("--latent-dim", default=16, show_default=True)
@click.option("--content-dim", default=32, show_default=True)
@click.option("--rho", default=0.8, show_default=True, help="Content informativeness.")
@click.option("--density", default=0.01, show_default=True)
@click.option("--cold-frac", default=0.2, show_default=True, help="Cold item share.")
@seed_opt
def synth(
    root,
    verbose,
    quiet,
    threads,
    deterministic,
    force,
    n_users,
    n_items,
    latent_dim,
    content_dim,
    rho,
    density,
    cold_frac,
    seed,
):
    """Write a synthetic split with content features to ROOT."""
    mod = open_model(root, verbose, quiet, threads, deterministic, force, create=True)
    mod.setup_interactions(
        synthetic=dict(
            n_users=n_users,
            n_items=n_items,
            latent_dim=latent_dim,
            content_dim=content_dim,
            rho=rho,
            density=density,
            seed=seed,
        )
    )
    mod.setup_split(cold_item_frac=cold_frac, seed=seed)
    mod.setup_features()
    mod.write()


@main.command(short_help="Train or import warm embeddings.")
@common_opts
@click.option(
    "--method", type=click.Choice(["bpr", "file"]), default="bpr", show_default=True
)
@click.option("--user-emb", "user_fn", help="User embedding file (method 'file').")
@click.option("--item-emb", "item_fn", help="Item embedding file (method 'file').")
@click.option("--dim", default=200, show_default=True, help="Embedding size.")
@click.option("--lr", default=0.05, show_default=True)
@click.option("--l2", default=1e-4, show_default=True)
@click.option("--epochs", default=30, show_default=True)
@click.option("--batch-size", default=256, show_default=True)
@seed_opt
@click.option("--strict/--no-strict", default=True, show_default=True)
def embed(
    root,
    verbose,
    quiet,
    threads,
    deterministic,
    force,
    method,
    user_fn,
    item_fn,
    dim,
    lr,
    l2,
    epochs,
    batch_size,
    seed,
    strict,
):
    """Write warm user and item embeddings to ROOT."""
    if method == "file" and (user_fn is None or item_fn is None):
        raise click.UsageError("--user-emb and --item-emb are required for 'file'.")
    mod = open_model(root, verbose, quiet, threads, deterministic, force)
    mod.setup_embeddings(
        method=method,
        user_fn=user_fn,
        item_fn=item_fn,
        dim=dim,
        lr=lr,
        l2=l2,
        epochs=epochs,
        batch_size=batch_size,
        seed=seed,
        strict=strict,
    )
    mod.write()


@main.command(short_help="Import user and item content features.")
@common_opts
@click.option("--user-features", "user_fn", help="User content vectors.")
@click.option("--item-features", "item_fn", help="Item content vectors.")
@click.option(
    "--format",
    "fmt",
    type=click.Choice(["vectors", "ldac"]),
    default="vectors",
    show_default=True,
)
@click.option("--warm-optional", is_flag=True, help="Zero content for warm gaps.")
@click.option("--normalize", is_flag=True, help="L2-normalize content rows.")
@click.option("--vocab-size", type=int, help="Number of terms of ldac documents.")
def features(
    root,
    verbose,
    quiet,
    threads,
    deterministic,
    force,
    user_fn,
    item_fn,
    fmt,
    warm_optional,
    normalize,
    vocab_size,
):
    """Write content features aligned to the split of ROOT."""
    if user_fn is None and item_fn is None:
        raise click.UsageError("--user-features or --item-features is required.")
    mod = open_model(root, verbose, quiet, threads, deterministic, force)
    mod.setup_features(
        user_fn=user_fn,
        item_fn=item_fn,
        fmt=fmt,
        warm_optional=warm_optional,
        normalize=normalize,
        vocab_size=vocab_size,
    )
    mod.write()


@main.command(short_help="Pre-compute layer representations of warm nodes.")
@common_opts
@click.option("-K", "K", default=3, show_default=True, help="Walk length.")
@click.option("-S", "S", default=25, show_default=True, help="Walks per node.")
@seed_opt
@click.option("--chunk-size", default=256, show_default=True)
def precompute(
    root, verbose, quiet, threads, deterministic, force, K, S, seed, chunk_size
):
    """Write the layer representations of ROOT."""
    mod = open_model(root, verbose, quiet, threads, deterministic, force)
    mod.setup_layerreps(K=K, S=S, seed=seed, chunk_size=chunk_size)
    mod.write()


def train_opts(func):
    opts = [
        click.option("--lr", default=0.001, show_default=True),
        click.option("--batch-size", default=1024, show_default=True),
        click.option("--l2", default=1e-5, show_default=True),
        click.option("--n-neg", default=4, show_default=True),
        click.option("--max-epochs", default=100, show_default=True),
        click.option("--patience", default=10, show_default=True),
        seed_opt,
        click.option(
            "--detach-patch-input",
            is_flag=True,
            help="Stop patching gradients at the warm representation.",
        ),
        click.option(
            "--hidden",
            multiple=True,
            type=int,
            default=(200,),
            show_default=True,
            help="Hidden layer size, repeat for more layers.",
        ),
        click.option("--out-dim", default=200, show_default=True),
        click.option(
            "--layer-init",
            type=click.Choice(LAYER_INITS),
            default="root",
            show_default=True,
            help="Initial GWarmer layer weights.",
        ),
    ]
    for opt in reversed(opts):
        func = opt(func)
    return func


@main.command(short_help="Train GWarmer and the Patching Networks.")
@common_opts
@click.option("--tau", default=0.5, show_default=True, help="Masking ratio.")
@train_opts
def train(root, verbose, quiet, threads, deterministic, force, **options):
    """Write the trained checkpoint and training log of ROOT."""
    mod = open_model(root, verbose, quiet, threads, deterministic, force)
    options["hidden"] = tuple(options["hidden"])
    mod.setup_training(**options)
    mod.write()
    best = mod.get_config("results", "best_val_auc")
    click.echo(f"best validation AUC: {best:.6f}")


@main.command(name="eval", short_help="Evaluate on the all-ranking tasks.")
@common_opts
@click.option(
    "--mode",
    "modes",
    multiple=True,
    type=click.Choice(evaluator.MODES),
    default=evaluator.MODES,
    show_default=True,
)
@click.option("-N", "N", default=20, show_default=True, help="Cutoff.")
@click.option(
    "--baseline",
    type=click.Choice(list(scoring.BASELINES)),
    help="Evaluate a baseline scorer instead.",
)
@click.option(
    "--partition", type=click.Choice(["test", "val"]), default="test", show_default=True
)
@seed_opt
def eval_(
    root,
    verbose,
    quiet,
    threads,
    deterministic,
    force,
    modes,
    N,
    baseline,
    partition,
    seed,
):
    """Write metric reports and per-user metrics to ROOT/eval."""
    mod = open_model(root, verbose, quiet, threads, deterministic, force)
    reports = mod.evaluate(
        modes=list(modes), N=N, baseline=baseline, partition=partition, seed=seed
    )
    mod.write()
    if reports:
        df = pd.concat([r.records() for r in reports], ignore_index=True)
        click.echo(df.to_string(index=False, float_format=lambda v: f"{v:.4f}"))


@main.command(short_help="Top-N recommendations for users.")
@common_opts
@click.argument("user_ids", nargs=-1)
@click.option("-N", "N", default=20, show_default=True, help="List length.")
@click.option(
    "--users-file", type=click.Path(dir_okay=False), help="File with one user per line."
)
@click.option(
    "--output", "-o", type=click.Path(dir_okay=False), help="CSV file, else stdout."
)
def recommend(
    root, verbose, quiet, threads, deterministic, force, user_ids, N, users_file, output
):
    """Write ``user,rank,item,score`` lines for USER_IDS."""
    user_ids = list(user_ids)
    if users_file is not None:
        with open(users_file, "r") as fp:
            user_ids += [line.strip() for line in fp if line.strip()]
    if not user_ids:
        raise click.UsageError("No user ids given.")
    mod = open_model(root, verbose, quiet, threads, deterministic, force)
    recs, failed = mod.recommend(user_ids, N=N)
    for ext_id in failed:
        click.echo(f"{ext_id}: no recommendations", err=True)
    if output is None:
        click.echo(recs.to_csv(index=False, float_format="%.10g"), nl=False)
    else:
        recs.to_csv(output, index=False, float_format="%.10g")
    if len(failed) == len(user_ids):
        raise DataError("No recommendations for any of the users.")


@main.command(short_help="Train and evaluate one model per masking ratio.")
@common_opts
@click.option(
    "--tau",
    "taus",
    multiple=True,
    type=float,
    default=(0.1, 0.3, 0.5, 0.7, 0.9),
    show_default=True,
)
@click.option("-N", "N", default=20, show_default=True, help="Cutoff.")
@train_opts
def sweep(root, verbose, quiet, threads, deterministic, force, taus, N, **options):
    """Write the hybrid metrics per tau to ROOT/eval/sweep_tau.csv."""
    mod = open_model(root, verbose, quiet, threads, deterministic, force)
    options["hidden"] = tuple(options["hidden"])
    table = mod.sweep_tau(taus=taus, N=N, **options)
    mod.write()
    click.echo(table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))


@main.command(short_help="Benchmark precomputed against recomputed scoring.")
@common_opts
@click.option("--repeats", default=3, show_default=True)
@click.option("--n-pairs", default=10000, show_default=True)
@seed_opt
def bench(root, verbose, quiet, threads, deterministic, force, repeats, n_pairs, seed):
    """Write timings to ROOT/eval/bench.csv."""
    mod = open_model(root, verbose, quiet, threads, deterministic, force)
    report = mod.benchmark(repeats=repeats, n_pairs=n_pairs, seed=seed)
    mod.write()
    click.echo(
        f"{report.n_scorings} scorings: "
        f"precomputed {np.median(report.precomputed_s):.6f}s, "
        f"recompute {np.median(report.recompute_s):.6f}s, "
        f"max abs diff {report.max_abs_diff:.3g}"
    )


@main.command(short_help="Paired t-test of two per-user metric files.")
@click.argument("per_user_a", type=click.Path(exists=True, dir_okay=False))
@click.argument("per_user_b", type=click.Path(exists=True, dir_okay=False))
@click.option("--metric", default="recall", show_default=True)
def ttest(per_user_a, per_user_b, metric):
    """Compare METRIC of PER_USER_A and PER_USER_B on their common users."""
    a = evaluator.read_per_user(per_user_a, metric).dropna()
    b = evaluator.read_per_user(per_user_b, metric).dropna()
    users = a.index.intersection(b.index)
    if users.size < 2:
        raise DataError(f"Only {users.size} common users in the two files.")
    res = evaluator.paired_ttest(a.loc[users].values, b.loc[users].values)
    click.echo("metric,n,mean_a,mean_b,statistic,pvalue,degenerate")
    click.echo(
        f"{metric},{users.size},{a.loc[users].mean():.10g},"
        f"{b.loc[users].mean():.10g},{res.statistic:.10g},{res.pvalue:.10g},"
        f"{res.degenerate}"
    )


@main.command(short_help="Build a complete model from an ini file.")
@root_arg
@click.option(
    "--config",
    "-i",
    "config_fn",
    required=True,
    type=click.Path(exists=True, dir_okay=False),
    help="Path to the ini build configuration.",
)
@verbose_opt
@quiet_opt
def build(root, config_fn, verbose, quiet):
    """Run the [setup_*] sections of the config in order and write ROOT.

    Example usage:

    gpatch build /path/to/model_root -i /path/to/gpatch_build.ini -vv
    """
    log_level = max(10, 30 - 10 * (verbose - quiet))
    opt = parse_config(config_fn)
    kwargs = opt.pop("global", {})
    mod = GPatchModel(
        root=root,
        mode="w+",
        logger=setuplog("gpatch", join(root, "hydromt.log"), log_level=log_level),
        **kwargs,
    )
    mod.build(opt=opt)


@main.command(short_help="Update an existing model from an ini file.")
@root_arg
@click.option(
    "--config",
    "-i",
    "config_fn",
    required=True,
    type=click.Path(exists=True, dir_okay=False),
    help="Path to the ini update configuration.",
)
@verbose_opt
@quiet_opt
@force_opt
def update(root, config_fn, verbose, quiet, force):
    """Run the [setup_*] sections of the config on the model at ROOT.

    Example usage:

    gpatch update /path/to/model_root -i /path/to/gpatch_update.ini -v
    """
    opt = parse_config(config_fn)
    kwargs = opt.pop("global", {})
    mod = open_model(
        root,
        verbose,
        quiet,
        kwargs.get("threads", 1),
        kwargs.get("deterministic", False),
        force or kwargs.get("force", False),
    )
    mod.update(opt=opt)


if __name__ == "__main__":
    main()
