"""Implement the GPatch model class"""

import os
from os.path import join, isfile
import logging

import dask
import numpy as np
import pandas as pd
import scipy
import xarray as xr

import hydromt
from hydromt.models.model_api import Model

from . import __version__, DATADIR
from .errors import DataError, NumericError
from .io import file_digest, read_vector_file
from .workflows import graph, walker, network, trainer, embedder, scoring
from .workflows import evaluator, dataio
from .workflows.graph import USER, ITEM, SIDES

__all__ = ["GPatchModel"]

logger = logging.getLogger(__name__)


class GPatchModel(Model):
    """GPatch cold-start recommender model.

    The model root holds one folder per pipeline stage. Every stage records
    its arguments in ``run.ini`` together with the sha256 digests of the
    artifacts it wrote and of the upstream artifacts it used; reading an
    artifact whose upstream changed raises a :py:class:`DataError` unless
    ``force`` is set.
    """

    _NAME = "gpatch"
    _CONF = "run.ini"
    _DATADIR = DATADIR
    _FOLDERS = [
        "split",
        "graph",
        "embeddings",
        "features",
        "layerreps",
        "model",
        "eval",
    ]
    _FILES = {
        "manifest": "split/manifest.tsv",
        "cold_items": "split/cold_items.txt",
        "graph": "graph/graph.gpg",
        "ids": "graph/ids.tsv",
        "user_embeddings": "embeddings/user.gpe",
        "item_embeddings": "embeddings/item.gpe",
        "user_features": "features/user.tsv",
        "item_features": "features/item.tsv",
        "layerreps": "layerreps/reps.gpl",
        "params": "model/params.gpm",
        "last_good": "model/params_last_good.gpm",
        "train_log": "model/train_log.txt",
    }
    # artifacts each stage consumes
    _UPSTREAM = {
        "setup_embeddings": ["manifest", "cold_items", "graph", "ids"],
        "setup_features": ["manifest", "cold_items", "ids"],
        "setup_layerreps": ["graph", "user_embeddings", "item_embeddings"],
        "setup_training": [
            "manifest",
            "layerreps",
            "user_features",
            "item_features",
        ],
        "evaluate": [
            "manifest",
            "params",
            "layerreps",
            "user_features",
            "item_features",
        ],
    }

    def __init__(
        self,
        root=None,
        mode="w",
        config_fn=None,
        threads=1,
        deterministic=False,
        force=False,
        logger=logger,
    ):
        super().__init__(
            root=root,
            mode=mode,
            config_fn=config_fn,
            logger=logger,
        )

        # gpatch specific
        self.deterministic = deterministic
        self.threads = 1 if deterministic else max(int(threads), 1)
        self.force = force

        self._interactions = None
        self._feature_frames = None
        self._interner = None
        self._split = None
        self._graph = None
        self._embeddings = None
        self._features = None
        self._layerreps = None
        self._params = None
        self._train_log = None
        self._reports = dict()
        self._eval_tables = dict()
        self._updated = set()
        self._stages = set()

    ## SETUP METHODS

    def setup_interactions(self, interactions_fn=None, fmt="tsv", synthetic=None):
        """Read the user-item interactions or generate a synthetic dataset.

        Parameters
        ----------
        interactions_fn : str, optional
            Interaction file.
        fmt : {"tsv", "users_dat"}
            "tsv" reads ``user<TAB>item`` lines, "users_dat" per-user item
            lists (``count item item ...``).
        synthetic : dict, optional
            :py:class:`~gpatch.workflows.dataio.SyntheticSpec` fields. The
            generated content vectors are used by :py:meth:`setup_features`
            when no feature files are given.
        """
        digest = None
        if synthetic is not None:
            spec = dataio.SyntheticSpec(**synthetic)
            self.logger.info(f"Preparing synthetic interactions from {spec}.")
            df, self._feature_frames = dataio.make_synthetic(spec, logger=self.logger)
        elif interactions_fn is None:
            raise ValueError("Either interactions_fn or synthetic is required.")
        elif fmt == "tsv":
            df = dataio.read_interactions(interactions_fn, logger=self.logger)
            digest = file_digest(interactions_fn)
        elif fmt == "users_dat":
            df = dataio.load_user_lists(interactions_fn, logger=self.logger)
            digest = file_digest(interactions_fn)
        else:
            raise ValueError(f"Unknown format '{fmt}', select from 'tsv', 'users_dat'.")
        self._interactions = df
        self._record(
            "setup_interactions",
            interactions_fn=interactions_fn,
            fmt=fmt,
            synthetic=synthetic,
            digest=digest,
        )

    def setup_split(
        self,
        cold_item_frac=0.2,
        ratios=(0.65, 0.15, 0.10, 0.10),
        seed=0,
        manifest_fn=None,
        cold_items_fn=None,
    ):
        """Split the interactions into embed, train, val and test partitions
        with a set of cold items, and build the walk graph from the embed
        partition.

        Adds model components:

        * **split**: partition of every interaction and the cold nodes
        * **graph**: bipartite graph of the embed partition
        * **interner**: external ID to dense index maps

        Parameters
        ----------
        cold_item_frac : float
            Fraction of items held out as cold items, by default 0.2.
        ratios : tuple of float
            Shares of the warm interactions for embed, train, val and test,
            by default (0.65, 0.15, 0.10, 0.10).
        seed : int
            Seed of the cold item sample and the shuffles.
        manifest_fn, cold_items_fn : str, optional
            Use an existing split manifest (e.g. a timeline split) and cold
            item list instead of sampling one.
        """
        if manifest_fn is not None:
            self.logger.info(f"Reading split from {manifest_fn}.")
            interner = graph.IdInterner()
            split = dataio.read_split(
                manifest_fn, cold_items_fn, interner, seed=seed, logger=self.logger
            )
        else:
            if self._interactions is None:
                raise DataError("No interactions, run setup_interactions first.")
            self.logger.info(f"Preparing cold-start split ({cold_item_frac:.0%} cold).")
            full, interner = graph.build_graph(self._interactions, logger=self.logger)
            users, items = full.edges()
            split = dataio.make_split(
                users,
                items,
                interner.n_users,
                interner.n_items,
                cold_item_frac=cold_item_frac,
                ratios=ratios,
                seed=seed,
                logger=self.logger,
            )
        embed_users, embed_items = split.partition("embed")
        self._interner = interner
        self._split = split
        self._graph = graph.graph_from_pairs(
            embed_users, embed_items, split.n_users, split.n_items
        )
        self._updated.update(["split", "graph"])
        self._record(
            "setup_split",
            cold_item_frac=cold_item_frac,
            ratios=list(ratios),
            seed=seed,
            manifest_fn=manifest_fn,
            cold_items_fn=cold_items_fn,
        )

    def setup_embeddings(
        self,
        method="bpr",
        user_fn=None,
        item_fn=None,
        dim=200,
        lr=0.05,
        l2=1e-4,
        epochs=30,
        batch_size=256,
        seed=0,
        strict=True,
    ):
        """Train or read the warm user and item embeddings.

        Cold nodes never get an embedding: rows of cold nodes read from
        external files are dropped.

        Parameters
        ----------
        method : {"bpr", "file"}
            Train BPR matrix factorization on the embed partition, or read
            externally trained embeddings from ``user_fn`` and ``item_fn``.
        dim : int
            Embedding size, by default 200.
        lr, l2, epochs, batch_size : float, float, int, int
            BPR training settings.
        seed : int
        strict : bool
            Raise if a warm node has no embedding in the files.
        """
        g = self.graph
        if method == "bpr":
            users, items = g.edges()
            emb = embedder.train_bpr_mf(
                users,
                items,
                g.n_users,
                g.n_items,
                dim=dim,
                lr=lr,
                l2=l2,
                epochs=epochs,
                batch_size=batch_size,
                seed=seed,
                logger=self.logger,
            )
        elif method == "file":
            if user_fn is None or item_fn is None:
                raise ValueError("Method 'file' requires user_fn and item_fn.")
            required = {side: g.warm_nodes(side) for side in SIDES}
            emb = embedder.load_embeddings(
                user_fn,
                item_fn,
                self.interner,
                dim=dim,
                required=required,
                strict=strict,
                logger=self.logger,
            )
            for side in SIDES:
                cold = ~g.warm_mask(side) & emb.present(side)
                if cold.any():
                    self.logger.info(f"Dropping {cold.sum()} cold {side} embeddings.")
                    emb.vectors(side)[cold] = np.nan
        else:
            raise ValueError(f"Unknown method '{method}', select from 'bpr', 'file'.")
        self._embeddings = emb
        self._updated.add("embeddings")
        self._record(
            "setup_embeddings",
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

    def setup_features(
        self,
        user_fn=None,
        item_fn=None,
        fmt="vectors",
        warm_optional=False,
        normalize=False,
        vocab_size=None,
    ):
        """Read the user and item content features.

        Cold nodes need a content row; a side without a file gets empty
        content. Without any file, content of a synthetic dataset is used.

        Parameters
        ----------
        user_fn, item_fn : str, optional
            Content files in the vector format (``d=<dim>`` header and
            ``id<TAB>v1,...`` lines, or binary).
        fmt : {"vectors", "ldac"}
            With "ldac" ``item_fn`` holds ``count id:cnt ...`` documents that
            are converted to tf-idf vectors.
        warm_optional : bool
            Accept warm nodes without content (zero vectors).
        normalize : bool
            L2-normalize every content row.
        vocab_size : int, optional
            Number of terms of "ldac" documents.
        """
        split = self.split
        cold = {USER: split.cold_users, ITEM: split.cold_items}
        kwargs = dict(warm_optional=warm_optional, normalize=normalize)
        if user_fn is None and item_fn is None and self._feature_frames is not None:
            self.logger.info("Preparing content features from synthetic data.")
            features = dataio.features_from_frames(
                self._feature_frames, self.interner, cold, logger=self.logger, **kwargs
            )
        elif fmt == "ldac":
            if item_fn is None:
                raise ValueError("Format 'ldac' requires item_fn.")
            docs = dataio.load_ldac_features(item_fn, vocab_size, logger=self.logger)
            frames = {ITEM: docs}
            if user_fn is not None:
                ids, matrix = read_vector_file(user_fn)
                frames[USER] = pd.DataFrame(matrix, index=ids)
            features = dataio.features_from_frames(
                frames, self.interner, cold, logger=self.logger, **kwargs
            )
        elif fmt == "vectors":
            features = dataio.load_feature_table(
                user_fn, item_fn, self.interner, cold, logger=self.logger, **kwargs
            )
        else:
            raise ValueError(f"Unknown format '{fmt}', select from 'vectors', 'ldac'.")
        self._features = features
        self._updated.add("features")
        self._record(
            "setup_features",
            user_fn=user_fn,
            item_fn=item_fn,
            fmt=fmt,
            warm_optional=warm_optional,
            normalize=normalize,
            vocab_size=vocab_size,
        )

    def setup_layerreps(self, K=3, S=25, seed=0, chunk_size=256):
        """Pre-compute the pooled layer representations of all warm nodes.

        Parameters
        ----------
        K : int
            Walk length, by default 3.
        S : int
            Walks per node, by default 25.
        seed : int
        chunk_size : int
            Root nodes per parallel task.
        """
        cfg = walker.WalkConfig(K=K, S=S, seed=seed)
        self.logger.info(f"Preparing layer representations ({cfg}).")
        self._layerreps = walker.precompute_all(
            self.graph,
            self.embeddings,
            cfg,
            threads=self.threads,
            chunk_size=chunk_size,
            interner=self.interner,
            logger=self.logger,
        )
        self._updated.add("layerreps")
        self._record("setup_layerreps", K=K, S=S, seed=seed, chunk_size=chunk_size)

    def setup_training(
        self,
        lr=0.001,
        batch_size=1024,
        l2=1e-5,
        tau=0.5,
        n_neg=4,
        max_epochs=100,
        patience=10,
        seed=0,
        detach_patch_input=False,
        hidden=(200,),
        out_dim=200,
        layer_init="root",
    ):
        """Train GWarmer and the Patching Networks jointly with early stopping
        on validation AUC.

        Adds model components:

        * **params**: parameters of the best validation epoch
        * **train_log**: per-epoch loss, validation AUC and duration

        If training diverges the last good parameters are written to
        ``model/params_last_good.gpm`` before the error is raised.

        Parameters
        ----------
        lr : float
            Adam learning rate, by default 0.001.
        batch_size : int
            Training examples per step, by default 1024.
        l2 : float
            L2 coefficient, by default 1e-5.
        tau : float
            Masking ratio of the warm representation, by default 0.5.
        n_neg : int
            Sampled negatives per positive, by default 4.
        max_epochs, patience : int
            Epoch limit and early stopping patience.
        seed : int
        detach_patch_input : bool
            Stop the patching gradient at the warm representation.
        hidden : tuple of int
            Hidden layer sizes of the patch networks, by default (200,).
        out_dim : int
            Output size of the patch networks, by default 200.
        layer_init : {"root", "uniform"}
            Initial layer weights. "root" starts GWarmer at the plain
            embedding inner product, "uniform" at equal weights 1/(K+1).
        """
        cfg = trainer.TrainConfig(
            lr=lr,
            batch_size=batch_size,
            l2=l2,
            tau=tau,
            n_neg=n_neg,
            max_epochs=max_epochs,
            patience=patience,
            seed=seed,
            detach_patch_input=detach_patch_input,
            hidden=hidden,
            out_dim=out_dim,
            layer_init=layer_init,
        )
        params, records = self._train(cfg)
        self._params = params
        self._train_log = records
        self._updated.add("params")
        best = max(records, key=lambda r: r.val_auc)
        self._record(
            "setup_training",
            lr=lr,
            batch_size=batch_size,
            l2=l2,
            tau=tau,
            n_neg=n_neg,
            max_epochs=max_epochs,
            patience=patience,
            seed=seed,
            detach_patch_input=detach_patch_input,
            hidden=list(cfg.hidden),
            out_dim=out_dim,
            layer_init=layer_init,
        )
        self.set_config("results", "best_val_auc", float(best.val_auc))
        self.set_config("results", "best_epoch", int(best.epoch))
        self.set_config("results", "epochs", len(records))

    def _train(self, cfg):
        split, reps, features = self.split, self.layerreps, self.features
        params = network.ModelParams.init(
            reps.K,
            reps.dim,
            features.dim(USER),
            features.dim(ITEM),
            hidden=cfg.hidden,
            out_dim=cfg.out_dim,
            seed=cfg.seed,
            layer_init=cfg.layer_init,
        )
        known = trainer.PairSet(*split.pairs(("embed", "train")), split.n_items)
        val_known = trainer.PairSet(
            *split.pairs(("embed", "train", "val")), split.n_items
        )
        val = trainer.make_validation_set(
            *split.partition("val"),
            np.arange(split.n_items),
            val_known,
            trainer.make_rngs(cfg.seed)["validation"],
            logger=self.logger,
        )
        try:
            return trainer.fit(
                split.partition("train"),
                val,
                reps,
                features,
                params,
                cfg,
                self.graph.warm_nodes(ITEM),
                known,
                lambda p: scoring.HybridScorer(p, reps, features),
                logger=self.logger,
            )
        except NumericError as err:
            if err.last_good is not None and self._write:
                fn = self._path("last_good")
                network.write_checkpoint(fn, err.last_good)
                self.logger.error(f"Last good parameters written to {fn}.")
            raise

    ## EVALUATION METHODS

    def scorer(self, baseline=None, seed=0):
        """Return the GPatch scorer or a baseline scorer.

        Parameters
        ----------
        baseline : {None, "inner_product", "content", "random"}
        seed : int
            Seed of the random baseline.
        """
        if baseline is None or baseline == "gpatch":
            return scoring.HybridScorer(self.params, self.layerreps, self.features)
        if baseline == scoring.InnerProductScorer.name:
            return scoring.InnerProductScorer(self.embeddings)
        if baseline == scoring.ContentScorer.name:
            return scoring.ContentScorer(self.features)
        if baseline == scoring.RandomScorer.name:
            return scoring.RandomScorer(self.split.n_items, seed=seed)
        raise ValueError(
            f"Unknown baseline '{baseline}', select from {list(scoring.BASELINES)}."
        )

    def evaluate(
        self, modes=evaluator.MODES, N=20, baseline=None, partition="test", seed=0
    ):
        """Evaluate on the all-ranking tasks of ``modes``.

        Parameters
        ----------
        modes : str or list of str
            Any of "hybrid", "warm" and "cold".
        N : int
            Cutoff, by default 20.
        baseline : str, optional
            Evaluate a baseline scorer instead of GPatch.
        partition : {"test", "val"}
        seed : int
            Seed of the random baseline.

        Returns
        -------
        reports : list of MetricReport
        """
        modes = [modes] if isinstance(modes, str) else list(modes)
        scorer = self.scorer(baseline, seed=seed)
        reports = []
        for mode in modes:
            task = evaluator.make_task(self.split, mode, N=N, partition=partition)
            if task.users.size == 0:
                self.logger.warning(f"No {partition} users in the {mode} task.")
                continue
            report = evaluator.evaluate(
                scorer,
                task,
                threads=self.threads,
                interner=self.interner,
                logger=self.logger,
            )
            if baseline is None:
                report.auc = self.get_config("results", "best_val_auc")
            self.logger.info(f"{scorer.name}: {report}")
            self._reports[mode if baseline is None else f"{mode}_{baseline}"] = report
            reports.append(report)
        self._updated.add("eval")
        if baseline is None:
            self._record("evaluate", modes=modes, N=N, partition=partition)
        return reports

    def recommend(self, user_ids, N=20):
        """Top-N items for users given by external ID.

        Cold items are scored by the Patching Networks; embedding and
        training positives are excluded. Unknown users are logged and
        skipped.

        Returns
        -------
        recs : pandas.DataFrame
            Columns "user", "rank", "item" and "score".
        failed : list of str
            User IDs without recommendations.
        """
        scorer = self.scorer()
        task = evaluator.make_task(self.split, "hybrid", N=N)
        rows, failed = [], []
        for ext_id in user_ids:
            try:
                user = self.interner.index(USER, ext_id)
            except KeyError as err:
                self.logger.error(err.args[0])
                failed.append(ext_id)
                continue
            ranked = evaluator.rank_candidates(user, task, scorer)
            if ranked is None:
                failed.append(ext_id)
                continue
            scores = scorer.score_pairs(np.full(ranked.size, user), ranked)
            for rank, (item, score) in enumerate(zip(ranked, scores), start=1):
                rows.append((ext_id, rank, self.interner.ext_id(ITEM, item), score))
        recs = pd.DataFrame(rows, columns=["user", "rank", "item", "score"])
        return recs, failed

    def sweep_tau(self, taus=(0.1, 0.3, 0.5, 0.7, 0.9), N=20, **train_options):
        """Train one model per masking ratio and evaluate the hybrid task.

        Parameters
        ----------
        taus : list of float
        N : int
        train_options : dict
            Other :py:class:`~gpatch.workflows.trainer.TrainConfig` fields.

        Returns
        -------
        table : pandas.DataFrame
            Hybrid recall, precision and NDCG and best validation AUC per tau.
        """
        rows = []
        task = evaluator.make_task(self.split, "hybrid", N=N)
        for tau in taus:
            cfg = trainer.TrainConfig.from_dict({**train_options, "tau": tau})
            self.logger.info(f"Training with tau={tau}.")
            params, records = self._train(cfg)
            scorer = scoring.HybridScorer(params, self.layerreps, self.features)
            report = evaluator.evaluate(
                scorer, task, threads=self.threads, logger=self.logger
            )
            row = {m: report.mean(m) for m in evaluator.METRICS}
            row.update(tau=tau, best_val_auc=max(r.val_auc for r in records))
            rows.append(row)
        table = pd.DataFrame(rows, columns=["tau", *evaluator.METRICS, "best_val_auc"])
        self._eval_tables["sweep_tau"] = table
        self._updated.add("eval")
        return table

    def benchmark(self, repeats=3, n_pairs=10000, seed=0):
        """Time precomputed against recomputed scoring of random pairs.

        Returns
        -------
        report : BenchReport
        """
        rng = np.random.default_rng(seed)
        users = rng.integers(0, self.split.n_users, size=n_pairs)
        items = rng.integers(0, self.split.n_items, size=n_pairs)
        scorer = self.scorer()
        report = evaluator.bench_inference(
            scorer,
            self.params,
            self.layerreps,
            self.features,
            users,
            items,
            repeats=repeats,
            logger=self.logger,
        )
        self._eval_tables["bench"] = report.to_frame()
        self._updated.add("eval")
        return report

    def update(self, model_out=None, write=True, opt=None):
        """Run the ``opt`` methods on an existing model and write the result.

        Unlike the HydroMT update there is no region to check. A model opened
        in read-only mode is read completely and written to ``model_out``.

        Parameters
        ----------
        model_out : str, optional
            Destination root, required in read-only mode.
        write : bool, optional
            Write the updated model, by default True.
        opt : dict, optional
            Method names and their keyword arguments, run in order.
        """
        opt = self._check_get_opt(opt or {})
        if not self._write:
            if model_out is None:
                raise ValueError(
                    '"model_out" directory required when updating in "read-only" mode'
                )
            self.read()
            for name in ["split", "graph", "embeddings", "features", "layerreps"]:
                if getattr(self, f"_{name}") is not None:
                    self._updated.add(name)
            if self._params is not None:
                self._updated.add("params")
            self._stages.update(s for s in self._UPSTREAM if self.get_config(s))
            self.set_root(model_out, mode="w")
        for method, kwargs in opt.items():
            self._run_log_method(method, **(kwargs or {}))
        if write:
            self.write()

    # I/O
    def read(self):
        """Method to read the complete model from the root folder."""
        self.read_config()
        self.read_interner()
        self.read_split()
        self.read_graph()
        self.read_embeddings()
        self.read_features()
        self.read_layerreps()
        self.read_params()
        self.logger.info("Model read")

    def write(self):
        """Method to write the updated components, digests and run.ini."""
        if not self._write:
            raise IOError("Model opened in read-only mode")
        self.logger.info(f"Write model data to {self.root}")
        if "split" in self._updated:
            self.write_split()
        if "graph" in self._updated:
            self.write_graph()
        if "embeddings" in self._updated:
            self.write_embeddings()
        if "features" in self._updated:
            self.write_features()
        if "layerreps" in self._updated:
            self.write_layerreps()
        if "params" in self._updated:
            self.write_params()
        if "eval" in self._updated:
            self.write_eval()
        for stage in self._stages:
            upstream = {}
            for key in self._UPSTREAM.get(stage, []):
                rel = self._FILES[key]
                if isfile(self._path(key)):
                    upstream[rel] = self.get_config("digests", rel) or file_digest(
                        self._path(key)
                    )
            if upstream:
                self.set_config(stage, "upstream", upstream)
        self.set_config(
            "versions",
            {
                "gpatch": __version__,
                "hydromt": hydromt.__version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "pandas": pd.__version__,
                "xarray": xr.__version__,
                "dask": dask.__version__,
            },
        )
        self.write_config()
        self._updated.clear()
        self._stages.clear()

    def read_interner(self):
        """Read the external IDs at <root/graph/ids.tsv>."""
        fn = self._path("ids")
        if isfile(fn):
            self._verify(["ids"], "setup_split")
            df = pd.read_csv(fn, sep="\t", dtype=str, keep_default_na=False)
            self._interner = graph.IdInterner(
                users=df.loc[df["side"] == USER, "id"],
                items=df.loc[df["side"] == ITEM, "id"],
            )

    def read_split(self):
        """Read the split manifest and cold item list at <root/split>."""
        fn = self._path("manifest")
        if isfile(fn):
            self._verify(["manifest", "cold_items"], "setup_split")
            self.logger.info(f"Read split from {fn}")
            self._split = dataio.read_split(
                fn,
                self._path("cold_items"),
                self.interner,
                seed=self.get_config("setup_split", "seed", fallback=0),
                logger=self.logger,
            )

    def write_split(self):
        """Write the split at <root/split>."""
        if not self._write:
            raise IOError("Model opened in read-only mode")
        self.logger.info("Writing split files.")
        dataio.write_split(
            self._path("manifest"), self._path("cold_items"), self.split, self.interner
        )
        self._stamp("manifest", "cold_items")

    def read_graph(self):
        """Read the walk graph at <root/graph>."""
        fn = self._path("graph")
        if isfile(fn):
            self._verify(["graph"], "setup_split")
            self._graph = graph.read_graph(fn)

    def write_graph(self):
        """Write the walk graph and external IDs at <root/graph>."""
        if not self._write:
            raise IOError("Model opened in read-only mode")
        self.logger.info("Writing graph files.")
        graph.write_graph(self._path("graph"), self.graph)
        ids = pd.DataFrame(
            {
                "side": [USER] * self.interner.n_users + [ITEM] * self.interner.n_items,
                "id": self.interner.ids(USER) + self.interner.ids(ITEM),
            }
        )
        ids.to_csv(self._path("ids"), sep="\t", index=False)
        self._stamp("graph", "ids")

    def read_embeddings(self):
        """Read the embeddings at <root/embeddings>."""
        fns = [self._path("user_embeddings"), self._path("item_embeddings")]
        if all(isfile(fn) for fn in fns):
            self._verify(["user_embeddings", "item_embeddings"], "setup_embeddings")
            self._embeddings = embedder.load_embeddings(
                *fns, self.interner, logger=self.logger
            )

    def write_embeddings(self):
        """Write the embeddings at <root/embeddings> in binary format."""
        if not self._write:
            raise IOError("Model opened in read-only mode")
        self.logger.info("Writing embedding files.")
        embedder.write_embeddings(
            self._path("user_embeddings"),
            self._path("item_embeddings"),
            self.embeddings,
            self.interner,
        )
        self._stamp("user_embeddings", "item_embeddings")

    def read_features(self):
        """Read the content features at <root/features>."""
        fns = [self._path("user_features"), self._path("item_features")]
        if all(isfile(fn) for fn in fns):
            self._verify(["user_features", "item_features"], "setup_features")
            split = self.split
            self._features = dataio.load_feature_table(
                *fns,
                self.interner,
                cold={USER: split.cold_users, ITEM: split.cold_items},
                warm_optional=True,
                logger=self.logger,
            )

    def write_features(self):
        """Write the content features at <root/features>."""
        if not self._write:
            raise IOError("Model opened in read-only mode")
        self.logger.info("Writing content feature files.")
        dataio.write_features(
            self._path("user_features"),
            self._path("item_features"),
            self.features,
            self.interner,
        )
        self._stamp("user_features", "item_features")

    def read_layerreps(self):
        """Read the layer representations at <root/layerreps>."""
        fn = self._path("layerreps")
        if isfile(fn):
            self._verify(["layerreps"], "setup_layerreps")
            self.logger.info(f"Read layer representations from {fn}")
            self._layerreps = walker.read_layerreps(fn)

    def write_layerreps(self):
        """Write the layer representations at <root/layerreps>."""
        if not self._write:
            raise IOError("Model opened in read-only mode")
        self.logger.info("Writing layer representation file.")
        walker.write_layerreps(self._path("layerreps"), self.layerreps)
        self._stamp("layerreps")

    def read_params(self):
        """Read the checkpoint and training log at <root/model>."""
        fn = self._path("params")
        if isfile(fn):
            self._verify(["params"], "setup_training")
            self._params = network.read_checkpoint(fn)
        if isfile(self._path("train_log")):
            self._train_log = trainer.read_train_log(self._path("train_log"))

    def write_params(self):
        """Write the checkpoint and training log at <root/model>."""
        if not self._write:
            raise IOError("Model opened in read-only mode")
        self.logger.info("Writing model checkpoint.")
        network.write_checkpoint(self._path("params"), self.params)
        trainer.write_train_log(self._path("train_log"), self._train_log or [])
        self._stamp("params", "train_log")

    def write_eval(self):
        """Write metric reports and tables at <root/eval>."""
        if not self._write:
            raise IOError("Model opened in read-only mode")
        self.logger.info("Writing evaluation files.")
        by_scorer = {}
        for name, report in self._reports.items():
            by_scorer.setdefault(report.scorer, []).append(report)
            fn = join("eval", f"per_user_{name}.csv")
            report.per_user.to_csv(self._path(fn), index=False, float_format="%.10g")
            self._stamp(fn)
        for name, reports in by_scorer.items():
            suffix = "" if name == scoring.HybridScorer.name else f"_{name}"
            txt_fn = join("eval", f"report{suffix}.txt")
            csv_fn = join("eval", f"report{suffix}.csv")
            evaluator.write_reports(self._path(txt_fn), self._path(csv_fn), reports)
            self._stamp(txt_fn, csv_fn)
        for name, table in self._eval_tables.items():
            fn = join("eval", f"{name}.csv")
            table.to_csv(self._path(fn), index=False, float_format="%.10g")
            self._stamp(fn)

    ## GPATCH specific data and methods

    def _path(self, key):
        rel = self._FILES.get(key, key)
        return join(self.root, *rel.replace(os.sep, "/").split("/"))

    def _record(self, section, **kwargs):
        """Store the arguments of a stage as its run.ini section."""
        self.set_config(section, {k: v for k, v in kwargs.items() if v is not None})
        self._stages.add(section)

    def _stamp(self, *keys):
        """Record the digests of freshly written artifacts."""
        for key in keys:
            rel = self._FILES.get(key, key).replace(os.sep, "/")
            self.set_config("digests", rel, file_digest(self._path(key)))

    def _verify(self, keys, section):
        """Check artifacts against the digests in run.ini.

        An artifact is stale when it changed after it was written or when an
        artifact its stage used changed afterwards.
        """
        stale = []
        for key in keys:
            rel = self._FILES[key]
            recorded = self.get_config("digests", rel)
            if recorded is not None and file_digest(self._path(key)) != recorded:
                stale.append(f"{rel} was modified after it was written")
        upstream = self.get_config(section, "upstream", fallback={}) or {}
        for rel, digest in upstream.items():
            fn = self._path(rel)
            if not isfile(fn) or file_digest(fn) != digest:
                stale.append(f"{rel} changed after {section} ran")
        if stale:
            msg = f"Stale artifacts: {'; '.join(stale)}. Rerun the stage or use force."
            if not self.force:
                raise DataError(msg)
            self.logger.warning(msg)

    def _component(self, name, stage):
        value = getattr(self, f"_{name}")
        if value is None and self._read:
            getattr(self, f"read_{name}")()
            value = getattr(self, f"_{name}")
        if value is None:
            raise DataError(f"No {name} found, run {stage} first.")
        return value

    @property
    def interner(self):
        """External ID to dense index maps."""
        return self._component("interner", "setup_split")

    @property
    def split(self):
        """Cold-start split of the interactions."""
        return self._component("split", "setup_split")

    @property
    def graph(self):
        """Bipartite walk graph of the embed partition."""
        return self._component("graph", "setup_split")

    @property
    def embeddings(self):
        return self._component("embeddings", "setup_embeddings")

    @property
    def features(self):
        return self._component("features", "setup_features")

    @property
    def layerreps(self):
        """Pooled layer representations of the warm nodes."""
        return self._component("layerreps", "setup_layerreps")

    @property
    def params(self):
        """Trained GPatch parameters."""
        if self._params is None and self._read:
            self.read_params()
        if self._params is None:
            raise DataError("No params found, run setup_training first.")
        return self._params

    @property
    def train_log(self):
        if self._train_log is None and self._read:
            self.read_params()
        return self._train_log or []

    @property
    def reports(self):
        """Metric reports of this session keyed by task (and baseline)."""
        return self._reports
