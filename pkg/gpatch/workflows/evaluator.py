# -*- coding: utf-8 -*-
"""All-ranking evaluation, significance testing and inference benchmarks."""

import math
import time
import logging
from collections import namedtuple
from dataclasses import dataclass, field

import dask
import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy import stats

from ..errors import DataError
from .trainer import auc_score
from .scoring import score_pairs_recompute

logger = logging.getLogger(__name__)

__all__ = [
    "MODES",
    "RankingTask",
    "MetricReport",
    "BenchReport",
    "TTestResult",
    "make_task",
    "rank_users",
    "rank_candidates",
    "metrics_at_n",
    "auc_score",
    "evaluate",
    "paired_ttest",
    "bench_inference",
    "write_reports",
    "read_per_user",
]

MODES = ("hybrid", "warm", "cold")
METRICS = ("recall", "precision", "ndcg")

TTestResult = namedtuple("TTestResult", ["statistic", "pvalue", "degenerate"])


def _pair_matrix(users, items, shape):
    data = np.ones(len(users), dtype=bool)
    mat = sp.csr_matrix((data, (users, items)), shape=shape)
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


@dataclass
class RankingTask:
    """Candidates, ground truth and exclusions of one ranking task.

    Attributes
    ----------
    mode : {"hybrid", "warm", "cold"}
    N : int
        Cutoff of the ranked lists.
    candidates : numpy.ndarray
        Sorted dense indices of the candidate items.
    truth : scipy.sparse.csr_matrix
        Boolean users x items matrix of ground truth pairs.
    exclusions : scipy.sparse.csr_matrix
        Boolean users x items matrix of pairs removed from the rankings.
    """

    mode: str
    N: int
    candidates: np.ndarray
    truth: sp.csr_matrix
    exclusions: sp.csr_matrix

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"Unknown mode '{self.mode}', select from {MODES}.")
        if self.N < 1:
            raise ValueError(f"Cutoff N should be >= 1, got {self.N}.")
        if self.truth.multiply(self.exclusions).nnz:
            raise DataError("Ground truth overlaps the excluded pairs.")
        in_candidates = np.zeros(self.truth.shape[1], dtype=bool)
        in_candidates[self.candidates] = True
        if not in_candidates[self.truth.indices].all():
            raise DataError("Ground truth items outside the candidate set.")

    @property
    def users(self):
        """Users with at least one ground truth item."""
        return np.flatnonzero(np.diff(self.truth.indptr) > 0)

    def truth_of(self, user):
        return self.truth.indices[self.truth.indptr[user] : self.truth.indptr[user + 1]]

    def excluded_of(self, user):
        ex = self.exclusions
        return ex.indices[ex.indptr[user] : ex.indptr[user + 1]]


def make_task(split, mode="hybrid", N=20, partition="test"):
    """Create the ranking task of ``mode`` on a split.

    Hybrid ranks all items, warm ranks warm items for warm users and cold
    ranks cold items. Embedding and training positives are excluded.
    """
    if mode not in MODES:
        raise ValueError(f"Unknown mode '{mode}', select from {MODES}.")
    shape = (split.n_users, split.n_items)
    users, items = split.partition(partition)
    if mode == "hybrid":
        candidates = np.arange(split.n_items)
        keep = np.ones(users.size, dtype=bool)
    elif mode == "warm":
        candidates = np.flatnonzero(~split.cold_items)
        keep = ~split.cold_items[items] & ~split.cold_users[users]
    else:
        candidates = np.flatnonzero(split.cold_items)
        keep = split.cold_items[items]
    ex_users, ex_items = split.pairs(("embed", "train"))
    return RankingTask(
        mode=mode,
        N=int(N),
        candidates=candidates,
        truth=_pair_matrix(users[keep], items[keep], shape),
        exclusions=_pair_matrix(ex_users, ex_items, shape),
    )


def rank_users(scorer, task, users, logger=logger):
    """Top-N items per user, best first.

    Scores are sorted descending with a stable sort over the ascending
    candidate indices, so ties keep item index order. Excluded items are
    dropped. Users without any remaining candidate get ``None``.
    """
    users = np.asarray(users, dtype=np.int64)
    scores = scorer.score_users(users, task.candidates)
    out = []
    for row, user in enumerate(users):
        ranked = task.candidates[np.argsort(-scores[row], kind="stable")]
        excluded = task.excluded_of(user)
        if excluded.size:
            ranked = ranked[~np.isin(ranked, excluded)]
        if ranked.size == 0:
            logger.warning(f"User {user} has no {task.mode} candidates, skipped.")
            out.append(None)
        else:
            out.append(ranked[: task.N])
    return out


def rank_candidates(user, task, scorer):
    """Top-N items of a single user, see :py:func:`rank_users`."""
    return rank_users(scorer, task, [user])[0]


def metrics_at_n(ranked, truth, N):
    """Recall, precision and NDCG at cutoff ``N`` with binary gains.

    Parameters
    ----------
    ranked : sequence of int
        Ranked items, best first.
    truth : collection of int
        Ground truth items.
    N : int

    Returns
    -------
    recall, precision, ndcg : float
        NaN for all three if ``truth`` is empty.
    """
    if N < 1:
        raise ValueError(f"Cutoff N should be >= 1, got {N}.")
    truth = set(int(i) for i in truth)
    if not truth:
        return math.nan, math.nan, math.nan
    hits, dcg = 0, 0.0
    for rank, item in enumerate(list(ranked)[:N]):
        if int(item) in truth:
            hits += 1
            dcg += 1.0 / math.log2(rank + 2)
    idcg = 0.0
    for rank in range(min(N, len(truth))):
        idcg += 1.0 / math.log2(rank + 2)
    return hits / len(truth), hits / N, dcg / idcg


class MetricReport:
    """Per-user and mean ranking metrics of one task.

    Parameters
    ----------
    mode : str
        Task mode.
    N : int
        Cutoff.
    per_user : pandas.DataFrame
        Columns "user", "recall", "precision" and "ndcg".
    scorer : str, optional
        Name of the scorer.
    auc : float, optional
    timing : dict, optional
    """

    def __init__(self, mode, N, per_user, scorer=None, auc=None, timing=None):
        self.mode = mode
        self.N = int(N)
        self.per_user = per_user
        self.scorer = scorer
        self.auc = auc
        self.timing = timing or {}

    def __repr__(self):
        means = ", ".join(f"{m}={self.mean(m):.4f}" for m in METRICS)
        n_users = len(self.per_user)
        return f"MetricReport({self.mode}@{self.N}, n_users={n_users}, {means})"

    def mean(self, metric):
        values = self.per_user[metric].dropna()
        return float(values.mean()) if len(values) else math.nan

    def stderr(self, metric):
        values = self.per_user[metric].dropna()
        if len(values) < 2:
            return math.nan
        return float(values.std(ddof=1) / math.sqrt(len(values)))

    def records(self):
        """Frame of ``metric, mode, N, mean, stderr`` records."""
        rows = [
            dict(metric=m, mean=self.mean(m), stderr=self.stderr(m)) for m in METRICS
        ]
        if self.auc is not None:
            rows.append(dict(metric="auc", mean=self.auc, stderr=math.nan))
        df = pd.DataFrame(rows)
        df.insert(1, "mode", self.mode)
        df.insert(2, "N", self.N)
        return df[["metric", "mode", "N", "mean", "stderr"]]


@dataclass
class BenchReport:
    n_scorings: int
    precomputed_s: list = field(default_factory=list)
    recompute_s: list = field(default_factory=list)
    max_abs_diff: float = 0.0

    @property
    def ratio(self):
        """Median recompute time over median precomputed time."""
        return float(np.median(self.recompute_s) / np.median(self.precomputed_s))

    def to_frame(self):
        return pd.DataFrame(
            {
                "repeat": np.arange(1, len(self.precomputed_s) + 1),
                "precomputed_s": self.precomputed_s,
                "recompute_s": self.recompute_s,
            }
        )


def _evaluate_block(scorer, task, users):
    rows = []
    for user, ranked in zip(users, rank_users(scorer, task, users)):
        if ranked is None:
            continue
        rows.append((int(user),) + metrics_at_n(ranked, task.truth_of(user), task.N))
    return rows


def evaluate(scorer, task, threads=1, block_size=256, interner=None, logger=logger):
    """Evaluate ``scorer`` on ``task`` for every user with ground truth.

    Users are processed in blocks, in parallel with the dask threaded
    scheduler when ``threads > 1``; blocks are gathered in user order.

    Parameters
    ----------
    scorer : Scorer
    task : RankingTask
    threads : int, optional
    block_size : int, optional
        Users per task.
    interner : IdInterner, optional
        Report external user IDs instead of dense indices.

    Returns
    -------
    report : MetricReport
    """
    users = task.users
    logger.info(
        f"Evaluating {scorer.name or type(scorer).__name__} on the {task.mode} task "
        f"for {users.size} users @ {task.N}."
    )
    tasks = [
        dask.delayed(_evaluate_block)(scorer, task, users[i : i + block_size])
        for i in range(0, users.size, block_size)
    ]
    scheduler = "threads" if threads > 1 else "sync"
    blocks = dask.compute(*tasks, scheduler=scheduler, num_workers=threads)
    rows = [row for block in blocks for row in block]
    per_user = pd.DataFrame(rows, columns=("user",) + METRICS)
    if interner is not None:
        ids = interner.ids("user")
        per_user["user"] = [ids[u] for u in per_user["user"]]
    return MetricReport(task.mode, task.N, per_user, scorer=scorer.name)


def paired_ttest(a, b, logger=logger):
    """Two-sided paired t-test of per-user metrics ``a`` and ``b``.

    If the differences have zero variance the test is degenerate: the
    p-value is 1 when the means are equal and 0 otherwise.

    Returns
    -------
    result : TTestResult
        (statistic, pvalue, degenerate)
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"Paired samples differ in shape: {a.shape} and {b.shape}.")
    if a.size < 2:
        raise ValueError("Paired t-test needs at least 2 pairs.")
    diff = a - b
    if np.ptp(diff) == 0:
        logger.warning("Differences have zero variance, t-test is degenerate.")
        if diff[0] == 0:
            return TTestResult(0.0, 1.0, True)
        return TTestResult(math.copysign(math.inf, diff[0]), 0.0, True)
    res = stats.ttest_rel(a, b)
    return TTestResult(float(res.statistic), float(res.pvalue), False)


def bench_inference(
    scorer, params, reps, features, users, items, repeats=3, logger=logger
):
    """Time precomputed-table scoring against the full recompute path.

    Parameters
    ----------
    scorer : HybridScorer
        Scorer built from ``params``, ``reps`` and ``features``.
    users, items : numpy.ndarray
        Pairs to score.
    repeats : int
        Number of timed runs of each path.

    Returns
    -------
    report : BenchReport
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    report = BenchReport(n_scorings=users.size)
    for _ in range(max(int(repeats), 1)):
        t0 = time.perf_counter()
        fast = scorer.score_pairs(users, items)
        t1 = time.perf_counter()
        full = score_pairs_recompute(users, items, params, reps, features)
        t2 = time.perf_counter()
        report.precomputed_s.append(t1 - t0)
        report.recompute_s.append(t2 - t1)
    report.max_abs_diff = float(np.max(np.abs(fast - full))) if users.size else 0.0
    logger.info(
        f"Scored {users.size} pairs: "
        f"precomputed {np.median(report.precomputed_s):.4f}s, "
        f"recompute {np.median(report.recompute_s):.4f}s (ratio {report.ratio:.1f}), "
        f"max abs diff {report.max_abs_diff:.3g}."
    )
    return report


def write_reports(txt_fn, csv_fn, reports):
    """Write reports as a plain-text table and as ``metric,mode,N,mean,stderr``
    records."""
    df = pd.concat([r.records() for r in reports], ignore_index=True)
    df.to_csv(csv_fn, index=False, float_format="%.10g")
    with open(txt_fn, "w") as fp:
        fp.write(df.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
        fp.write("\n")


def read_per_user(fn, metric):
    """Read one metric column of a per-user CSV, indexed by user."""
    df = pd.read_csv(fn, dtype={"user": str})
    if metric not in df.columns:
        raise DataError(f"{fn}: no column '{metric}', found {list(df.columns)}.")
    return df.set_index("user")[metric]
