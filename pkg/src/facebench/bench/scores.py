"""How faithful an estimator is to the true error across reconstruction methods."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from ..errors import DataError


def _aligned(true_means, est_means):
    t = np.asarray(true_means, dtype=np.float64)
    e = np.asarray(est_means, dtype=np.float64)
    if t.shape != e.shape:
        raise DataError(f"length mismatch: {len(t)} true vs {len(e)} estimated")
    if len(t) < 2:
        raise DataError("need at least 2 methods")
    return t, e


def rate_of_inconsistency(true_means, est_means) -> float:
    """Fraction of method pairs whose estimated order disagrees with the true order.

    A tie on one side against a strict order on the other counts as a disagreement.
    """
    t, e = _aligned(true_means, est_means)
    pairs = list(combinations(range(len(t)), 2))
    bad = sum(np.sign(e[i] - e[j]) != np.sign(t[i] - t[j]) for i, j in pairs)
    return bad / len(pairs)


def pearson(true_means, est_means, top_k: int | None = None) -> float:
    """Pearson r, optionally over the ``top_k`` methods with smallest true error."""
    t, e = _aligned(true_means, est_means)
    if top_k is not None:
        if top_k < 2:
            raise DataError("top_k must be >= 2")
        keep = np.argsort(t, kind="stable")[:top_k]
        t, e = t[keep], e[keep]
    tc, ec = t - t.mean(), e - e.mean()
    st, se = np.sqrt((tc ** 2).sum()), np.sqrt((ec ** 2).sum())
    if st == 0 or se == 0:
        raise DataError("zero variance; correlation undefined")
    return float(np.clip((tc * ec).sum() / (st * se), -1.0, 1.0))


def ranks(values) -> list[int]:
    """1-based competition ranks (smaller value = better rank)."""
    v = np.asarray(values, dtype=np.float64)
    return [int((v < x).sum()) + 1 for x in v]


@dataclass
class BenchmarkMetrics:
    estimator: str
    methods: list
    est_means: list
    true_means: list | None = None
    pearson_r: float | None = None
    pearson_r_topk: float | None = None
    top_k: int | None = None
    rate_of_inconsistency: float | None = None
    est_ranks: list = field(default_factory=list)
    true_ranks: list | None = None
    rank_disagreement: list | None = None


def benchmark_metrics(estimator: str, methods, est_means, true_means=None, top_k: int = 5) -> BenchmarkMetrics:
    m = BenchmarkMetrics(estimator, list(methods), [float(x) for x in est_means])
    m.est_ranks = ranks(est_means)
    if true_means is None or len(methods) < 2:
        return m
    m.true_means = [float(x) for x in true_means]
    m.true_ranks = ranks(true_means)
    m.rank_disagreement = [a != b for a, b in zip(m.est_ranks, m.true_ranks)]
    m.rate_of_inconsistency = rate_of_inconsistency(true_means, est_means)
    k = min(top_k, len(methods))
    m.top_k = k
    try:
        m.pearson_r = pearson(true_means, est_means)
        m.pearson_r_topk = pearson(true_means, est_means, k) if k >= 2 else None
    except DataError:
        pass
    return m
