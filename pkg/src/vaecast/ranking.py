"""Nonparametric comparison of forecasters over many datasets: Friedman
omnibus test, pairwise Wilcoxon signed-rank tests for grouping bands, per
dataset ranking via one-sided paired t-tests, and average-rank aggregation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import chdtrc, stdtr
from scipy.stats import rankdata

DEFAULT_ALPHA = 0.05


@dataclass
class ScoreMatrix:
    """Per-run scores for k models on n datasets (lower is better)."""

    models: list[str]
    datasets: list[str]
    scores: np.ndarray  # [k, n, r]

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 3:
            raise ValueError("scores must be [models, datasets, runs]")
        k, n, r = self.scores.shape
        if k != len(self.models) or n != len(self.datasets):
            raise ValueError("scores shape does not match model/dataset names")
        if r < 1:
            raise ValueError("need at least one run per cell")
        if not np.isfinite(self.scores).all() or (self.scores < 0).any():
            raise ValueError("scores must be finite and >= 0")
        if len(set(self.models)) != k or len(set(self.datasets)) != n:
            raise ValueError("model and dataset names must be unique")

    @property
    def mean_scores(self) -> np.ndarray:
        """Per (model, dataset) mean over runs, [k, n]."""
        return self.scores.mean(axis=2)

    @classmethod
    def from_json_dict(cls, payload: dict) -> "ScoreMatrix":
        try:
            models = list(payload["models"])
            datasets = list(payload["datasets"])
            raw = payload["scores"]
        except KeyError as exc:
            raise ValueError(f"score matrix is missing field {exc}") from exc
        runs = {len(cell) for row in raw for cell in row}
        if len(runs) != 1:
            raise ValueError(f"ragged score matrix: run counts {sorted(runs)}")
        return cls(models=models, datasets=datasets, scores=np.asarray(raw))

    def to_json_dict(self) -> dict:
        return {"models": self.models, "datasets": self.datasets,
                "scores": self.scores.tolist()}


# ---------------------------------------------------------------------------
# Friedman omnibus test


@dataclass(frozen=True)
class FriedmanResult:
    statistic: float
    p_value: float
    mean_ranks: dict[str, float]

    def rejects(self, alpha: float = DEFAULT_ALPHA) -> bool:
        return self.p_value < alpha


def friedman_test(scores: np.ndarray, models: list[str] | None = None
                  ) -> FriedmanResult:
    """Friedman chi-square over a [k models, n datasets] score table.

    Models are ranked per dataset (average ranks on ties); the statistic is
    12n/(k(k+1)) * (sum_j Rbar_j^2 - k(k+1)^2/4) with a chi-square reference
    distribution on k - 1 degrees of freedom.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError("friedman_test expects a [models, datasets] table")
    k, n = scores.shape
    if k < 2 or n < 2:
        raise ValueError(f"need k >= 2 models and n >= 2 datasets, got {k} x {n}")
    ranks = np.empty_like(scores)
    for j in range(n):
        ranks[:, j] = rankdata(scores[:, j], method="average")
    mean_ranks = ranks.mean(axis=1)
    statistic = 12.0 * n / (k * (k + 1)) * \
        (float((mean_ranks ** 2).sum()) - k * (k + 1) ** 2 / 4.0)
    statistic = max(statistic, 0.0)
    p_value = float(chdtrc(k - 1, statistic))
    names = models if models is not None else [f"m{i}" for i in range(k)]
    return FriedmanResult(statistic=float(statistic), p_value=p_value,
                          mean_ranks=dict(zip(names, mean_ranks.tolist())))


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank test

EXACT_ENUMERATION_LIMIT = 20


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # W = min(W+, W-)
    p_value: float
    reject: bool
    exact: bool


def _signed_ranks(diffs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Average ranks of |d| and the sign vector, zeros already dropped."""
    ranks = rankdata(np.abs(diffs), method="average")
    return ranks, np.sign(diffs)


def _exact_p_value(ranks: np.ndarray, w_obs: float) -> float:
    """P(W+ <= w_obs) under uniform signs, doubled for the two-sided test.

    Uses a subset-sum count over doubled ranks (integers even with .5
    average ranks), equivalent to enumerating all 2^m sign assignments.
    """
    m = ranks.size
    doubled = np.rint(ranks * 2).astype(np.int64)
    counts = np.zeros(int(doubled.sum()) + 1, dtype=np.float64)
    counts[0] = 1.0
    for r2 in doubled:
        shifted = np.zeros_like(counts)
        shifted[r2:] = counts[:counts.size - r2]
        counts = counts + shifted
    threshold = int(math.floor(2.0 * w_obs + 1e-9))
    tail = counts[:threshold + 1].sum()
    return min(1.0, 2.0 * tail / (2.0 ** m))


def _normal_approx_p_value(ranks: np.ndarray, w_obs: float) -> float:
    """Two-sided normal approximation with tie and continuity corrections."""
    m = ranks.size
    mean = m * (m + 1) / 4.0
    var = m * (m + 1) * (2 * m + 1) / 24.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var -= float(((tie_counts ** 3 - tie_counts) / 48.0).sum())
    if var <= 0.0:
        return 1.0
    z = (w_obs - mean + 0.5) / math.sqrt(var)
    return min(1.0, 2.0 * 0.5 * (1.0 + math.erf(z / math.sqrt(2.0))))


def wilcoxon_signed_rank(a, b, alpha: float = DEFAULT_ALPHA) -> WilcoxonResult:
    """Two-sided paired test of 'median difference zero' between score vectors.

    Zero differences are dropped; |d| are ranked with average ranks; the
    statistic is W = min(W+, W-). The p-value is exact (full sign-assignment
    distribution) up to m = 20 pairs, then a tie-corrected normal
    approximation.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("wilcoxon expects two equal-length score vectors")
    diffs = a - b
    diffs = diffs[diffs != 0.0]
    if diffs.size == 0:
        return WilcoxonResult(statistic=0.0, p_value=1.0, reject=False, exact=True)
    ranks, signs = _signed_ranks(diffs)
    w_plus = float(ranks[signs > 0].sum())
    w_minus = float(ranks[signs < 0].sum())
    w = min(w_plus, w_minus)
    if diffs.size <= EXACT_ENUMERATION_LIMIT:
        p = _exact_p_value(ranks, w)
        exact = True
    else:
        p = _normal_approx_p_value(ranks, w)
        exact = False
    return WilcoxonResult(statistic=w, p_value=p, reject=p < alpha, exact=exact)


# ---------------------------------------------------------------------------
# one-sided paired t-test and per-dataset ranking


@dataclass(frozen=True)
class PairedTResult:
    t_statistic: float
    p_value: float
    a_better: bool


def paired_t_test_one_sided(a_runs, b_runs, alpha: float = DEFAULT_ALPHA
                            ) -> PairedTResult:
    """Test whether model A (lower mean score) beats model B across runs.

    d = b - a; t = mean(d) / (sd(d)/sqrt(r)) with Bessel's correction;
    one-sided p from the Student-t survival function on r - 1 degrees of
    freedom. Degenerate spread: sd = 0 with mean(d) > 0 counts as a win in
    every run (reject); sd = 0 with mean(d) = 0 is a tie.
    """
    a = np.asarray(a_runs, dtype=np.float64)
    b = np.asarray(b_runs, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired t-test expects equal-length run vectors")
    r = a.size
    if r < 2:
        raise ValueError("paired t-test needs at least two runs")
    d = b - a
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean > 0.0:
            return PairedTResult(t_statistic=math.inf, p_value=0.0, a_better=True)
        return PairedTResult(t_statistic=0.0 if mean == 0.0 else -math.inf,
                             p_value=1.0, a_better=False)
    t_stat = mean / (sd / math.sqrt(r))
    p = float(stdtr(r - 1, -t_stat))  # survival function of Student-t
    return PairedTResult(t_statistic=t_stat, p_value=p, a_better=p < alpha)


@dataclass
class RankResult:
    models: list[str]
    per_dataset: np.ndarray        # [k, n] integer ranks, ties share rank
    average: dict[str, float]
    ordering: list[str]            # sorted by average rank, name breaks ties


def per_dataset_ranks(matrix: ScoreMatrix, alpha: float = DEFAULT_ALPHA
                      ) -> RankResult:
    """Rank models within each dataset by counting significant wins.

    For every ordered pair with mean(A) < mean(B) a one-sided paired t-test
    decides whether A beats B; a model's rank is 1 plus the number of models
    that significantly beat it, so non-separated models share a rank.
    """
    k, n, r = matrix.scores.shape
    if r < 2:
        raise ValueError("per-dataset ranking needs at least two runs per cell")
    means = matrix.mean_scores
    ranks = np.ones((k, n), dtype=np.int64)
    for j in range(n):
        beats = np.zeros((k, k), dtype=bool)
        for ia in range(k):
            for ib in range(k):
                if ia == ib or means[ia, j] >= means[ib, j]:
                    continue
                res = paired_t_test_one_sided(matrix.scores[ia, j],
                                              matrix.scores[ib, j], alpha=alpha)
                beats[ia, ib] = res.a_better
        ranks[:, j] = 1 + beats.sum(axis=0)
    average = {name: float(ranks[i].mean()) for i, name in enumerate(matrix.models)}
    ordering = sorted(matrix.models, key=lambda name: (average[name], name))
    return RankResult(models=list(matrix.models), per_dataset=ranks,
                      average=average, ordering=ordering)


# ---------------------------------------------------------------------------
# critical-difference bands


@dataclass
class CdBands:
    ordering: list[str]            # models sorted by average rank
    average_ranks: dict[str, float]
    bands: list[list[str]]         # maximal contiguous indistinguishable groups
    friedman: FriedmanResult
    friedman_rejected: bool
    warning: str | None = None


def cd_bands(matrix: ScoreMatrix, alpha: float = DEFAULT_ALPHA) -> CdBands:
    """Group models whose pairwise performances are statistically alike.

    Models are ordered by average rank (from the per-dataset t-test ranking);
    a band is a maximal contiguous run in which every pair's Wilcoxon test
    over the per-dataset mean scores fails to reject at ``alpha``. If the
    Friedman test does not reject, a single all-model band is returned with a
    warning.
    """
    rank_result = per_dataset_ranks(matrix, alpha=alpha) if \
        matrix.scores.shape[2] >= 2 else None
    means = matrix.mean_scores
    friedman = friedman_test(means, models=matrix.models)
    if rank_result is not None:
        ordering = rank_result.ordering
        average = rank_result.average
    else:
        average = friedman.mean_ranks
        ordering = sorted(matrix.models, key=lambda name: (average[name], name))

    if not friedman.rejects(alpha):
        return CdBands(ordering=ordering, average_ranks=average,
                       bands=[list(ordering)], friedman=friedman,
                       friedman_rejected=False,
                       warning="Friedman test does not reject the hypothesis of "
                               "equivalent performance; band grouping is not "
                               "meaningful")

    index = {name: matrix.models.index(name) for name in ordering}
    k = len(ordering)
    similar = np.zeros((k, k), dtype=bool)
    for i in range(k):
        similar[i, i] = True
        for j in range(i + 1, k):
            res = wilcoxon_signed_rank(means[index[ordering[i]]],
                                       means[index[ordering[j]]], alpha=alpha)
            similar[i, j] = similar[j, i] = not res.reject

    intervals: list[tuple[int, int]] = []
    for start in range(k):
        end = start
        while end + 1 < k and all(similar[p, end + 1] for p in range(start, end + 1)):
            end += 1
        intervals.append((start, end))
    maximal = [iv for iv in intervals
               if not any(o[0] <= iv[0] and iv[1] <= o[1] and o != iv
                          for o in intervals)]
    bands = [ordering[s:e + 1] for s, e in maximal]
    return CdBands(ordering=ordering, average_ranks=average, bands=bands,
                   friedman=friedman, friedman_rejected=True)


def ranking_json(matrix: ScoreMatrix, alpha: float = DEFAULT_ALPHA) -> dict:
    """Everything a critical-difference diagram needs, as plain JSON data."""
    bands = cd_bands(matrix, alpha=alpha)
    payload = {
        "models": bands.ordering,
        "avg_ranks": {name: bands.average_ranks[name] for name in bands.ordering},
        "friedman": {"statistic": bands.friedman.statistic,
                     "p_value": bands.friedman.p_value,
                     "rejected": bands.friedman_rejected},
        "bands": bands.bands,
        "alpha": alpha,
    }
    if matrix.scores.shape[2] >= 2:
        ranks = per_dataset_ranks(matrix, alpha=alpha)
        payload["per_dataset_ranks"] = {
            ds: {name: int(ranks.per_dataset[i, j])
                 for i, name in enumerate(matrix.models)}
            for j, ds in enumerate(matrix.datasets)}
    if bands.warning:
        payload["warning"] = bands.warning
    return payload
