"""Evaluation: best fit rate, experiment summaries, rank-sum comparison.

BFR for one output channel is

    100 * (1 - sqrt( sum (y - yhat)^2 / sum (y - ybar)^2 ))

so 100 is a perfect fit and 0 means no better than predicting the channel
mean.  Values can be arbitrarily negative; -inf is used as a sentinel for
models whose free-run simulation overflows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, EmptyComparisonError, UndefinedBfrError
from .ssm import StateSpaceModel, simulate_outputs
from .sysid import TimeSeriesDataset

EXCLUDE_UM_F2L = "um_f2l"
EXCLUDE_NONE = "none"


def bfr(actual, predicted) -> float:
    actual = np.asarray(actual, dtype=float).ravel()
    predicted = np.asarray(predicted, dtype=float).ravel()
    if actual.shape != predicted.shape or actual.size == 0:
        raise DimensionError("actual and predicted must be equal-length and nonempty")
    denom = float(np.sum((actual - actual.mean()) ** 2))
    if denom == 0.0:
        raise UndefinedBfrError("reference signal is constant")
    num = float(np.sum((actual - predicted) ** 2))
    ratio = num / denom
    if not np.isfinite(ratio):
        return -np.inf
    return 100.0 * (1.0 - math.sqrt(ratio))


def worker_bfr(model: StateSpaceModel, data: TimeSeriesDataset) -> np.ndarray:
    """Per-output-channel BFR of the free-run simulation from x[0] = 0."""
    if data.nu != model.nu or data.ny != model.ny:
        raise DimensionError("model and dataset channel counts differ")
    Y = simulate_outputs(model, data.inputs)
    if not np.all(np.isfinite(Y)):
        return np.full(model.ny, -np.inf)
    return np.array([bfr(data.outputs[:, p], Y[:, p]) for p in range(model.ny)])


@dataclass(frozen=True, eq=False)
class RoundRecord:
    """Metrics for one communication round of one experiment seed.

    ``train_bfr``/``test_bfr`` are (M, ny) arrays; ``kappas`` is (M,) or
    None when no transforms were produced (round 0, or a failed round).
    ``overflow`` flags workers whose evaluation simulation diverged.
    """

    round: int
    train_bfr: np.ndarray
    test_bfr: np.ndarray | None = None
    global_stable: bool | None = None
    kappas: np.ndarray | None = None
    alignment_failed: bool = False
    overflow: np.ndarray | None = None

    def __post_init__(self):
        tb = np.atleast_2d(np.asarray(self.train_bfr, dtype=float))
        object.__setattr__(self, "train_bfr", tb)
        if self.test_bfr is not None:
            object.__setattr__(
                self, "test_bfr", np.atleast_2d(np.asarray(self.test_bfr, dtype=float))
            )
        if self.kappas is not None:
            object.__setattr__(self, "kappas", np.asarray(self.kappas, dtype=float))
        if self.overflow is None:
            object.__setattr__(self, "overflow", np.zeros(tb.shape[0], dtype=bool))
        else:
            object.__setattr__(self, "overflow", np.asarray(self.overflow, dtype=bool))

    @property
    def workers(self) -> int:
        return self.train_bfr.shape[0]


@dataclass(frozen=True, eq=False)
class ExperimentSummary:
    """Cross-seed aggregate of an experiment.

    ``um_count`` counts seeds whose final global model is unstable,
    ``f2l_count`` seeds with any final BFR below zero.  BFR statistics are
    means over workers at the final round, averaged across the seeds that
    survived the exclusion rule; ``dispersion`` is the sample standard
    deviation (ddof=1, 0.0 for a single seed).  ``empty`` marks summaries
    where every seed was excluded.
    """

    n_seeds: int
    included_seeds: tuple[int, ...]
    um_count: int
    f2l_count: int
    train_bfr_mean: np.ndarray | None
    train_bfr_dispersion: np.ndarray | None
    test_bfr_mean: np.ndarray | None
    test_bfr_dispersion: np.ndarray | None
    kappa_by_round: tuple[tuple[float, float, float], ...] = field(default=())

    @property
    def empty(self) -> bool:
        return len(self.included_seeds) == 0


def _final_record(records: list[RoundRecord]) -> RoundRecord:
    return records[-1]


def _seed_failures(records: list[RoundRecord]) -> tuple[bool, bool]:
    final = _final_record(records)
    um = final.global_stable is False
    values = [final.train_bfr]
    if final.test_bfr is not None:
        values.append(final.test_bfr)
    f2l = any(np.any(v < 0.0) for v in values)
    return um, f2l


def _dispersion(values: np.ndarray) -> np.ndarray:
    if values.shape[0] < 2:
        return np.zeros(values.shape[1])
    return np.std(values, axis=0, ddof=1)


def summarize(per_seed_records: list[list[RoundRecord]], exclusion: str = EXCLUDE_UM_F2L) -> ExperimentSummary:
    """Aggregate per-seed round records into an experiment summary."""
    if exclusion not in (EXCLUDE_UM_F2L, EXCLUDE_NONE):
        raise ValueError(f"unknown exclusion policy {exclusion!r}")
    if not per_seed_records or any(len(r) == 0 for r in per_seed_records):
        raise ValueError("need at least one round record per seed")

    um_count = 0
    f2l_count = 0
    included = []
    for idx, records in enumerate(per_seed_records):
        um, f2l = _seed_failures(records)
        um_count += um
        f2l_count += f2l
        if exclusion == EXCLUDE_NONE or not (um or f2l):
            included.append(idx)

    n_rounds = max(len(r) for r in per_seed_records)
    kappa_by_round = []
    for r in range(n_rounds):
        chunks = [
            recs[r].kappas
            for recs in per_seed_records
            if r < len(recs) and recs[r].kappas is not None
        ]
        if chunks:
            allk = np.concatenate(chunks)
            kappa_by_round.append((float(allk.mean()), float(allk.min()), float(allk.max())))
        else:
            kappa_by_round.append((math.nan, math.nan, math.nan))

    if not included:
        return ExperimentSummary(
            len(per_seed_records), (), um_count, f2l_count,
            None, None, None, None, tuple(kappa_by_round),
        )

    train = np.array(
        [_final_record(per_seed_records[i]).train_bfr.mean(axis=0) for i in included]
    )
    have_test = all(
        _final_record(per_seed_records[i]).test_bfr is not None for i in included
    )
    test = (
        np.array([_final_record(per_seed_records[i]).test_bfr.mean(axis=0) for i in included])
        if have_test
        else None
    )
    return ExperimentSummary(
        n_seeds=len(per_seed_records),
        included_seeds=tuple(included),
        um_count=um_count,
        f2l_count=f2l_count,
        train_bfr_mean=train.mean(axis=0),
        train_bfr_dispersion=_dispersion(train),
        test_bfr_mean=None if test is None else test.mean(axis=0),
        test_bfr_dispersion=None if test is None else _dispersion(test),
        kappa_by_round=tuple(kappa_by_round),
    )


def _rank_with_ties(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_two_sided_p(ranks_a_sum: float, n_a: int, n: int) -> float:
    # Null distribution of the rank sum via subset-sum counting over {1..n}.
    max_sum = n * (n + 1) // 2
    counts = [[0] * (max_sum + 1) for _ in range(n_a + 1)]
    counts[0][0] = 1
    for rank in range(1, n + 1):
        for j in range(min(n_a, rank), 0, -1):
            row, prev = counts[j], counts[j - 1]
            for s in range(max_sum, rank - 1, -1):
                c = prev[s - rank]
                if c:
                    row[s] += c
    dist = counts[n_a]
    total = sum(dist)
    w = int(round(ranks_a_sum))
    left = sum(dist[: w + 1])
    right = sum(dist[w:])
    return min(1.0, 2.0 * min(left, right) / total)


def _normal_two_sided_p(values: np.ndarray, ranks: np.ndarray, n_a: int) -> float:
    n = values.size
    n_b = n - n_a
    rank_sum_a = float(ranks[:n_a].sum())
    U = n_a * n_b + n_a * (n_a + 1) / 2.0 - rank_sum_a
    mean_u = n_a * n_b / 2.0
    _, tie_counts = np.unique(values, return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts))
    var_u = n_a * n_b / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var_u <= 0:
        return 1.0
    z = max(abs(U - mean_u) - 0.5, 0.0) / math.sqrt(var_u)
    return math.erfc(z / math.sqrt(2.0))


def ranksum_test(a, b) -> float:
    """Two-sided Wilcoxon rank-sum (Mann-Whitney) p-value.

    Exact enumeration of the rank-sum null distribution when both samples
    together hold at most 12 tie-free values; otherwise the normal
    approximation with tie and continuity corrections.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    combined = np.concatenate([a, b])
    ranks = _rank_with_ties(combined)
    n = combined.size
    no_ties = np.unique(combined).size == n
    if n <= 12 and no_ties:
        return _exact_two_sided_p(float(ranks[: a.size].sum()), a.size, n)
    return _normal_two_sided_p(combined, ranks, a.size)


def compare_final_scores(scores_a, scores_b) -> dict:
    """Rank-sum comparison of per-seed scores from two result sets."""
    scores_a = [s for s in scores_a if np.isfinite(s)]
    scores_b = [s for s in scores_b if np.isfinite(s)]
    if not scores_a or not scores_b:
        raise EmptyComparisonError("no seeds survived the exclusion rule")
    return {
        "p_value": ranksum_test(scores_a, scores_b),
        "n_a": len(scores_a),
        "n_b": len(scores_b),
        "mean_a": float(np.mean(scores_a)),
        "mean_b": float(np.mean(scores_b)),
    }
