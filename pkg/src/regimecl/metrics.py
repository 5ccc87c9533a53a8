"""Accuracy and forgetting metrics, method rankings and Kendall tau-b."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

FORGETTING_CONVENTIONS = ("as_written", "previous")


class AccuracyMatrix:
    """Lower-triangular matrix; row t holds accuracies after training the t-th task."""

    def __init__(self, values: np.ndarray):
        values = np.array(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1] or values.shape[0] < 1:
            raise ValueError("accuracy matrix must be square and non-empty")
        upper = np.triu_indices(values.shape[0], k=1)
        if not np.all(np.isnan(values[upper])):
            raise ValueError("entries above the diagonal must be empty (NaN)")
        lower = values[np.tril_indices(values.shape[0])]
        populated = lower[~np.isnan(lower)]
        if np.any((populated < 0) | (populated > 1)):
            raise ValueError("accuracies must lie in [0, 1]")
        self.values = values

    @classmethod
    def empty(cls, num_tasks: int) -> "AccuracyMatrix":
        return cls(np.full((num_tasks, num_tasks), np.nan))

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "AccuracyMatrix":
        n = len(rows)
        values = np.full((n, n), np.nan)
        for t, row in enumerate(rows):
            if len(row) != t + 1:
                raise ValueError(f"row {t} must have {t + 1} entries")
            values[t, : t + 1] = row
        return cls(values)

    @property
    def num_tasks(self) -> int:
        return self.values.shape[0]

    def set(self, t: int, i: int, acc: float) -> None:
        if i > t:
            raise IndexError("accuracy matrix is lower-triangular")
        if not 0.0 <= acc <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")
        self.values[t, i] = acc

    def is_complete(self) -> bool:
        return not np.any(np.isnan(self.values[np.tril_indices(self.num_tasks)]))

    def row_counts(self) -> list[int]:
        return [int(np.sum(~np.isnan(row))) for row in self.values]

    def to_list(self) -> list[list[float]]:
        return [[float(x) for x in self.values[t, : t + 1]] for t in range(self.num_tasks)]


def average_accuracy(m: AccuracyMatrix) -> float:
    if not m.is_complete():
        raise ValueError("accuracy matrix is incomplete")
    return float(np.mean(m.values[-1]))


def average_forgetting(m: AccuracyMatrix, convention: str = "as_written") -> float:
    """Mean drop from peak to final accuracy over all but the last task.

    ``as_written`` takes the peak over every row including the final one, so
    each term is non-negative. ``previous`` takes it over rows before the
    final one, which lets backward transfer show up as negative forgetting.
    """
    if convention not in FORGETTING_CONVENTIONS:
        raise ValueError(f"unknown forgetting convention {convention!r}")
    if m.num_tasks < 2:
        raise ValueError("forgetting needs at least two tasks")
    if not m.is_complete():
        raise ValueError("accuracy matrix is incomplete")
    last = m.num_tasks - 1
    stop = last + 1 if convention == "as_written" else last
    drops = [np.max(m.values[i:stop, i]) - m.values[last, i] for i in range(last)]
    return float(np.mean(drops))


@dataclass(frozen=True)
class Ranking:
    labels: tuple[str, ...]
    ranks: tuple[float, ...]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.labels, self.ranks))


def rank_methods(scores: Mapping[str, float]) -> Ranking:
    """Rank 1 for the highest score; tied scores share their mean rank."""
    if not scores:
        raise ValueError("nothing to rank")
    labels = tuple(sorted(scores))
    values = [scores[k] for k in labels]
    ranks = []
    for v in values:
        better = sum(1 for w in values if w > v)
        tied = sum(1 for w in values if w == v)
        ranks.append(better + (tied + 1) / 2.0)
    return Ranking(labels, tuple(ranks))


def _tau_b(x: Sequence[float], y: Sequence[float]) -> float:
    n = len(x)
    if n != len(y) or n < 2:
        raise ValueError("tau needs two sequences of equal length >= 2")
    concordant = discordant = ties_x = ties_y = 0
    for i, j in itertools.combinations(range(n), 2):
        dx = x[i] - x[j]
        dy = y[i] - y[j]
        if dx == 0:
            ties_x += 1
        if dy == 0:
            ties_y += 1
        if dx * dy > 0:
            concordant += 1
        elif dx * dy < 0:
            discordant += 1
    pairs = n * (n - 1) // 2
    denom = (pairs - ties_x) * (pairs - ties_y)
    if denom == 0:
        return math.nan
    return (concordant - discordant) / math.sqrt(denom)


def kendall_tau(x: Ranking, y: Ranking) -> float:
    """Tau-b between two rankings of the same labels; NaN when either is fully tied."""
    if set(x.labels) != set(y.labels):
        raise ValueError("rankings cover different labels")
    ry = y.as_dict()
    return _tau_b(list(x.ranks), [ry[label] for label in x.labels])


def grad_forgetting_tau(summaries: Sequence[tuple[float, float]]) -> float:
    """Tau-b between regimes ordered by gradient magnitude and by forgetting."""
    if len(summaries) < 2:
        raise ValueError("need at least two regimes")
    return _tau_b([s[0] for s in summaries], [s[1] for s in summaries])


@dataclass
class AgreementMatrix:
    regimes: list[str]
    mean_tau: np.ndarray
    excluded: np.ndarray  # per regime pair: orders that produced no tau

    def excluded_by_row(self) -> list[int]:
        return [int(self.excluded[i].sum()) for i in range(len(self.regimes))]


def regime_agreement_matrix(
    scores: Mapping[int, Mapping[str, Mapping[str, float]]],
    regimes: Sequence[str] | None = None,
) -> AgreementMatrix:
    """Mean pairwise tau between per-regime method rankings.

    ``scores[order_id][regime][method]`` is the average accuracy of one run.
    For each order, methods are ranked inside every regime and tau is computed
    for every regime pair; taus are averaged over orders. An order is skipped
    for a pair when either regime misses a method present in the other or tau
    is undefined; those skips are counted in ``excluded``.
    """
    if regimes is None:
        regimes = sorted({r for by_regime in scores.values() for r in by_regime})
    regimes = list(regimes)
    k = len(regimes)
    sums = np.zeros((k, k))
    counts = np.zeros((k, k), dtype=int)
    excluded = np.zeros((k, k), dtype=int)
    for order_id in sorted(scores):
        by_regime = scores[order_id]
        for a, b in itertools.combinations(range(k), 2):
            sa = by_regime.get(regimes[a])
            sb = by_regime.get(regimes[b])
            tau = math.nan
            if sa and sb and set(sa) == set(sb) and len(sa) >= 2:
                tau = kendall_tau(rank_methods(sa), rank_methods(sb))
            if math.isnan(tau):
                excluded[a, b] += 1
                excluded[b, a] += 1
            else:
                sums[a, b] += tau
                sums[b, a] += tau
                counts[a, b] += 1
                counts[b, a] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    np.fill_diagonal(mean, 1.0)
    return AgreementMatrix(regimes, mean, excluded)


def mean_std(values: Iterable[float]) -> tuple[float, float]:
    arr = np.array(list(values), dtype=np.float64)
    if arr.size == 0:
        return math.nan, math.nan
    return float(arr.mean()), float(arr.std())
