"""Metrics and experiment aggregation: minority/macro F1, multi-seed
trials, hyperparameter sweeps, an exact Wilcoxon signed-rank test, and
edge-weight homophily of a labeled graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .data import SplitIndices, TabularDataset
    from .graph import WeightedAdjacency
    from .training import TrainConfig

EXACT_SIGNED_RANK_LIMIT = 20


def f1_scores(y_true, y_pred, class_count: int) -> tuple[float, float]:
    """Minority-class F1 and macro F1.

    The minority class is the least frequent ground-truth class among
    those present in y_true, ties resolved toward the lower index.
    Per-class F1 treats 0/0 as 0; macro averages over all class_count
    classes.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise ValueError("empty label vectors")
    if y_true.shape != y_pred.shape:
        raise ValueError("label vectors differ in length")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if arr.min() < 0 or arr.max() >= class_count:
            raise ValueError(f"{name} contains labels outside [0, {class_count})")

    per_class = np.zeros(class_count)
    for cls in range(class_count):
        tp = int(np.sum((y_pred == cls) & (y_true == cls)))
        fp = int(np.sum((y_pred == cls) & (y_true != cls)))
        fn = int(np.sum((y_pred != cls) & (y_true == cls)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        per_class[cls] = (
            2 * precision * recall / (precision + recall) if precision + recall else 0.0
        )

    counts = np.bincount(y_true, minlength=class_count)
    present = np.flatnonzero(counts > 0)
    minority = int(present[np.argmin(counts[present])])
    return float(per_class[minority]), float(per_class.mean())


def primary_metric_name(class_count: int) -> str:
    return "minority_f1" if class_count == 2 else "macro_f1"


def primary_metric(y_true, y_pred, class_count: int) -> float:
    minority, macro = f1_scores(y_true, y_pred, class_count)
    return minority if class_count == 2 else macro


@dataclass
class MetricResult:
    """Multi-seed scores of one metric with mean +- population std."""

    metric: str
    scores: list[float]
    partial: bool = False
    errors: tuple[str, ...] = ()

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    @property
    def std(self) -> float:
        return float(np.std(self.scores))

    def formatted(self) -> str:
        return f"{self.mean * 100:.0f}±{self.std * 100:.1f}"

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "scores": list(self.scores),
            "mean": self.mean,
            "std": self.std,
            "formatted": self.formatted(),
            "partial": self.partial,
            "errors": list(self.errors),
        }


def multi_trial(
    ds: "TabularDataset", split: "SplitIndices", cfg: "TrainConfig", trials: int
) -> MetricResult:
    """Train `trials` times with seeds cfg.seed + 0...trials-1 on one split.

    Diverged trials are skipped and flag the result as partial.
    """
    from .training import TrainingDiverged, train

    if trials < 1:
        raise ValueError("need at least one trial")
    scores: list[float] = []
    errors: list[str] = []
    metric = ""
    for t in range(trials):
        trial_cfg = replace(cfg, seed=cfg.seed + t)
        try:
            _, report = train(ds, split, trial_cfg)
        except TrainingDiverged as exc:
            errors.append(f"seed {trial_cfg.seed}: {exc}")
            continue
        scores.append(report.test_metric)
        metric = report.metric_name
    if not scores:
        raise RuntimeError(f"every trial diverged: {errors}")
    return MetricResult(metric=metric, scores=scores, partial=bool(errors),
                        errors=tuple(errors))


def sweep(
    ds: "TabularDataset",
    split: "SplitIndices",
    base_cfg: "TrainConfig",
    param: str,
    values: list,
    trials: int,
) -> list[tuple[float, MetricResult]]:
    """One multi_trial per value of tau or k, all other settings fixed."""
    rows = []
    for value in values:
        if param == "tau":
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"tau value {value} outside [0, 1]")
            cfg = replace(base_cfg, tau=float(value))
        elif param == "k":
            if not 1 <= int(value) <= ds.n - 1:
                raise ValueError(f"k value {value} outside [1, {ds.n - 1}]")
            cfg = replace(base_cfg, knn_k=int(value))
        else:
            raise ValueError(f"sweep parameter must be 'tau' or 'k', got {param!r}")
        rows.append((float(value), multi_trial(ds, split, cfg, trials)))
    return rows


def _signed_ranks(differences: np.ndarray) -> np.ndarray:
    """Average ranks of |differences|, ascending."""
    magnitudes = np.abs(differences)
    order = np.argsort(magnitudes, kind="stable")
    ranks = np.empty(len(magnitudes))
    i = 0
    sorted_mags = magnitudes[order]
    while i < len(sorted_mags):
        j = i
        while j + 1 < len(sorted_mags) and sorted_mags[j + 1] == sorted_mags[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1  # average of ranks i+1..j+1
        i = j + 1
    return ranks


def paired_signed_rank(scores_a, scores_b) -> float:
    """Two-sided Wilcoxon signed-rank p-value for paired scores.

    Zero differences are dropped; at least 5 nonzero differences are
    required. Up to 20 pairs the null distribution of the positive-rank
    sum is enumerated exactly; beyond that a normal approximation with
    continuity correction is used. Tied magnitudes share average ranks.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired score lists differ in length")
    diffs = a - b
    diffs = diffs[diffs != 0]
    n = len(diffs)
    if n < 5:
        raise ValueError(f"need at least 5 nonzero differences, found {n}")

    ranks = _signed_ranks(diffs)
    w_plus = float(ranks[diffs > 0].sum())

    if n <= EXACT_SIGNED_RANK_LIMIT:
        # Work in doubled ranks so average ranks (x.5) become integers.
        doubled = np.rint(2 * ranks).astype(np.int64)
        dist = np.zeros(int(doubled.sum()) + 1, dtype=np.int64)
        dist[0] = 1
        total = 0
        for r in doubled:
            shifted = np.zeros_like(dist)
            shifted[r:] = dist[: len(dist) - r]
            dist = dist + shifted
            total += r
        w2 = int(round(2 * w_plus))
        denom = float(2**n)
        p_low = dist[: w2 + 1].sum() / denom
        p_high = dist[w2:].sum() / denom
        return min(1.0, 2 * min(p_low, p_high))

    mean = float(ranks.sum()) / 2
    sigma = math.sqrt(float((ranks**2).sum()) / 4)
    p_low = _normal_cdf((w_plus + 0.5 - mean) / sigma)
    p_high = 1.0 - _normal_cdf((w_plus - 0.5 - mean) / sigma)
    return min(1.0, 2 * min(p_low, p_high))


def _normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2))


def homophily(a: "WeightedAdjacency", y) -> float:
    """Fraction of total edge weight joining same-label instance pairs."""
    w = a.numpy()
    y = np.asarray(y, dtype=np.int64)
    upper = np.triu(w, k=1)
    total = upper.sum()
    if total <= 0:
        raise ValueError("graph has no edge weight")
    same = (y[:, None] == y[None, :])
    return float((upper * same).sum() / total)
