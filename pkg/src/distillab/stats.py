"""Ranking statistics with problem-level clustering.

Candidates from the same problem share position structure, so raw AUROC would
mostly measure between-problem differences. Scores are therefore
*residualized* first: within each problem the problem-mean score is
subtracted. AUROC then uses the mid-rank Mann-Whitney form (exactly equal to
the brute-force pairwise count, ties scoring one half), and AUPRC sweeps
descending scores with ties processed as one block.

Confidence intervals come from a cluster bootstrap: problems (not candidates)
are resampled with replacement, multiplicity preserved, scores re-residualized
per resample, and the percentile interval is read from the resampled AUROCs
with nearest-order-statistic quantiles so both ends are values some resample
actually attained. Resamples that collapse to a single label class are
skipped and counted.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateInputError, InvalidInputError
from .seeding import RNG_ID, derive_rng


@dataclass(frozen=True)
class ScoredCandidate:
    problem_id: str
    score: float
    label: bool  # True = the "positive" class (real-uncertain)


@dataclass(frozen=True)
class BootstrapConfig:
    resamples: int = 2000
    confidence: float = 0.95
    seed: int = 0

    def __post_init__(self) -> None:
        if self.resamples < 1:
            raise InvalidInputError(f"resamples must be >= 1, got {self.resamples}")
        if not (0.0 < self.confidence < 1.0):
            raise InvalidInputError(f"confidence must lie in (0, 1), got {self.confidence!r}")
        if self.seed < 0:
            raise InvalidInputError(f"seed must be non-negative, got {self.seed}")


def _split(items) -> tuple[list[str], np.ndarray, np.ndarray]:
    problems = [str(it.problem_id) for it in items]
    scores = np.array([float(it.score) for it in items], dtype=float)
    labels = np.array([bool(it.label) for it in items], dtype=bool)
    if scores.size == 0:
        raise DegenerateInputError("empty candidate list")
    if not np.all(np.isfinite(scores)):
        raise InvalidInputError("scores contain non-finite values")
    return problems, scores, labels


def residualize_within_problem(items) -> list[ScoredCandidate]:
    """Subtract each problem's mean score; order is preserved."""
    problems, scores, labels = _split(items)
    residual = scores.copy()
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for pid, s in zip(problems, scores):
        sums[pid] = sums.get(pid, 0.0) + s
        counts[pid] = counts.get(pid, 0) + 1
    for i, pid in enumerate(problems):
        residual[i] = scores[i] - sums[pid] / counts[pid]
    return [
        ScoredCandidate(pid, float(r), bool(l))
        for pid, r, l in zip(problems, residual, labels)
    ]


def _auroc_from_arrays(scores: np.ndarray, labels: np.ndarray) -> float:
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateInputError("AUROC needs both label classes")
    ranks = rankdata(scores)  # mid-ranks: ties share the average rank
    u = float(ranks[labels].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auroc(items) -> float:
    """Mann-Whitney AUROC via mid-ranks; exact under ties (each tie scores 1/2)."""
    _, scores, labels = _split(items)
    return _auroc_from_arrays(scores, labels)


def auprc(items) -> float:
    """Area under the precision-recall curve, descending-score sweep.

    Tied scores are processed as one block: the block's recall gain is
    credited at the precision reached after including the whole block. An
    uninformative (all-tied) score therefore lands at positive prevalence.
    """
    _, scores, labels = _split(items)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise DegenerateInputError("AUPRC needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    ap = 0.0
    tp = 0
    fp = 0
    i = 0
    n = s.size
    while i < n:
        j = i
        block_tp = 0
        block_fp = 0
        while j < n and s[j] == s[i]:
            if y[j]:
                block_tp += 1
            else:
                block_fp += 1
            j += 1
        tp += block_tp
        fp += block_fp
        if block_tp > 0:
            ap += (block_tp / n_pos) * (tp / (tp + fp))
        i = j
    return ap


def _group_indices(problems: list[str]) -> tuple[list[str], list[np.ndarray]]:
    """Unique problems in first-appearance order with their candidate indices."""
    order: list[str] = []
    index_map: dict[str, list[int]] = {}
    for i, pid in enumerate(problems):
        if pid not in index_map:
            index_map[pid] = []
            order.append(pid)
        index_map[pid].append(i)
    return order, [np.array(index_map[pid], dtype=int) for pid in order]


def _assemble_resample(
    groups: list[np.ndarray], draw: np.ndarray, scores: np.ndarray, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Residualized scores and labels for one resample of problem indices.

    A problem drawn k times contributes its candidates k times, exactly as if
    the dataset had been built with the problem duplicated.
    """
    parts_scores = []
    parts_labels = []
    for g in draw:
        idx = groups[g]
        block = scores[idx]
        parts_scores.append(block - block.mean())
        parts_labels.append(labels[idx])
    return np.concatenate(parts_scores), np.concatenate(parts_labels)


@dataclass(frozen=True)
class BootstrapResult:
    point: float
    ci_low: float
    ci_high: float
    n_resamples: int
    n_degenerate: int
    seed: int
    rng_id: str


def cluster_bootstrap_auroc(items, cfg: BootstrapConfig) -> BootstrapResult:
    """Point AUROC on residualized scores plus a problem-level percentile CI."""
    problems, scores, labels = _split(items)
    pids, groups = _group_indices(problems)
    if len(pids) < 2:
        raise DegenerateInputError("cluster bootstrap needs at least two problems")
    point = _auroc_from_arrays(
        np.array([c.score for c in residualize_within_problem(items)]), labels
    )
    n_problems = len(groups)
    values = []
    n_degenerate = 0
    for b in range(cfg.resamples):
        rng = derive_rng(cfg.seed, b)
        draw = rng.integers(0, n_problems, size=n_problems)
        rs, rl = _assemble_resample(groups, draw, scores, labels)
        if rl.all() or not rl.any():
            n_degenerate += 1
            continue
        values.append(_auroc_from_arrays(rs, rl))
    if not values:
        raise DegenerateInputError("every bootstrap resample was single-class")
    arr = np.array(values)
    alpha = (1.0 - cfg.confidence) / 2.0
    ci_low = float(np.quantile(arr, alpha, method="nearest"))
    ci_high = float(np.quantile(arr, 1.0 - alpha, method="nearest"))
    return BootstrapResult(
        point=point,
        ci_low=ci_low,
        ci_high=ci_high,
        n_resamples=len(values),
        n_degenerate=n_degenerate,
        seed=cfg.seed,
        rng_id=RNG_ID,
    )


def score_report(score_name: str, items, cfg: BootstrapConfig) -> dict:
    """Full JSON-ready report for one uncertainty score over labeled candidates."""
    problems, _, labels = _split(items)
    residual = residualize_within_problem(items)
    boot = cluster_bootstrap_auroc(items, cfg)
    return {
        "score_name": score_name,
        "point_auroc": boot.point,
        "ci": [boot.ci_low, boot.ci_high],
        "auprc": auprc(residual),
        "n_pos": int(sum(labels)),
        "n_neg": int(len(labels) - sum(labels)),
        "n_problems": len(set(problems)),
        "n_degenerate": boot.n_degenerate,
        "seed": cfg.seed,
        "rng_id": boot.rng_id,
    }
