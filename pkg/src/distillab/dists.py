"""Probability-vector kernels: softmax, entropies, and the clipped divergence terms.

Conventions used throughout the package:

* all logarithms are natural;
* 0 * ln 0 = 0;
* probabilities are floored to PROB_FLOOR *inside* logarithms only -- the
  distribution itself is never renormalized by the floor;
* token distributions are 1-D float arrays that sum to 1 within 1e-9 and
  contain no negative entries.
"""
from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, InvalidInputError, NumericDomainError

PROB_FLOOR = 1e-12

_SUM_TOL = 1e-9


def as_distribution(p, name: str = "distribution") -> np.ndarray:
    """Validate and return `p` as a 1-D probability vector."""
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise InvalidInputError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    if np.any(arr < 0.0):
        raise InvalidInputError(f"{name} contains negative entries")
    total = float(arr.sum())
    if abs(total - 1.0) > _SUM_TOL:
        raise InvalidInputError(f"{name} sums to {total!r}, expected 1 within {_SUM_TOL}")
    return arr


def floored_log(p: np.ndarray) -> np.ndarray:
    """ln(max(p, PROB_FLOOR)) elementwise; the floor applies only inside the log."""
    return np.log(np.maximum(p, PROB_FLOOR))


def softmax_with_temperature(logits, temperature: float) -> np.ndarray:
    """Row-wise softmax of logits / temperature, stabilized by max-shift.

    Accepts a 1-D vector or a 2-D (rows = tokens) array; temperature must be
    positive and finite, logits must be finite.
    """
    z = np.asarray(logits, dtype=float)
    if not np.isfinite(temperature) or temperature <= 0.0:
        raise InvalidInputError(f"temperature must be positive and finite, got {temperature!r}")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logits contain non-finite entries")
    scaled = z / temperature
    shifted = scaled - scaled.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def entropy(p) -> float:
    """Shannon entropy in nats with the 0 ln 0 = 0 convention."""
    arr = as_distribution(p, "entropy input")
    pos = arr[arr > 0.0]
    return float(-(pos * np.log(pos)).sum())


def truncated_entropy(p, valid_mask, top_m: int) -> float:
    """Entropy of the renormalized top-`top_m` valid-token probabilities.

    Invalid tokens are masked out first; ties at the top-M boundary break
    toward the lowest vocabulary index. All-zero valid mass is degenerate.
    """
    arr = as_distribution(p, "truncated-entropy input")
    mask = np.asarray(valid_mask, dtype=bool)
    if mask.shape != arr.shape:
        raise InvalidInputError(
            f"valid_mask shape {mask.shape} does not match distribution shape {arr.shape}"
        )
    if top_m < 1:
        raise InvalidInputError(f"top_m must be >= 1, got {top_m}")
    masked = np.where(mask, arr, 0.0)
    total = masked.sum()
    if total <= 0.0:
        raise DegenerateInputError("no probability mass on valid tokens")
    # stable sort on negated probs: equal values keep index order (lowest wins)
    order = np.argsort(-masked, kind="stable")
    kept = order[: min(top_m, masked.size)]
    top = masked[kept]
    top = top[top > 0.0]
    if top.size == 0:
        raise DegenerateInputError("no positive probability among selected tokens")
    top = top / top.sum()
    return float(-(top * np.log(top)).sum())


def clipped_fkl_terms(q, p, clip_threshold: float) -> np.ndarray:
    """Per-token terms min(q_j ln(q_j / p_j), clip_threshold), with q_j = 0 giving 0.

    `p` is floored inside the log only. The returned vector may sum to a
    negative number; clipping is one-sided from above.
    """
    qa = as_distribution(q, "teacher distribution")
    pa = as_distribution(p, "student distribution")
    if qa.shape != pa.shape:
        raise InvalidInputError(f"shape mismatch {qa.shape} vs {pa.shape}")
    if not np.isfinite(clip_threshold) or clip_threshold <= 0.0:
        raise InvalidInputError(f"clip_threshold must be positive, got {clip_threshold!r}")
    raw = np.where(qa > 0.0, qa * (np.log(np.maximum(qa, PROB_FLOOR)) - floored_log(pa)), 0.0)
    return np.minimum(raw, clip_threshold)


def forward_kl(q, p) -> float:
    """Unclipped forward KL divergence sum_j q_j ln(q_j / p_j).

    Raises NumericDomainError when q places mass where p has none even after
    flooring (cannot happen for strictly positive floors, kept for masked use).
    """
    qa = as_distribution(q, "forward-kl q")
    pa = as_distribution(p, "forward-kl p")
    if qa.shape != pa.shape:
        raise InvalidInputError(f"shape mismatch {qa.shape} vs {pa.shape}")
    support = qa > 0.0
    if np.any(support & ~np.isfinite(floored_log(pa))):
        raise NumericDomainError("q has mass where p has none after flooring")
    terms = np.where(support, qa * (np.log(np.maximum(qa, PROB_FLOOR)) - floored_log(pa)), 0.0)
    return float(terms.sum())


def reverse_kl(q, p) -> float:
    """Reverse KL divergence sum_j p_j ln(p_j / q_j), q floored inside the log."""
    qa = as_distribution(q, "reverse-kl q")
    pa = as_distribution(p, "reverse-kl p")
    if qa.shape != pa.shape:
        raise InvalidInputError(f"shape mismatch {qa.shape} vs {pa.shape}")
    terms = np.where(pa > 0.0, pa * (np.log(np.maximum(pa, PROB_FLOOR)) - floored_log(qa)), 0.0)
    return float(terms.sum())
