"""Uncertainty scores computed from a stochastic ensemble of token distributions.

An ensemble is an (M, V) array of M >= 2 probability rows for the same token,
e.g. repeated stochastic forward passes. From it we score:

* mean predictive entropy  -- average row entropy;
* mutual information       -- entropy of the mean row minus mean entropy
  (epistemic spread; 0 when every member agrees);
* Dirichlet precision      -- moment-matched concentration kappa of a
  Dirichlet fit to the members. Low precision = wide spread. Reported on the
  log scale after flooring at epsilon, since the moment estimate can be
  negative or infinite at desk-scale M.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dists import as_distribution, entropy
from .errors import InvalidInputError

DIRICHLET_EPSILON = 1e-6


def _as_ensemble(members) -> np.ndarray:
    arr = np.asarray(members, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise InvalidInputError(
            f"ensemble must be (M >= 2, vocab) probability rows, got shape {arr.shape}"
        )
    for i, row in enumerate(arr):
        as_distribution(row, f"ensemble member {i}")
    return arr


def mean_predictive_entropy(members) -> float:
    """Average Shannon entropy of the ensemble members."""
    arr = _as_ensemble(members)
    return float(np.mean([entropy(row) for row in arr]))


def mutual_information(members) -> float:
    """Entropy of the mean distribution minus mean member entropy.

    Non-negative by Jensen; floating-point residue below zero is clamped to 0.
    """
    arr = _as_ensemble(members)
    mixed = arr.mean(axis=0)
    mi = entropy(mixed) - float(np.mean([entropy(row) for row in arr]))
    return mi if mi > 0.0 else 0.0


def dirichlet_precision(members, epsilon: float = DIRICHLET_EPSILON) -> tuple[float, float]:
    """Moment-matched Dirichlet concentration (kappa_hat, log_kappa).

    With mean row p_bar and S = sum over coordinates of the unbiased (M - 1)
    across-member variance,

        kappa_hat = (1 - ||p_bar||^2) / S - 1.

    kappa_hat is returned raw (it may be negative); log_kappa is
    ln(max(kappa_hat, epsilon)). Identical members give S = 0, reported as
    kappa_hat = +inf with log_kappa capped at ln(1 / epsilon).
    """
    if not (epsilon > 0.0) or not math.isfinite(epsilon):
        raise InvalidInputError(f"epsilon must be positive and finite, got {epsilon!r}")
    arr = _as_ensemble(members)
    p_bar = arr.mean(axis=0)
    spread = float(arr.var(axis=0, ddof=1).sum())
    if spread == 0.0:
        return math.inf, math.log(1.0 / epsilon)
    kappa_hat = (1.0 - float((p_bar**2).sum())) / spread - 1.0
    log_kappa = math.log(max(kappa_hat, epsilon))
    return kappa_hat, log_kappa


@dataclass(frozen=True)
class UncertaintyRecord:
    """All ensemble scores for one candidate position."""

    mean_entropy: float
    mutual_information: float
    log_kappa: float
    truncated_entropy: float

    def as_dict(self) -> dict[str, float]:
        return {
            "mean_entropy": self.mean_entropy,
            "mutual_information": self.mutual_information,
            "log_kappa": self.log_kappa,
            "truncated_entropy": self.truncated_entropy,
        }


def score_ensemble(members, truncated_entropy_value: float, epsilon: float = DIRICHLET_EPSILON) -> UncertaintyRecord:
    """Bundle the three ensemble scores with a precomputed truncated entropy."""
    _, log_kappa = dirichlet_precision(members, epsilon)
    return UncertaintyRecord(
        mean_entropy=mean_predictive_entropy(members),
        mutual_information=mutual_information(members),
        log_kappa=log_kappa,
        truncated_entropy=float(truncated_entropy_value),
    )
