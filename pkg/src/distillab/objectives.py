"""Distillation objectives over batches of scored rollouts.

The base objective is an element-clipped forward KL: for teacher distribution
q and student distribution p at one token,

    loss(token) = sum_j min(q_j ln(q_j / p_j), clip_threshold)

with clipping applied per vocabulary entry *before* the sum, so a token's
loss may be negative. Student distributions come from
softmax(logits / distill_temperature); teacher rows arrive as distributions
(already temperature-scaled upstream).

Weighting modes:

* uniform           -- every token weighs 1;
* position schedule -- sigmoid weight of the token's position fraction;
* entropy gate      -- weight 1, but tokens whose teacher entropy is at or
  below the gate threshold use reverse KL instead of clipped forward KL.

Reductions:

* global token mean    -- sum of weighted token losses / total token count;
* per-sequence mean    -- mean over sequences of (weighted sum / length).

The analytic gradient with respect to student logits treats the teacher as a
constant. A vocabulary entry exactly at the clip boundary is treated as
clipped (zero pull from that entry).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dists import PROB_FLOOR, entropy, softmax_with_temperature
from .errors import InvalidInputError
from .schedules import PositionSchedule, weights_for_length


@dataclass(frozen=True)
class ObjectiveConfig:
    distill_temperature: float = 1.1
    clip_threshold: float = 0.05

    def __post_init__(self) -> None:
        if not np.isfinite(self.distill_temperature) or self.distill_temperature <= 0.0:
            raise InvalidInputError(
                f"distill_temperature must be positive, got {self.distill_temperature!r}"
            )
        if not np.isfinite(self.clip_threshold) or self.clip_threshold <= 0.0:
            raise InvalidInputError(
                f"clip_threshold must be positive, got {self.clip_threshold!r}"
            )


class Reduction(str, Enum):
    GLOBAL_TOKEN_MEAN = "global_token_mean"
    PER_SEQUENCE_MEAN = "per_sequence_mean"


@dataclass(frozen=True)
class UniformWeighting:
    pass


@dataclass(frozen=True)
class PositionWeighting:
    schedule: PositionSchedule


@dataclass(frozen=True)
class EntropyGateWeighting:
    """Forward KL where the teacher is uncertain, reverse KL where it is confident."""

    gate_threshold: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.gate_threshold) or self.gate_threshold < 0.0:
            raise InvalidInputError(
                f"gate_threshold must be a non-negative real, got {self.gate_threshold!r}"
            )


Weighting = UniformWeighting | PositionWeighting | EntropyGateWeighting


def default_gate_threshold(vocab_size: int) -> float:
    """Half the maximum possible teacher entropy, ln(vocab)/2."""
    if vocab_size < 2:
        raise InvalidInputError(f"vocab_size must be >= 2, got {vocab_size}")
    return math.log(vocab_size) / 2.0


class RolloutBatch:
    """Ragged batch of (teacher distribution rows, student logit rows) pairs."""

    def __init__(self, teacher_dists, student_logits):
        if len(teacher_dists) != len(student_logits):
            raise InvalidInputError(
                f"{len(teacher_dists)} teacher sequences vs {len(student_logits)} student sequences"
            )
        if len(teacher_dists) == 0:
            raise InvalidInputError("batch must contain at least one sequence")
        self.teacher_dists: list[np.ndarray] = []
        self.student_logits: list[np.ndarray] = []
        vocab = None
        for i, (q, z) in enumerate(zip(teacher_dists, student_logits)):
            qa = np.asarray(q, dtype=float)
            za = np.asarray(z, dtype=float)
            if qa.ndim != 2 or za.ndim != 2:
                raise InvalidInputError(f"sequence {i}: rows must be 2-D (length, vocab)")
            if qa.shape != za.shape:
                raise InvalidInputError(
                    f"sequence {i}: teacher shape {qa.shape} != student shape {za.shape}"
                )
            if qa.shape[0] < 1:
                raise InvalidInputError(f"sequence {i} is empty")
            if qa.shape[1] < 2:
                raise InvalidInputError(f"sequence {i}: vocab must be >= 2")
            if vocab is None:
                vocab = qa.shape[1]
            elif qa.shape[1] != vocab:
                raise InvalidInputError("all sequences must share one vocabulary size")
            if not np.all(np.isfinite(za)):
                raise InvalidInputError(f"sequence {i}: student logits contain non-finite entries")
            if not np.all(np.isfinite(qa)) or np.any(qa < 0.0):
                raise InvalidInputError(f"sequence {i}: teacher rows are not distributions")
            sums = qa.sum(axis=1)
            if np.any(np.abs(sums - 1.0) > 1e-9):
                raise InvalidInputError(f"sequence {i}: teacher rows do not sum to 1")
            self.teacher_dists.append(qa)
            self.student_logits.append(za)
        self.vocab_size: int = int(vocab)

    @property
    def lengths(self) -> list[int]:
        return [q.shape[0] for q in self.teacher_dists]

    @property
    def total_tokens(self) -> int:
        return sum(self.lengths)

    def __len__(self) -> int:
        return len(self.teacher_dists)


def token_weights(batch: RolloutBatch, weighting: Weighting) -> list[np.ndarray]:
    """Per-token scalar weights for each sequence (entropy gating weighs 1)."""
    out = []
    for q in batch.teacher_dists:
        L = q.shape[0]
        if isinstance(weighting, PositionWeighting):
            out.append(weights_for_length(L, weighting.schedule))
        else:
            out.append(np.ones(L))
    return out


def _fkl_raw_terms(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    logp = np.log(np.maximum(p, PROB_FLOOR))
    logq = np.log(np.maximum(q, PROB_FLOOR))
    return np.where(q > 0.0, q * (logq - logp), 0.0)


def _rkl_value(q_row: np.ndarray, p_row: np.ndarray) -> float:
    logp = np.log(np.maximum(p_row, PROB_FLOOR))
    logq = np.log(np.maximum(q_row, PROB_FLOOR))
    return float(np.where(p_row > 0.0, p_row * (logp - logq), 0.0).sum())


def _gate_masks(batch: RolloutBatch, weighting: Weighting) -> list[np.ndarray] | None:
    """For entropy gating: per-sequence boolean rows, True = forward KL."""
    if not isinstance(weighting, EntropyGateWeighting):
        return None
    masks = []
    for q in batch.teacher_dists:
        ent = np.array([entropy(row) for row in q])
        masks.append(ent > weighting.gate_threshold)
    return masks


def per_token_losses(batch: RolloutBatch, cfg: ObjectiveConfig, weighting: Weighting) -> list[np.ndarray]:
    """Unweighted per-token losses, one (length,) array per sequence."""
    gates = _gate_masks(batch, weighting)
    out = []
    for i, (q, z) in enumerate(zip(batch.teacher_dists, batch.student_logits)):
        p = softmax_with_temperature(z, cfg.distill_temperature)
        raw = _fkl_raw_terms(q, p)
        fkl = np.minimum(raw, cfg.clip_threshold).sum(axis=1)
        if gates is None:
            out.append(fkl)
        else:
            losses = fkl.copy()
            for t in np.nonzero(~gates[i])[0]:
                losses[t] = _rkl_value(q[t], p[t])
            out.append(losses)
    return out


def weighted_reduction(losses: list[np.ndarray], weights: list[np.ndarray], reduction: Reduction) -> float:
    """Combine per-token losses and weights under the chosen reduction.

    Summation order is fixed (sequence 0..B-1, tokens in order) so results are
    bit-stable regardless of how callers parallelize upstream work.
    """
    if len(losses) != len(weights) or len(losses) == 0:
        raise InvalidInputError("losses and weights must be equal-length non-empty lists")
    if reduction is Reduction.GLOBAL_TOKEN_MEAN:
        num = 0.0
        denom = 0
        for l, w in zip(losses, weights):
            num += float((w * l).sum())
            denom += l.shape[0]
        return num / denom
    if reduction is Reduction.PER_SEQUENCE_MEAN:
        acc = 0.0
        for l, w in zip(losses, weights):
            acc += float((w * l).sum()) / l.shape[0]
        return acc / len(losses)
    raise InvalidInputError(f"unknown reduction {reduction!r}")


def distillation_loss(
    batch: RolloutBatch,
    cfg: ObjectiveConfig,
    weighting: Weighting,
    reduction: Reduction,
) -> float:
    """Scalar training loss for the batch under the given weighting and reduction."""
    losses = per_token_losses(batch, cfg, weighting)
    weights = token_weights(batch, weighting)
    return weighted_reduction(losses, weights, reduction)


def entropy_gated_loss(
    batch: RolloutBatch,
    cfg: ObjectiveConfig,
    gate_threshold: float,
    reduction: Reduction,
) -> float:
    """Loss that applies clipped forward KL above the entropy gate, reverse KL below."""
    return distillation_loss(batch, cfg, EntropyGateWeighting(gate_threshold), reduction)


def _reduction_coefficients(batch: RolloutBatch, reduction: Reduction) -> list[float]:
    if reduction is Reduction.GLOBAL_TOKEN_MEAN:
        total = batch.total_tokens
        return [1.0 / total] * len(batch)
    if reduction is Reduction.PER_SEQUENCE_MEAN:
        B = len(batch)
        return [1.0 / (B * L) for L in batch.lengths]
    raise InvalidInputError(f"unknown reduction {reduction!r}")


def loss_gradient_wrt_student_logits(
    batch: RolloutBatch,
    cfg: ObjectiveConfig,
    weighting: Weighting,
    reduction: Reduction,
) -> list[np.ndarray]:
    """d(loss)/d(student logits), one (length, vocab) array per sequence.

    Forward-KL tokens: with U = {j : q_j ln(q_j/p_j) < clip} (boundary counts
    as clipped) and Q_U = sum of teacher mass on U,

        g_k = (1/T) * (p_k * Q_U - q_k * [k in U]).

    Reverse-KL tokens (entropy gate closed):

        g_k = (p_k / T) * (ln(p_k/q_k) - RKL(p, q)).

    Every token's gradient is scaled by its weight and reduction coefficient,
    so the result is the exact gradient of distillation_loss.
    """
    T = cfg.distill_temperature
    weights = token_weights(batch, weighting)
    gates = _gate_masks(batch, weighting)
    coefs = _reduction_coefficients(batch, reduction)
    grads = []
    for i, (q, z) in enumerate(zip(batch.teacher_dists, batch.student_logits)):
        p = softmax_with_temperature(z, T)
        raw = _fkl_raw_terms(q, p)
        unclipped = raw < cfg.clip_threshold
        q_mass_unclipped = np.where(unclipped, q, 0.0).sum(axis=1, keepdims=True)
        g = (p * q_mass_unclipped - np.where(unclipped, q, 0.0)) / T
        if gates is not None:
            for t in np.nonzero(~gates[i])[0]:
                logp = np.log(np.maximum(p[t], PROB_FLOOR))
                logq = np.log(np.maximum(q[t], PROB_FLOOR))
                rkl = _rkl_value(q[t], p[t])
                g[t] = p[t] * ((logp - logq) - rkl) / T
        g *= (weights[i] * coefs[i])[:, None]
        grads.append(g)
    return grads


@dataclass(frozen=True)
class FiniteDifferenceReport:
    max_rel_err: float  # worst relative error where |analytic| > rel_floor
    max_abs_err: float  # worst absolute error on the remaining coordinates
    compared: int
    skipped_boundary_tokens: int


def _token_loss_extended(
    q_row: np.ndarray,
    z_row: np.ndarray,
    temperature: float,
    clip_threshold: float,
    fkl: bool,
) -> np.longdouble:
    """One token's unweighted loss, evaluated in extended precision.

    Mirrors per_token_losses for a single token but runs the softmax and the
    KL terms in np.longdouble so that central differences of the result are
    not drowned by float64 rounding of the loss values themselves.
    """
    floor = np.longdouble(PROB_FLOOR)
    z = z_row.astype(np.longdouble) / np.longdouble(temperature)
    e = np.exp(z - z.max())
    p = e / e.sum()
    q = q_row.astype(np.longdouble)
    logp = np.log(np.maximum(p, floor))
    logq = np.log(np.maximum(q, floor))
    zero = np.longdouble(0.0)
    if fkl:
        terms = np.where(q > 0.0, q * (logq - logp), zero)
        return np.minimum(terms, np.longdouble(clip_threshold)).sum()
    return np.where(p > 0.0, p * (logp - logq), zero).sum()


def finite_difference_check(
    batch: RolloutBatch,
    cfg: ObjectiveConfig,
    weighting: Weighting,
    reduction: Reduction,
    step: float = 1e-5,
    rel_floor: float = 1e-8,
    max_tokens: int | None = None,
) -> FiniteDifferenceReport:
    """Compare the analytic gradient against central differences of the loss.

    Perturbing one logit changes exactly one token's loss, and the reduction
    is linear in that loss, so the difference quotient of the full loss equals
    the token's own difference quotient times the token's weight-and-reduction
    multiplier. That multiplier is extracted exactly by running an indicator
    array through weighted_reduction. The token loss itself is evaluated in
    extended precision on a five-point stencil (a fourth-order central
    difference at the given step), which keeps both truncation and rounding
    noise in the quotient far below the comparison tolerance even for
    gradient coordinates just above rel_floor; a plain two-point quotient at
    this step carries O(step^2) truncation error that swamps such
    coordinates no matter how precisely the loss is computed. Tokens with
    any vocabulary term within 10 * step of the clip boundary are excluded:
    the stencil straddles the kink there and no derivative comparison is
    meaningful. `max_tokens` stops after that many tokens have been compared
    (spot-check mode); None compares every token in the batch.
    """
    if step <= 0.0:
        raise InvalidInputError(f"step must be positive, got {step!r}")
    if max_tokens is not None and max_tokens < 1:
        raise InvalidInputError(f"max_tokens must be >= 1, got {max_tokens}")
    analytic = loss_gradient_wrt_student_logits(batch, cfg, weighting, reduction)
    weights = token_weights(batch, weighting)
    gates = _gate_masks(batch, weighting)
    margin = 10.0 * step
    h = np.longdouble(step)

    def multiplier(i: int, t: int) -> float:
        indicator = [np.zeros(z.shape[0]) for z in batch.student_logits]
        indicator[i][t] = 1.0
        return weighted_reduction(indicator, weights, reduction)

    max_rel = 0.0
    max_abs = 0.0
    compared = 0
    skipped = 0
    tokens_done = 0
    for i, z in enumerate(batch.student_logits):
        if max_tokens is not None and tokens_done >= max_tokens:
            break
        p = softmax_with_temperature(z, cfg.distill_temperature)
        raw = _fkl_raw_terms(batch.teacher_dists[i], p)
        for t in range(z.shape[0]):
            if max_tokens is not None and tokens_done >= max_tokens:
                break
            fkl_token = gates is None or gates[i][t]
            if fkl_token and np.any(np.abs(raw[t] - cfg.clip_threshold) <= margin):
                skipped += 1
                continue
            tokens_done += 1
            scale = np.longdouble(multiplier(i, t))
            q_row = batch.teacher_dists[i][t]
            for k in range(z.shape[1]):
                row = z[t].copy()
                probes = []
                for offset in (-2.0, -1.0, 1.0, 2.0):
                    row[k] = z[t, k] + offset * step
                    probes.append(
                        _token_loss_extended(
                            q_row, row, cfg.distill_temperature, cfg.clip_threshold, fkl_token
                        )
                    )
                quotient = (probes[0] - 8.0 * probes[1] + 8.0 * probes[2] - probes[3]) / (12.0 * h)
                fd = float(scale * quotient)
                a = analytic[i][t, k]
                compared += 1
                if abs(a) > rel_floor:
                    max_rel = max(max_rel, abs(fd - a) / abs(a))
                else:
                    max_abs = max(max_abs, abs(fd - a))
    return FiniteDifferenceReport(max_rel, max_abs, compared, skipped)
