"""Contrastive objectives over pooled sentence representations.

Two losses share one batch layout: a supervised contrastive loss where the
views of one original utterance form a positive group, and an InfoNCE loss
over (anchor, positive) pairs. Both run on cosine similarities with a
temperature, and both come with exact analytic gradients expressed through
the similarity matrix, verified against finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

AS_WRITTEN = "as-written"
POSITIVES = "positives"


class ContrastiveError(ValueError):
    """Degenerate batch or configuration for a contrastive loss."""


@dataclass(frozen=True)
class ObjectiveConfig:
    """Temperatures and mixing weight of the combined objective.

    infonce_denominator picks the candidate set of the InfoNCE normalizer:
    the batch's anchor representations (including the anchor itself) or the
    positives.
    """

    tau1: float = 0.1
    tau2: float = 0.1
    alpha: float = 0.5
    infonce_denominator: str = AS_WRITTEN

    def __post_init__(self) -> None:
        if self.tau1 <= 0 or self.tau2 <= 0:
            raise ContrastiveError("temperatures must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ContrastiveError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.infonce_denominator not in (AS_WRITTEN, POSITIVES):
            raise ContrastiveError(
                f"unknown denominator mode {self.infonce_denominator!r}"
            )


@dataclass(frozen=True)
class ContrastiveBatch:
    """N representation vectors with group structure and optional pairs."""

    reps: np.ndarray
    group_ids: tuple[int, ...]
    pair_map: tuple[tuple[int, int], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.reps.ndim != 2 or self.reps.shape[0] < 2:
            raise ContrastiveError("batch needs at least two representation vectors")
        if len(self.group_ids) != self.reps.shape[0]:
            raise ContrastiveError("one group id per representation required")
        n = self.reps.shape[0]
        anchors = [a for a, _ in self.pair_map]
        if len(set(anchors)) != len(anchors):
            raise ContrastiveError("an anchor may have exactly one positive")
        for a, p in self.pair_map:
            if not (0 <= a < n and 0 <= p < n):
                raise ContrastiveError(f"pair ({a}, {p}) out of range")


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two nonzero vectors."""
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ContrastiveError("cosine similarity undefined for a zero vector")
    return float(np.dot(a, b) / (na * nb))


def _normalized(reps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(reps, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ContrastiveError("zero-norm representation in batch")
    return reps / norms, norms


def _sim_matrix(reps: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    unit, norms = _normalized(np.asarray(reps, dtype=np.float64))
    return unit @ unit.T, unit, norms


def _reps_gradient(w: np.ndarray, unit: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """Chain a similarity-matrix gradient back to the raw vectors.

    With S = unit @ unit.T the adjoint is (W + W.T) @ unit, projected onto
    the tangent of the unit sphere and rescaled by the norms. Diagonal
    entries of W cancel exactly under the projection, matching the fact
    that sim(h, h) is constant.
    """
    g_unit = (w + w.T) @ unit
    radial = np.sum(g_unit * unit, axis=1, keepdims=True)
    return (g_unit - radial * unit) / norms


def _scl_terms(
    batch: ContrastiveBatch, cfg: ObjectiveConfig
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    sim, unit, norms = _sim_matrix(batch.reps)
    n = sim.shape[0]
    ids = np.asarray(batch.group_ids)
    same = ids[:, None] == ids[None, :]
    np.fill_diagonal(same, False)
    group_sizes = same.sum(axis=1)
    if np.any(group_sizes == 0):
        lonely = int(np.argmin(group_sizes))
        raise ContrastiveError(f"representation {lonely} has no positive in its group")

    logits = sim / cfg.tau1
    masked = logits.copy()
    np.fill_diagonal(masked, -np.inf)
    log_denom = logsumexp(masked, axis=1)

    per_anchor = log_denom - (logits * same).sum(axis=1) / group_sizes
    loss = float(per_anchor.mean())

    softmax = np.exp(masked - log_denom[:, None])
    w = (softmax - same / group_sizes[:, None]) / (n * cfg.tau1)
    return loss, w, unit, norms


def scl_loss(batch: ContrastiveBatch, cfg: ObjectiveConfig) -> float:
    """Supervised contrastive loss over augmentation groups.

    Mean over anchors of the mean over their same-group positives of
    -log(exp(sim/tau1) / sum over all other batch members of exp(sim/tau1)).
    """
    return _scl_terms(batch, cfg)[0]


def scl_backward(batch: ContrastiveBatch, cfg: ObjectiveConfig) -> tuple[float, np.ndarray]:
    """SCL value plus its exact gradient w.r.t. every representation."""
    loss, w, unit, norms = _scl_terms(batch, cfg)
    return loss, _reps_gradient(w, unit, norms)


def _infonce_terms(
    batch: ContrastiveBatch, cfg: ObjectiveConfig
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    if not batch.pair_map:
        raise ContrastiveError("InfoNCE requires a nonempty pair map")
    sim, unit, norms = _sim_matrix(batch.reps)
    anchors = np.array([a for a, _ in batch.pair_map])
    positives = np.array([p for _, p in batch.pair_map])
    candidates = anchors if cfg.infonce_denominator == AS_WRITTEN else positives

    logits = sim[anchors][:, candidates] / cfg.tau2
    log_denom = logsumexp(logits, axis=1)
    pos_logit = sim[anchors, positives] / cfg.tau2
    per_pair = log_denom - pos_logit
    loss = float(per_pair.mean())

    m = anchors.shape[0]
    w = np.zeros_like(sim)
    softmax = np.exp(logits - log_denom[:, None])
    scale = 1.0 / (m * cfg.tau2)
    np.add.at(w, (anchors[:, None], candidates[None, :]), softmax * scale)
    np.add.at(w, (anchors, positives), -scale)
    return loss, w, unit, norms


def infonce_loss(batch: ContrastiveBatch, cfg: ObjectiveConfig) -> float:
    """InfoNCE over (anchor, positive) pairs.

    Mean over pairs of -log(exp(sim(anchor, positive)/tau2) / sum over the
    candidate set of exp(sim(anchor, candidate)/tau2)).
    """
    return _infonce_terms(batch, cfg)[0]


def infonce_backward(batch: ContrastiveBatch, cfg: ObjectiveConfig) -> tuple[float, np.ndarray]:
    """InfoNCE value plus its exact gradient w.r.t. every representation."""
    loss, w, unit, norms = _infonce_terms(batch, cfg)
    return loss, _reps_gradient(w, unit, norms)


def combined_loss(l_scl: float, l_nce: float, cfg: ObjectiveConfig) -> float:
    """Mixing weight alpha on the SCL term, its complement on InfoNCE."""
    if not (np.isfinite(l_scl) and np.isfinite(l_nce)):
        raise ContrastiveError("component losses must be finite")
    return cfg.alpha * l_scl + (1.0 - cfg.alpha) * l_nce


def contrastive_backward(
    batch: ContrastiveBatch, cfg: ObjectiveConfig
) -> tuple[float, np.ndarray]:
    """Combined loss and gradient on one batch carrying groups and pairs.

    alpha = 1 never evaluates InfoNCE and alpha = 0 never evaluates SCL, so
    a batch only needs the structure its active components use.
    """
    loss = 0.0
    grad = np.zeros_like(np.asarray(batch.reps, dtype=np.float64))
    if cfg.alpha > 0.0:
        l, g = scl_backward(batch, cfg)
        loss += cfg.alpha * l
        grad += cfg.alpha * g
    if cfg.alpha < 1.0:
        l, g = infonce_backward(batch, cfg)
        loss += (1.0 - cfg.alpha) * l
        grad += (1.0 - cfg.alpha) * g
    return loss, grad
