"""Linear-chain CRF head: emission projection, NLL, Viterbi, exact gradients.

Scores a tag path as start(y_0) + sum of emissions + sum of transitions +
end(y_last). The partition function uses the log-space forward recursion;
gradients come from forward-backward marginals (expected minus observed
feature counts), which the tests pin against finite differences and
exhaustive path enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from oovtag.corpus import OUTSIDE, Dataset, split_label

INIT_SCALE = 0.1
BIO_PENALTY = -1e4


@dataclass(frozen=True)
class TagIndex:
    """Stable bijection between tag strings and integers 0..K-1."""

    tags: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.tags)) != len(self.tags):
            raise ValueError("duplicate tags in index")
        if OUTSIDE not in self.tags:
            raise ValueError("tag index must contain O")
        for tag in self.tags:
            split_label(tag)  # validates the BIO shape

    def __len__(self) -> int:
        return len(self.tags)

    def id_of(self, tag: str) -> int:
        try:
            return self.tags.index(tag)
        except ValueError:
            raise KeyError(f"unknown tag {tag!r}") from None

    def encode(self, labels: Iterable[str]) -> np.ndarray:
        return np.array([self.id_of(t) for t in labels], dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> tuple[str, ...]:
        return tuple(self.tags[int(i)] for i in ids)


def build_tag_index(ds: Dataset) -> TagIndex:
    """O first, then B-/I- pairs of every slot type in sorted order."""
    tags = [OUTSIDE]
    for slot in sorted(ds.slot_types):
        tags.extend((f"B-{slot}", f"I-{slot}"))
    return TagIndex(tags=tuple(tags))


@dataclass(frozen=True)
class CrfParams:
    """Emission projection and transition scores for K tags."""

    proj_w: np.ndarray
    proj_b: np.ndarray
    transitions: np.ndarray
    start: np.ndarray
    end: np.ndarray

    def __post_init__(self) -> None:
        k = self.proj_b.shape[0]
        expected = {
            "proj_w": (self.proj_w.shape[0], k),
            "proj_b": (k,),
            "transitions": (k, k),
            "start": (k,),
            "end": (k,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite values")

    @property
    def n_tags(self) -> int:
        return self.proj_b.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        return {
            "proj_w": self.proj_w,
            "proj_b": self.proj_b,
            "transitions": self.transitions,
            "start": self.start,
            "end": self.end,
        }


def init_crf_params(d_in: int, n_tags: int, rng: np.random.Generator) -> CrfParams:
    """Uniform projection, zero transitions and boundary scores."""
    return CrfParams(
        proj_w=rng.uniform(-INIT_SCALE, INIT_SCALE, size=(d_in, n_tags)),
        proj_b=np.zeros(n_tags),
        transitions=np.zeros((n_tags, n_tags)),
        start=np.zeros(n_tags),
        end=np.zeros(n_tags),
    )


def bio_penalty_params(params: CrfParams, index: TagIndex) -> CrfParams:
    """Decode-time variant penalizing transitions that break the BIO scheme.

    I-x may only follow B-x or I-x, and no path may start at I-x.
    """
    trans = params.transitions.copy()
    start = params.start.copy()
    for k, tag in enumerate(index.tags):
        prefix, slot = split_label(tag)
        if prefix != "I":
            continue
        start[k] += BIO_PENALTY
        for j, prev in enumerate(index.tags):
            p_prefix, p_slot = split_label(prev)
            if p_slot != slot:
                trans[j, k] += BIO_PENALTY
    return CrfParams(
        proj_w=params.proj_w, proj_b=params.proj_b,
        transitions=trans, start=start, end=params.end,
    )


def emissions(hidden: np.ndarray, params: CrfParams) -> np.ndarray:
    """Affine projection of (T, 2*d_h) states to (T, K) tag scores."""
    return hidden @ params.proj_w + params.proj_b


def emissions_backward(
    hidden: np.ndarray, params: CrfParams, d_em: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the projection: returns (d_hidden, d_proj_w, d_proj_b)."""
    return d_em @ params.proj_w.T, hidden.T @ d_em, d_em.sum(axis=0)


def _check_path(em: np.ndarray, path: Sequence[int], n_tags: int) -> np.ndarray:
    tags = np.asarray(path, dtype=np.int64)
    if tags.shape != (em.shape[0],):
        raise ValueError(f"path length {tags.shape} does not match {em.shape[0]} steps")
    if tags.size and (tags.min() < 0 or tags.max() >= n_tags):
        raise ValueError("tag id out of range")
    return tags


def score_sequence(em: np.ndarray, params: CrfParams, path: Sequence[int]) -> float:
    """Unnormalized log score of one tag path."""
    tags = _check_path(em, path, params.n_tags)
    steps = np.arange(em.shape[0])
    total = params.start[tags[0]] + em[steps, tags].sum() + params.end[tags[-1]]
    total += params.transitions[tags[:-1], tags[1:]].sum()
    return float(total)


def _forward_table(em: np.ndarray, params: CrfParams) -> np.ndarray:
    steps = em.shape[0]
    alpha = np.empty_like(em)
    alpha[0] = params.start + em[0]
    for t in range(1, steps):
        alpha[t] = logsumexp(alpha[t - 1][:, None] + params.transitions, axis=0) + em[t]
    return alpha


def _backward_table(em: np.ndarray, params: CrfParams) -> np.ndarray:
    steps = em.shape[0]
    beta = np.empty_like(em)
    beta[-1] = params.end
    for t in range(steps - 2, -1, -1):
        beta[t] = logsumexp(params.transitions + (em[t + 1] + beta[t + 1])[None, :], axis=1)
    return beta


def log_partition(em: np.ndarray, params: CrfParams) -> float:
    """log sum over all K^T paths of exp(score_sequence)."""
    alpha = _forward_table(em, params)
    return float(logsumexp(alpha[-1] + params.end))


def crf_nll(em: np.ndarray, params: CrfParams, gold: Sequence[int]) -> float:
    """Negative log-likelihood of the gold path; nonnegative."""
    return log_partition(em, params) - score_sequence(em, params, gold)


def viterbi(em: np.ndarray, params: CrfParams) -> list[int]:
    """Highest-scoring path; ties resolve to the lowest tag index per step."""
    steps, n_tags = em.shape
    delta = params.start + em[0]
    back = np.empty((steps, n_tags), dtype=np.int64)
    for t in range(1, steps):
        cand = delta[:, None] + params.transitions
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(n_tags)] + em[t]
    last = int(np.argmax(delta + params.end))
    path = [last]
    for t in range(steps - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    return path[::-1]


def crf_backward(
    em: np.ndarray, params: CrfParams, gold: Sequence[int]
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Exact gradient of crf_nll w.r.t. emissions and all CRF tensors.

    Emission gradient is marginal minus one-hot; transition, start and end
    gradients are expected minus observed feature counts. The projection
    tensors are handled separately by emissions_backward, so they are not
    part of the returned dict.
    """
    tags = _check_path(em, gold, params.n_tags)
    steps = em.shape[0]
    alpha = _forward_table(em, params)
    beta = _backward_table(em, params)
    log_z = float(logsumexp(alpha[-1] + params.end))

    marginals = np.exp(alpha + beta - log_z)
    d_em = marginals.copy()
    d_em[np.arange(steps), tags] -= 1.0

    d_trans = np.zeros_like(params.transitions)
    for t in range(steps - 1):
        pair = np.exp(
            alpha[t][:, None] + params.transitions + (em[t + 1] + beta[t + 1])[None, :] - log_z
        )
        d_trans += pair
        d_trans[tags[t], tags[t + 1]] -= 1.0

    d_start = marginals[0].copy()
    d_start[tags[0]] -= 1.0
    d_end = marginals[-1].copy()
    d_end[tags[-1]] -= 1.0
    return d_em, {"transitions": d_trans, "start": d_start, "end": d_end}


def marginal_table(em: np.ndarray, params: CrfParams) -> np.ndarray:
    """Per-step posterior tag marginals, each row summing to 1."""
    alpha = _forward_table(em, params)
    beta = _backward_table(em, params)
    log_z = float(logsumexp(alpha[-1] + params.end))
    return np.exp(alpha + beta - log_z)
