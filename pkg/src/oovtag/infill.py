"""Mask infilling backends for slot-level augmentation.

Two interchangeable implementations: a lexicon sampler built from the
training corpus (default, fully offline) and an HTTP client for a remote
infilling service. Both return a full token list with every mask replaced
and every other position untouched.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import requests

from oovtag.augment import MASK, MaskedUtterance
from oovtag.corpus import OUTSIDE, Dataset, split_label

log = logging.getLogger(__name__)

INFILL_PATH = "/v1/infill"
DEFAULT_TIMEOUT = 10.0


class InfillError(Exception):
    """Base class for infilling failures."""


class TransportError(InfillError):
    """The infilling service could not be reached."""


class ProtocolError(InfillError):
    """The infilling service violated the wire contract."""


class Infiller(Protocol):
    def fill(self, masked: MaskedUtterance, rng: np.random.Generator) -> list[str]:
        """Return tokens of the original length with every mask replaced."""
        ...


@dataclass(frozen=True)
class SlotLexicon:
    """Per-slot candidate words observed in training data."""

    entries: dict[str, tuple[str, ...]]

    def __post_init__(self) -> None:
        for slot, words in self.entries.items():
            if not words or any(not w for w in words):
                raise ValueError(f"slot {slot!r} has an empty candidate")


def build_lexicon(ds: Dataset) -> SlotLexicon:
    """Collect the deduplicated, sorted tokens seen under each slot."""
    if len(ds) == 0:
        raise ValueError("cannot build a lexicon from an empty dataset")
    seen: dict[str, set[str]] = {}
    for u in ds:
        for tok, lab in zip(u.tokens, u.labels):
            if lab == OUTSIDE:
                continue
            _, slot = split_label(lab)
            seen.setdefault(slot, set()).add(tok)  # type: ignore[arg-type]
    return SlotLexicon(entries={slot: tuple(sorted(words)) for slot, words in seen.items()})


def lexicon_fill(
    masked: MaskedUtterance, lexicon: SlotLexicon, rng: np.random.Generator
) -> list[str]:
    """Replace each mask with a uniform draw from its slot's candidates.

    The original token is excluded whenever at least two candidates exist;
    a slot missing from the lexicon restores the original token.
    """
    tokens = list(masked.tokens)
    for pos in masked.mask_positions:
        original = masked.original.tokens[pos]
        label = masked.original.labels[pos]
        slot = split_label(label)[1] if label != OUTSIDE else None
        candidates = lexicon.entries.get(slot) if slot is not None else None
        if not candidates:
            tokens[pos] = original
        elif len(candidates) == 1:
            tokens[pos] = candidates[0]
        else:
            pool = [c for c in candidates if c != original] or list(candidates)
            tokens[pos] = pool[int(rng.integers(len(pool)))]
    return tokens


@dataclass(frozen=True)
class LexiconInfiller:
    lexicon: SlotLexicon

    def fill(self, masked: MaskedUtterance, rng: np.random.Generator) -> list[str]:
        return lexicon_fill(masked, self.lexicon, rng)


def validate_fill(masked: MaskedUtterance, tokens: list[str]) -> None:
    """Check an infiller response against the wire invariants."""
    if len(tokens) != len(masked.tokens):
        raise ProtocolError(
            f"expected {len(masked.tokens)} tokens, got {len(tokens)}"
        )
    masked_set = set(masked.mask_positions)
    for i, tok in enumerate(tokens):
        if i in masked_set:
            if tok == MASK:
                raise ProtocolError(f"mask residue at position {i}")
            if not tok:
                raise ProtocolError(f"empty fill at position {i}")
        elif tok != masked.tokens[i]:
            raise ProtocolError(f"non-mask token mutated at position {i}")


def _endpoint_url(endpoint: str) -> str:
    base = endpoint.rstrip("/")
    return base if base.endswith(INFILL_PATH) else base + INFILL_PATH


def remote_fill(
    masked: MaskedUtterance,
    endpoint: str,
    timeout: float = DEFAULT_TIMEOUT,
    session: requests.Session | None = None,
) -> list[str]:
    """POST a fill request to a remote service and validate the response.

    One retry on transport failure, then the error propagates so the caller
    can fall back to the lexicon infiller.
    """
    if not masked.mask_positions:
        raise ValueError("remote_fill requires at least one mask")
    url = _endpoint_url(endpoint)
    body = {"tokens": list(masked.tokens), "mask_positions": list(masked.mask_positions)}
    post = session.post if session is not None else requests.post
    response = None
    last_exc: Exception | None = None
    for _ in range(2):
        try:
            response = post(url, json=body, timeout=timeout)
            break
        except requests.RequestException as exc:  # includes timeouts
            last_exc = exc
    if response is None:
        raise TransportError(f"infill service unreachable at {url}: {last_exc}") from last_exc
    if response.status_code != 200:
        raise ProtocolError(f"infill service returned {response.status_code}: {response.text[:200]}")
    try:
        payload = response.json()
        tokens = list(payload["tokens"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ProtocolError(f"malformed infill response: {exc}") from exc
    if not all(isinstance(t, str) for t in tokens):
        raise ProtocolError("infill response tokens must be strings")
    validate_fill(masked, tokens)
    return tokens


@dataclass(frozen=True)
class RemoteInfiller:
    endpoint: str
    timeout: float = DEFAULT_TIMEOUT

    def fill(self, masked: MaskedUtterance, rng: np.random.Generator) -> list[str]:
        return remote_fill(masked, self.endpoint, timeout=self.timeout)


@dataclass(frozen=True)
class FallbackInfiller:
    """Try a primary infiller, falling back on any infill error."""

    primary: Infiller
    fallback: Infiller

    def fill(self, masked: MaskedUtterance, rng: np.random.Generator) -> list[str]:
        try:
            return self.primary.fill(masked, rng)
        except InfillError as exc:
            log.warning("infiller failed (%s); using fallback", exc)
            return self.fallback.fill(masked, rng)
