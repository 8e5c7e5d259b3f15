"""Noise augmentation for slot-filling corpora.

Word-level variants apply a single character edit to randomly selected
tokens: keyboard-adjacency substitution, OCR-confusion substitution, or a
random insert/substitute/swap/delete. The slot-level variant masks slot
words and has an infiller rewrite them. Every variant keeps the label
sequence and token count of the original utterance, which is what makes an
(original, augmented) pair usable as a contrastive positive.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass
from importlib import resources
from typing import TYPE_CHECKING, Sequence

import numpy as np

from oovtag.corpus import OUTSIDE, Dataset, Utterance

if TYPE_CHECKING:  # pragma: no cover
    from oovtag.infill import Infiller

MASK = "[MASK]"
RANDOM_EDITS = ("insert", "substitute", "swap", "delete")
_LOWER = string.ascii_lowercase


class AugmentError(ValueError):
    """Invalid augmentation input or configuration."""


@dataclass(frozen=True)
class PerturbMethod:
    """A single character-perturbation strategy.

    kind is one of keyboard | ocr | random; for random, edit picks the edit
    operation, with "mix" drawing one of the four uniformly per call.
    """

    kind: str
    edit: str = "mix"

    def __post_init__(self) -> None:
        if self.kind not in ("keyboard", "ocr", "random"):
            raise AugmentError(f"unknown perturbation kind {self.kind!r}")
        if self.kind == "random" and self.edit not in RANDOM_EDITS + ("mix",):
            raise AugmentError(f"unknown random edit {self.edit!r}")


KEYBOARD = PerturbMethod("keyboard")
OCR = PerturbMethod("ocr")
RANDOM_MIX = PerturbMethod("random", "mix")

SLOT_INFILL = "slot-infill"
_SUBSTITUTE = PerturbMethod("random", "substitute")


@dataclass(frozen=True)
class ConfusionTables:
    """Keyboard adjacency and OCR confusion maps for substitution draws."""

    keyboard: dict[str, tuple[str, ...]]
    ocr: dict[str, tuple[str, ...]]

    def __post_init__(self) -> None:
        for name, table in (("keyboard", self.keyboard), ("ocr", self.ocr)):
            if not table:
                raise AugmentError(f"{name} table is empty")
            for ch, repl in table.items():
                if not repl:
                    raise AugmentError(f"{name} table: empty entry for {ch!r}")
                if ch in repl:
                    raise AugmentError(f"{name} table: {ch!r} maps to itself")
        for ch, repl in self.keyboard.items():
            for other in repl:
                if ch not in self.keyboard.get(other, ()):
                    raise AugmentError(f"keyboard table not symmetric at {ch!r}/{other!r}")

    def table_for(self, kind: str) -> dict[str, tuple[str, ...]]:
        return self.keyboard if kind == "keyboard" else self.ocr


def load_confusion_tables(path: str | None = None) -> ConfusionTables:
    """Load confusion tables from JSON; defaults to the packaged asset."""
    if path is None:
        raw = resources.files("oovtag.data").joinpath("confusion_tables.json").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    data = json.loads(raw)
    return ConfusionTables(
        keyboard={k: tuple(v) for k, v in data["keyboard"].items()},
        ocr={k: tuple(v) for k, v in data["ocr"].items()},
    )


@dataclass(frozen=True)
class AugmentedPair:
    """An original utterance bound to one augmented view of it."""

    original: Utterance
    augmented: Utterance
    method: str
    group_id: int

    def __post_init__(self) -> None:
        if self.augmented.labels != self.original.labels:
            raise AugmentError("augmentation must preserve the label sequence")
        if len(self.augmented.tokens) != len(self.original.tokens):
            raise AugmentError("augmentation must preserve the token count")
        if self.group_id != self.original.id:
            raise AugmentError("group_id must equal the original utterance id")


@dataclass(frozen=True)
class MaskedUtterance:
    """An utterance with some tokens replaced by the mask sentinel."""

    original: Utterance
    tokens: tuple[str, ...]
    mask_positions: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.original.tokens):
            raise AugmentError("mask must preserve the token count")
        masked = set(self.mask_positions)
        if tuple(sorted(masked)) != self.mask_positions:
            raise AugmentError("mask_positions must be sorted and unique")
        for i, tok in enumerate(self.tokens):
            if i in masked and tok != MASK:
                raise AugmentError(f"position {i} selected but not masked")
            if i not in masked and tok != self.original.tokens[i]:
                raise AugmentError(f"position {i} mutated without being masked")


def _substitute_from_table(
    chars: list[str], table: dict[str, tuple[str, ...]], rng: np.random.Generator
) -> list[str]:
    eligible = [i for i, ch in enumerate(chars) if ch in table]
    if not eligible:
        return chars
    pos = eligible[int(rng.integers(len(eligible)))]
    options = table[chars[pos]]
    chars[pos] = options[int(rng.integers(len(options)))]
    return chars


def _random_edit(chars: list[str], edit: str, rng: np.random.Generator) -> list[str]:
    if edit == "mix":
        edit = RANDOM_EDITS[int(rng.integers(len(RANDOM_EDITS)))]
    n = len(chars)
    if edit == "insert":
        pos = int(rng.integers(n + 1))
        chars.insert(pos, _LOWER[int(rng.integers(len(_LOWER)))])
    elif edit == "substitute":
        pos = int(rng.integers(n))
        alphabet = [c for c in _LOWER if c != chars[pos]]
        chars[pos] = alphabet[int(rng.integers(len(alphabet)))]
    elif edit == "swap":
        if n >= 2:
            pos = int(rng.integers(n - 1))
            chars[pos], chars[pos + 1] = chars[pos + 1], chars[pos]
    elif edit == "delete":
        if n >= 2:
            del chars[int(rng.integers(n))]
    return chars


def char_perturb(
    token: str, method: PerturbMethod, tables: ConfusionTables, rng: np.random.Generator
) -> str:
    """Apply one character edit to a token.

    Keyboard and OCR methods substitute one character that has a table
    entry and return the token unchanged when none does. Random methods
    fall back to the unchanged token only for edits that are impossible on
    the input (swap or delete on a single character).
    """
    if not token:
        raise AugmentError("cannot perturb an empty token")
    chars = list(token)
    if method.kind in ("keyboard", "ocr"):
        chars = _substitute_from_table(chars, tables.table_for(method.kind), rng)
    else:
        chars = _random_edit(chars, method.edit, rng)
    return "".join(chars)


def _select_positions(n: int, rate: float, rng: np.random.Generator) -> list[int]:
    """Independent selection at the given rate, forcing one pick if empty."""
    selected = [i for i in range(n) if rng.random() < rate]
    if not selected:
        selected = [int(rng.integers(n))]
    return selected


def _perturb_tokens(
    u: Utterance,
    methods: Sequence[PerturbMethod],
    token_rate: float,
    tables: ConfusionTables,
    rng: np.random.Generator,
) -> tuple[str, ...]:
    tokens = list(u.tokens)
    for i in _select_positions(len(tokens), token_rate, rng):
        method = methods[int(rng.integers(len(methods)))] if len(methods) > 1 else methods[0]
        tokens[i] = char_perturb(tokens[i], method, tables, rng)
    if tuple(tokens) == u.tokens:
        # Every edit was a no-op (e.g. no table entry anywhere). Retry token
        # by token so the pair never degenerates to an identical positive.
        for i in rng.permutation(len(tokens)):
            method = methods[int(rng.integers(len(methods)))] if len(methods) > 1 else methods[0]
            for _ in range(16):
                candidate = char_perturb(u.tokens[i], method, tables, rng)
                if candidate != u.tokens[i]:
                    tokens[i] = candidate
                    return tuple(tokens)
        # The drawn method cannot alter this text at all (e.g. OCR with no
        # confusable glyph anywhere). One random substitution always can.
        i = int(rng.integers(len(tokens)))
        tokens[i] = char_perturb(u.tokens[i], _SUBSTITUTE, tables, rng)
    return tuple(tokens)


def word_augment(
    u: Utterance,
    method: PerturbMethod,
    token_rate: float,
    tables: ConfusionTables,
    rng: np.random.Generator,
) -> AugmentedPair:
    """Perturb randomly selected tokens of an utterance with one method."""
    if not 0.0 < token_rate <= 1.0:
        raise AugmentError(f"token_rate must be in (0, 1], got {token_rate}")
    tokens = _perturb_tokens(u, (method,), token_rate, tables, rng)
    augmented = Utterance(id=u.id, tokens=tokens, labels=u.labels)
    return AugmentedPair(original=u, augmented=augmented, method=method.kind, group_id=u.id)


def mask_slot_words(
    u: Utterance, mask_rate: float, rng: np.random.Generator
) -> MaskedUtterance:
    """Mask slot-word positions at the given rate (at least one when any exist).

    An utterance without slot words yields an empty mask, signalling the
    caller to skip slot-level augmentation for it.
    """
    if not 0.0 < mask_rate <= 1.0:
        raise AugmentError(f"mask_rate must be in (0, 1], got {mask_rate}")
    candidates = u.slot_positions()
    if not candidates:
        return MaskedUtterance(original=u, tokens=u.tokens, mask_positions=())
    picked = [p for p in candidates if rng.random() < mask_rate]
    if not picked:
        picked = [candidates[int(rng.integers(len(candidates)))]]
    tokens = list(u.tokens)
    for p in picked:
        tokens[p] = MASK
    return MaskedUtterance(original=u, tokens=tuple(tokens), mask_positions=tuple(sorted(picked)))


def slot_augment(
    u: Utterance, infiller: "Infiller", mask_rate: float, rng: np.random.Generator
) -> AugmentedPair:
    """Mask slot words, then have the infiller rewrite them under the old labels."""
    masked = mask_slot_words(u, mask_rate, rng)
    if not masked.mask_positions:
        raise AugmentError(f"utterance {u.id} has no slot words to mask")
    tokens = infiller.fill(masked, rng)
    augmented = Utterance(id=u.id, tokens=tuple(tokens), labels=u.labels)
    return AugmentedPair(original=u, augmented=augmented, method=SLOT_INFILL, group_id=u.id)


def noise_test_set(
    ds: Dataset, noise_level: float, tables: ConfusionTables, seed: int
) -> Dataset:
    """Character-noise a copy of a test set for robustness evaluation.

    Each selected token receives one edit from a uniformly drawn method
    (keyboard, OCR, or mixed random). Per-utterance generators are derived
    from (seed, utterance id), so the result is reproducible and independent
    of iteration order.
    """
    if not 0.0 < noise_level <= 1.0:
        raise AugmentError(f"noise_level must be in (0, 1], got {noise_level}")
    if len(ds) == 0:
        raise AugmentError("cannot noise an empty dataset")
    methods = (KEYBOARD, OCR, RANDOM_MIX)
    noised = []
    for u in ds:
        rng = np.random.default_rng([abs(int(seed)), u.id])
        tokens = _perturb_tokens(u, methods, noise_level, tables, rng)
        noised.append(Utterance(id=u.id, tokens=tokens, labels=u.labels))
    return Dataset(utterances=tuple(noised))
