"""BIO-labelled corpus handling: parsing, validation, vocabularies, spans.

The on-disk format is the common two-column layout: one ``<token> <label>``
pair per line, utterances separated by a blank line. Tokens are treated as
sequences of unicode scalar values everywhere so that character-level
perturbation never splits a multi-byte character.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1
OUTSIDE = "O"


class CorpusError(ValueError):
    """Malformed corpus text or label sequence."""


def split_label(label: str) -> tuple[str, str | None]:
    """Split a BIO label into (prefix, slot name); slot name is None for O."""
    if label == OUTSIDE:
        return OUTSIDE, None
    if len(label) > 2 and label[1] == "-" and label[0] in ("B", "I"):
        return label[0], label[2:]
    raise CorpusError(f"invalid BIO label {label!r}")


@dataclass(frozen=True)
class Utterance:
    """One tokenized utterance with aligned BIO labels."""

    id: int
    tokens: tuple[str, ...]
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.tokens) == 0:
            raise CorpusError(f"utterance {self.id}: empty token sequence")
        if len(self.tokens) != len(self.labels):
            raise CorpusError(
                f"utterance {self.id}: {len(self.tokens)} tokens vs {len(self.labels)} labels"
            )
        for label in self.labels:
            split_label(label)

    def __len__(self) -> int:
        return len(self.tokens)

    def slot_positions(self) -> tuple[int, ...]:
        """Indices carrying a non-O label."""
        return tuple(i for i, lab in enumerate(self.labels) if lab != OUTSIDE)

    def slot_names(self) -> set[str]:
        return {split_label(lab)[1] for lab in self.labels if lab != OUTSIDE}  # type: ignore[misc]


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of utterances with unique ids."""

    utterances: tuple[Utterance, ...]

    def __post_init__(self) -> None:
        ids = [u.id for u in self.utterances]
        if len(set(ids)) != len(ids):
            raise CorpusError("duplicate utterance ids in dataset")

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    @property
    def slot_types(self) -> set[str]:
        names: set[str] = set()
        for u in self.utterances:
            names |= u.slot_names()
        return names


@dataclass(frozen=True)
class Span:
    """A labelled span: token interval [start, end) tagged with a slot."""

    slot: str
    start: int
    end: int

    def __post_init__(self) -> None:
        if not (0 <= self.start < self.end):
            raise CorpusError(f"invalid span bounds ({self.start}, {self.end})")


@dataclass(frozen=True)
class VocabIndex:
    """Token-to-index map with fixed pad (0) and unk (1) entries.

    Index order is descending frequency with lexicographic tie-break, so a
    vocabulary is fully determined by its corpus and min_count.
    """

    tokens: tuple[str, ...]
    min_count: int = 1
    _index: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self) -> None:
        if self.tokens[:2] != (PAD_TOKEN, UNK_TOKEN):
            raise CorpusError("vocabulary must start with the pad and unk entries")
        self._index.update({tok: i for i, tok in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id_of(t) for t in tokens]

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        for tok in self.tokens:
            digest.update(tok.encode("utf-8"))
            digest.update(b"\x00")
        digest.update(str(self.min_count).encode("ascii"))
        return digest.hexdigest()


def parse_conll(text: str) -> Dataset:
    """Parse two-column text into a dataset; blank lines delimit utterances."""
    utterances: list[Utterance] = []
    tokens: list[str] = []
    labels: list[str] = []

    def flush() -> None:
        if tokens:
            utterances.append(
                Utterance(id=len(utterances), tokens=tuple(tokens), labels=tuple(labels))
            )
            tokens.clear()
            labels.clear()

    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            flush()
            continue
        fields = line.split()
        if len(fields) != 2:
            raise CorpusError(f"line {lineno}: expected '<token> <label>', got {line!r}")
        tokens.append(fields[0])
        labels.append(fields[1])
    flush()
    return Dataset(utterances=tuple(utterances))


def serialize_conll(ds: Dataset) -> str:
    """Render a dataset back to two-column text (inverse of parse_conll)."""
    blocks = []
    for u in ds:
        for tok in u.tokens:
            if not tok or any(ch.isspace() for ch in tok):
                raise CorpusError(f"utterance {u.id}: token {tok!r} not serializable")
        blocks.append("\n".join(f"{t} {l}" for t, l in zip(u.tokens, u.labels)))
    return "\n\n".join(blocks) + "\n" if blocks else ""


def load_conll(path: str) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_conll(fh.read())


def validate_bio(labels: Iterable[str], mode: str = "strict") -> tuple[str, ...]:
    """Check or repair BIO transition structure.

    strict: raise on an I tag that does not continue a same-slot span.
    repair: rewrite such orphan I tags to B (idempotent; output passes strict).
    """
    if mode not in ("strict", "repair"):
        raise ValueError(f"unknown mode {mode!r}")
    out: list[str] = []
    prev_prefix, prev_slot = OUTSIDE, None
    for pos, label in enumerate(labels):
        prefix, slot = split_label(label)
        if prefix == "I" and not (prev_prefix in ("B", "I") and prev_slot == slot):
            if mode == "strict":
                raise CorpusError(f"position {pos}: orphan {label}")
            prefix = "B"
            label = f"B-{slot}"
        out.append(label)
        prev_prefix, prev_slot = prefix, slot
    return tuple(out)


def repair_count(labels: Iterable[str]) -> int:
    """Number of labels validate_bio(repair) would rewrite."""
    labels = tuple(labels)
    return sum(a != b for a, b in zip(labels, validate_bio(labels, mode="repair")))


def build_vocab(ds: Dataset, min_count: int = 1) -> VocabIndex:
    """Frequency-thresholded vocabulary over all dataset tokens."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter(tok for u in ds for tok in u.tokens)
    kept = sorted(
        (tok for tok, c in counts.items() if c >= min_count),
        key=lambda tok: (-counts[tok], tok),
    )
    return VocabIndex(tokens=(PAD_TOKEN, UNK_TOKEN, *kept), min_count=min_count)


def extract_spans(labels: Iterable[str]) -> list[Span]:
    """Turn a valid BIO sequence into its maximal spans, sorted by start."""
    labels = tuple(labels)
    validate_bio(labels, mode="strict")
    spans: list[Span] = []
    start = None
    slot = None
    for i, label in enumerate(labels):
        prefix, name = split_label(label)
        if prefix == "I":
            continue
        if start is not None:
            spans.append(Span(slot=slot, start=start, end=i))  # type: ignore[arg-type]
            start, slot = None, None
        if prefix == "B":
            start, slot = i, name
    if start is not None:
        spans.append(Span(slot=slot, start=start, end=len(labels)))  # type: ignore[arg-type]
    return spans
