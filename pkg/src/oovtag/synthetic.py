"""Synthetic slot-filling grammar for end-to-end checks.

Five slot types over a handful of templates: artist, city and day draw
from small closed lists, while song and venue values are freshly sampled
letter strings, giving them open vocabularies. Test-set song and venue
words are therefore almost surely unseen in training, which makes the
corpus a controlled stand-in for the OOV conditions the tagger targets.
"""

from __future__ import annotations

import string

import numpy as np

from oovtag.corpus import Dataset, Utterance

OPEN_SLOTS = frozenset({"song", "venue"})

ARTISTS = (
    "nova", "quinn", "kora", "jem", "finch", "mara", "louden",
    "ember swift", "iris vale", "rio hart", "silver pine", "tess arlo",
)
CITIES = ("berlin", "oslo", "porto", "quito", "dakar", "hanoi", "lima", "turin")
DAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")

# Template items are literal tokens or ("slot", name) placeholders.
TEMPLATES = (
    ("play", ("slot", "song"), "by", ("slot", "artist")),
    ("add", ("slot", "song"), "by", ("slot", "artist"), "to", "the", "queue"),
    ("queue", ("slot", "song"), "for", ("slot", "day")),
    ("book", ("slot", "venue"), "in", ("slot", "city"), "on", ("slot", "day")),
    ("find", ("slot", "venue"), "near", ("slot", "city")),
    ("remind", "me", "about", ("slot", "artist"), "on", ("slot", "day")),
    ("weather", "in", ("slot", "city"), "on", ("slot", "day")),
)

_LITERALS = frozenset(
    item for tpl in TEMPLATES for item in tpl if isinstance(item, str)
) | frozenset(w for name in ARTISTS + CITIES + DAYS for w in name.split())

# An open-vocabulary value may reuse a closed-slot surface form, so a
# tagger that memorizes word identities mislabels it while one that reads
# the context does not.
_CONFUSABLES = CITIES + DAYS + tuple(a for a in ARTISTS if " " not in a)


def _open_value(rng: np.random.Generator, confusable_rate: float) -> list[str]:
    if rng.random() < confusable_rate:
        return [_CONFUSABLES[int(rng.integers(len(_CONFUSABLES)))]]
    words = []
    for _ in range(int(rng.integers(1, 3))):
        while True:
            length = int(rng.integers(4, 9))
            word = "".join(
                string.ascii_lowercase[int(rng.integers(26))] for _ in range(length)
            )
            if word not in _LITERALS:
                break
        words.append(word)
    return words


def _slot_value(slot: str, rng: np.random.Generator, confusable_rate: float) -> list[str]:
    if slot in OPEN_SLOTS:
        return _open_value(rng, confusable_rate)
    pool = {"artist": ARTISTS, "city": CITIES, "day": DAYS}[slot]
    return pool[int(rng.integers(len(pool)))].split()


def generate_corpus(
    n: int, seed: int, start_id: int = 0, confusable_rate: float = 0.0
) -> Dataset:
    """Sample n utterances; ids are start_id..start_id+n-1."""
    utterances = []
    for k in range(n):
        rng = np.random.default_rng([seed, start_id + k])
        template = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
        tokens: list[str] = []
        labels: list[str] = []
        for item in template:
            if isinstance(item, str):
                tokens.append(item)
                labels.append("O")
                continue
            words = _slot_value(item[1], rng, confusable_rate)
            for j, word in enumerate(words):
                tokens.append(word)
                labels.append(("B-" if j == 0 else "I-") + item[1])
        utterances.append(
            Utterance(id=start_id + k, tokens=tuple(tokens), labels=tuple(labels))
        )
    return Dataset(utterances=tuple(utterances))


def synthetic_split(
    n_train: int = 500,
    n_dev: int = 100,
    n_test: int = 100,
    seed: int = 0,
    test_confusable_rate: float = 0.12,
) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint train/dev/test draws from the same grammar.

    Only the test draw uses confusable open-slot values: they probe whether
    open-slot tagging survives surface forms that training associated with
    other slots.
    """
    train = generate_corpus(n_train, seed, start_id=0)
    dev = generate_corpus(n_dev, seed, start_id=n_train)
    test = generate_corpus(
        n_test, seed, start_id=n_train + n_dev, confusable_rate=test_confusable_rate
    )
    return train, dev, test
