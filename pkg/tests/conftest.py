"""Shared fixtures: tiny corpora and confusion tables."""

import numpy as np
import pytest

from oovtag.augment import load_confusion_tables
from oovtag.corpus import Dataset, Utterance


@pytest.fixture(scope="session")
def tables():
    return load_confusion_tables()


@pytest.fixture()
def tiny_ds():
    return Dataset(
        utterances=(
            Utterance(0, ("play", "halo", "by", "beyonce"), ("O", "B-song", "O", "B-artist")),
            Utterance(1, ("book", "blue", "note", "tonight"), ("O", "B-venue", "I-venue", "O")),
            Utterance(2, ("stop", "the", "music"), ("O", "O", "O")),
            Utterance(3, ("play", "halo", "again"), ("O", "B-song", "O")),
        )
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
