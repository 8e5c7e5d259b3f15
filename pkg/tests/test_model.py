"""Checkpoint serialization and the inference wrapper."""

import json

import numpy as np
import pytest

from oovtag.corpus import build_vocab, validate_bio
from oovtag.crf import build_tag_index
from oovtag.model import (
    MAGIC, Checkpoint, CheckpointError, TaggerModel, checkpoint_bytes,
    init_model, load_checkpoint, params_from_tensors, save_checkpoint,
    tagger_from_checkpoint,
)


@pytest.fixture()
def checkpoint(tiny_ds):
    vocab = build_vocab(tiny_ds)
    tag_index = build_tag_index(tiny_ds)
    params = init_model(len(vocab), 4, 3, len(tag_index), np.random.default_rng(0))
    return Checkpoint(
        params=params, tag_index=tag_index, vocab=vocab,
        config={"seed": 7, "d_e": 4}, epoch=2,
        history=({"epoch": 1, "dev_f1": 0.5}, {"epoch": 2, "dev_f1": 0.75}),
    )


def test_params_round_trip_through_flat_names(checkpoint):
    flat = checkpoint.params.tensors()
    assert all(k.startswith(("enc.", "crf.")) for k in flat)
    rebuilt = params_from_tensors(flat)
    for name, t in rebuilt.tensors().items():
        np.testing.assert_array_equal(t, flat[name])


def test_model_params_width_check(checkpoint):
    flat = checkpoint.params.tensors()
    flat = dict(flat)
    flat["crf.proj_w"] = np.zeros((5, flat["crf.proj_w"].shape[1]))
    with pytest.raises(ValueError, match="2 \\* d_h"):
        params_from_tensors(flat)


def test_checkpoint_bytes_format(checkpoint):
    raw = checkpoint_bytes(checkpoint)
    head, body = raw.split(b"\n", 1)
    assert head == MAGIC.encode()
    doc = json.loads(body)
    assert doc["version"] == 1
    assert doc["epoch"] == 2
    assert doc["config"] == {"seed": 7, "d_e": 4}
    assert doc["tags"][0] == "O"
    assert doc["vocab"]["hash"] == checkpoint.vocab.content_hash()
    assert set(doc["tensors"]) == set(checkpoint.params.tensors())


def test_checkpoint_bytes_identical_for_same_state(checkpoint):
    assert checkpoint_bytes(checkpoint) == checkpoint_bytes(checkpoint)


def test_save_load_round_trip(checkpoint, tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(checkpoint, str(path))
    loaded = load_checkpoint(str(path))
    assert loaded.tag_index.tags == checkpoint.tag_index.tags
    assert loaded.vocab.tokens == checkpoint.vocab.tokens
    assert loaded.vocab.min_count == checkpoint.vocab.min_count
    assert loaded.config == checkpoint.config
    assert loaded.epoch == checkpoint.epoch
    assert loaded.history == checkpoint.history
    for name, t in loaded.params.tensors().items():
        np.testing.assert_array_equal(t, checkpoint.params.tensors()[name])
    # Saving the loaded state reproduces the file byte for byte.
    assert checkpoint_bytes(loaded) == path.read_bytes()


def test_load_rejects_magic_and_corruption(checkpoint, tmp_path):
    path = tmp_path / "model.ckpt"
    path.write_bytes(b"NOTMINE\n{}")
    with pytest.raises(CheckpointError, match="not a"):
        load_checkpoint(str(path))

    save_checkpoint(checkpoint, str(path))
    raw = path.read_bytes()
    doc = json.loads(raw.split(b"\n", 1)[1])
    doc["vocab"]["tokens"][2] = "tampered"
    path.write_bytes(
        MAGIC.encode() + b"\n" + json.dumps(doc, sort_keys=True).encode() + b"\n"
    )
    with pytest.raises(CheckpointError, match="hash mismatch"):
        load_checkpoint(str(path))

    del doc["tensors"]
    path.write_bytes(
        MAGIC.encode() + b"\n" + json.dumps(doc, sort_keys=True).encode() + b"\n"
    )
    with pytest.raises(CheckpointError, match="malformed"):
        load_checkpoint(str(path))


def test_predict_labels_are_valid_bio(checkpoint, tiny_ds):
    tagger = tagger_from_checkpoint(checkpoint)
    labels, repairs = tagger.predict_labels(("play", "halo", "unseen"))
    assert len(labels) == 3
    validate_bio(labels, mode="strict")
    assert repairs >= 0

    pred, total = tagger.predict_dataset(tiny_ds)
    assert len(pred) == len(tiny_ds)
    for orig, out in zip(tiny_ds, pred):
        assert out.id == orig.id
        assert out.tokens == orig.tokens
        validate_bio(out.labels, mode="strict")
    assert total >= 0


def test_constrained_decode_never_needs_repair(checkpoint, tiny_ds):
    tagger = tagger_from_checkpoint(checkpoint, constrain_decode=True)
    assert tagger.decode_params() is not checkpoint.params.crf
    _, repairs = tagger.predict_dataset(tiny_ds)
    assert repairs == 0
    free = tagger_from_checkpoint(checkpoint)
    assert free.decode_params() is checkpoint.params.crf


def test_predictions_deterministic(checkpoint, tiny_ds):
    tagger = TaggerModel(
        params=checkpoint.params, tag_index=checkpoint.tag_index, vocab=checkpoint.vocab
    )
    a, _ = tagger.predict_dataset(tiny_ds)
    b, _ = tagger.predict_dataset(tiny_ds)
    assert [u.labels for u in a] == [u.labels for u in b]
