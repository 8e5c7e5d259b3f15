"""Full tagging model: parameter container, checkpoint format, inference.

A checkpoint is a single self-describing file: the magic line ``OOVTAG1``
followed by canonical JSON holding every tensor (shape plus base64 of the
little-endian float64 bytes), the tag inventory, the vocabulary with its
content hash, the training config snapshot, and the metric history. Saving
the same state twice produces byte-identical files.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from oovtag.corpus import Dataset, Utterance, VocabIndex, repair_count, validate_bio
from oovtag.crf import CrfParams, TagIndex, bio_penalty_params, emissions, init_crf_params, viterbi
from oovtag.encoder import EncoderParams, embed_batch, encode_batch, init_encoder_params

MAGIC = "OOVTAG1"


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


@dataclass(frozen=True)
class ModelParams:
    """Encoder and CRF parameters addressed by flat dotted names."""

    encoder: EncoderParams
    crf: CrfParams

    def __post_init__(self) -> None:
        if self.crf.proj_w.shape[0] != 2 * self.encoder.d_h:
            raise ValueError("projection input width must equal 2 * d_h")

    def tensors(self) -> dict[str, np.ndarray]:
        named = {f"enc.{k}": v for k, v in self.encoder.tensors().items()}
        named.update({f"crf.{k}": v for k, v in self.crf.tensors().items()})
        return named


def init_model(
    vocab_size: int, d_e: int, d_h: int, n_tags: int, rng: np.random.Generator
) -> ModelParams:
    return ModelParams(
        encoder=init_encoder_params(vocab_size, d_e, d_h, rng),
        crf=init_crf_params(2 * d_h, n_tags, rng),
    )


def params_from_tensors(tensors: dict[str, np.ndarray]) -> ModelParams:
    """Rebuild the parameter dataclasses from a flat name → array map."""
    enc = {k[4:]: tensors[k] for k in tensors if k.startswith("enc.")}
    crf = {k[4:]: tensors[k] for k in tensors if k.startswith("crf.")}
    return ModelParams(encoder=EncoderParams(**enc), crf=CrfParams(**crf))


@dataclass(frozen=True)
class Checkpoint:
    """Everything needed to resume evaluation: params, indices, history."""

    params: ModelParams
    tag_index: TagIndex
    vocab: VocabIndex
    config: dict
    epoch: int
    history: tuple[dict, ...] = field(default_factory=tuple)


def _encode_tensor(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return {"shape": list(arr.shape), "dtype": "float64",
            "data": base64.b64encode(data).decode("ascii")}


def _decode_tensor(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return arr.reshape(entry["shape"])


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    doc = {
        "version": 1,
        "tensors": {name: _encode_tensor(arr) for name, arr in ckpt.params.tensors().items()},
        "tags": list(ckpt.tag_index.tags),
        "vocab": {
            "tokens": list(ckpt.vocab.tokens),
            "min_count": ckpt.vocab.min_count,
            "hash": ckpt.vocab.content_hash(),
        },
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "history": list(ckpt.history),
    }
    body = json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return (MAGIC + "\n" + body + "\n").encode("utf-8")


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    from oovtag.ioutil import atomic_write_bytes

    atomic_write_bytes(path, checkpoint_bytes(ckpt))


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    head, _, body = raw.partition(b"\n")
    if head.decode("utf-8", "replace") != MAGIC:
        raise CheckpointError(f"{path}: not a {MAGIC} checkpoint")
    try:
        doc = json.loads(body)
        tensors = {name: _decode_tensor(entry) for name, entry in doc["tensors"].items()}
        params = params_from_tensors(tensors)
        tag_index = TagIndex(tags=tuple(doc["tags"]))
        vocab = VocabIndex(tokens=tuple(doc["vocab"]["tokens"]),
                           min_count=int(doc["vocab"]["min_count"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint: {exc}") from exc
    if vocab.content_hash() != doc["vocab"]["hash"]:
        raise CheckpointError(f"{path}: vocabulary hash mismatch")
    return Checkpoint(
        params=params,
        tag_index=tag_index,
        vocab=vocab,
        config=doc["config"],
        epoch=int(doc["epoch"]),
        history=tuple(doc["history"]),
    )


@dataclass
class TaggerModel:
    """Inference wrapper: tokens in, repaired BIO labels out."""

    params: ModelParams
    tag_index: TagIndex
    vocab: VocabIndex
    constrain_decode: bool = False

    def decode_params(self) -> CrfParams:
        if self.constrain_decode:
            return bio_penalty_params(self.params.crf, self.tag_index)
        return self.params.crf

    def predict_labels(self, tokens: tuple[str, ...]) -> tuple[tuple[str, ...], int]:
        """Predict labels for one token sequence; returns (labels, repairs)."""
        ids = np.asarray([self.vocab.encode(tokens)])
        hidden, _, _ = encode_batch(embed_batch(ids, self.params.encoder), self.params.encoder)
        crf_p = self.decode_params()
        raw = self.tag_index.decode(viterbi(emissions(hidden[0], crf_p), crf_p))
        repairs = repair_count(raw)
        return validate_bio(raw, mode="repair"), repairs

    def predict_dataset(self, ds: Dataset) -> tuple[Dataset, int]:
        """Tag every utterance; returns (predictions, total BIO repairs)."""
        out = []
        total_repairs = 0
        for u in ds:
            labels, repairs = self.predict_labels(u.tokens)
            total_repairs += repairs
            out.append(Utterance(id=u.id, tokens=u.tokens, labels=labels))
        return Dataset(utterances=tuple(out)), total_repairs


def tagger_from_checkpoint(ckpt: Checkpoint, constrain_decode: bool = False) -> TaggerModel:
    return TaggerModel(
        params=ckpt.params, tag_index=ckpt.tag_index, vocab=ckpt.vocab,
        constrain_decode=constrain_decode,
    )
