"""Trainable embeddings and a bidirectional LSTM encoder, from scratch.

Everything runs in float64 numpy with handwritten forward and backward
passes. The batched entry points stack sequences of identical length (an
original utterance and its augmented views always share one length), which
keeps the recurrence free of padding and masking. Exactness of the
gradients is enforced by finite-difference checks in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

INIT_SCALE = 0.1


class NumericError(FloatingPointError):
    """A forward pass produced non-finite values."""


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class EncoderParams:
    """Embedding table plus weights for both recurrence directions.

    Gate blocks are concatenated along the last axis in the fixed order
    input, forget, cell, output; each direction owns an input projection
    (d_e, 4*d_h), a recurrent projection (d_h, 4*d_h) and a bias (4*d_h,).
    """

    embedding: np.ndarray
    wx_f: np.ndarray
    wh_f: np.ndarray
    b_f: np.ndarray
    wx_b: np.ndarray
    wh_b: np.ndarray
    b_b: np.ndarray

    def __post_init__(self) -> None:
        d_e, four_h = self.wx_f.shape
        d_h = four_h // 4
        if four_h != 4 * d_h:
            raise ValueError("gate dimension must be a multiple of 4")
        expected = {
            "embedding": (self.embedding.shape[0], d_e),
            "wx_f": (d_e, 4 * d_h),
            "wh_f": (d_h, 4 * d_h),
            "b_f": (4 * d_h,),
            "wx_b": (d_e, 4 * d_h),
            "wh_b": (d_h, 4 * d_h),
            "b_b": (4 * d_h,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if arr.dtype != np.float64:
                raise ValueError(f"{name} must be float64")
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite values")

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def d_e(self) -> int:
        return self.embedding.shape[1]

    @property
    def d_h(self) -> int:
        return self.wh_f.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        """Named view of every trainable tensor, in a stable order."""
        return {
            "embedding": self.embedding,
            "wx_f": self.wx_f,
            "wh_f": self.wh_f,
            "b_f": self.b_f,
            "wx_b": self.wx_b,
            "wh_b": self.wh_b,
            "b_b": self.b_b,
        }


def init_encoder_params(
    vocab_size: int, d_e: int, d_h: int, rng: np.random.Generator
) -> EncoderParams:
    """Uniform(-0.1, 0.1) init for all tensors except zero biases."""

    def u(*shape: int) -> np.ndarray:
        return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)

    return EncoderParams(
        embedding=u(vocab_size, d_e),
        wx_f=u(d_e, 4 * d_h),
        wh_f=u(d_h, 4 * d_h),
        b_f=np.zeros(4 * d_h),
        wx_b=u(d_e, 4 * d_h),
        wh_b=u(d_h, 4 * d_h),
        b_b=np.zeros(4 * d_h),
    )


@dataclass(frozen=True)
class HiddenStates:
    """Per-token states H (T, 2*d_h) and their column-wise mean."""

    H: np.ndarray
    pooled: np.ndarray


@dataclass
class TapeNode:
    """Forward intermediates needed for one exact backward pass."""

    embedded: np.ndarray
    params: EncoderParams
    steps_f: list[tuple[np.ndarray, ...]]
    steps_b: list[tuple[np.ndarray, ...]]
    dropout_mask: np.ndarray | None


def embed_batch(token_ids: np.ndarray, params: EncoderParams) -> np.ndarray:
    """Look up rows of the embedding table for an id matrix (B, T)."""
    ids = np.asarray(token_ids)
    if ids.size == 0:
        raise ValueError("cannot embed an empty id sequence")
    if ids.min() < 0 or ids.max() >= params.vocab_size:
        raise ValueError(f"token id out of range for vocab of {params.vocab_size}")
    return params.embedding[ids]


def embed(token_ids, params: EncoderParams) -> np.ndarray:
    """Embed a single id sequence into a (T, d_e) matrix."""
    return embed_batch(np.asarray(token_ids)[None, :], params)[0]


def embed_backward(token_ids: np.ndarray, d_embedded: np.ndarray, vocab_size: int) -> np.ndarray:
    """Scatter-add embedded-input gradients back onto the embedding table."""
    ids = np.asarray(token_ids)
    grad = np.zeros((vocab_size, d_embedded.shape[-1]))
    np.add.at(grad, ids.reshape(-1), d_embedded.reshape(-1, d_embedded.shape[-1]))
    return grad


def _lstm_forward(
    x: np.ndarray, wx: np.ndarray, wh: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, list[tuple[np.ndarray, ...]]]:
    batch, steps, _ = x.shape
    d_h = wh.shape[0]
    hs = np.empty((batch, steps, d_h))
    h_prev = np.zeros((batch, d_h))
    c_prev = np.zeros((batch, d_h))
    tape: list[tuple[np.ndarray, ...]] = []
    for t in range(steps):
        a = x[:, t] @ wx + h_prev @ wh + b
        gi = _sigmoid(a[:, :d_h])
        gf = _sigmoid(a[:, d_h : 2 * d_h])
        gc = np.tanh(a[:, 2 * d_h : 3 * d_h])
        go = _sigmoid(a[:, 3 * d_h :])
        c = gf * c_prev + gi * gc
        hc = np.tanh(c)
        h = go * hc
        tape.append((gi, gf, gc, go, hc, c_prev, h_prev))
        hs[:, t] = h
        h_prev, c_prev = h, c
    return hs, tape


def _lstm_backward(
    x: np.ndarray,
    wx: np.ndarray,
    wh: np.ndarray,
    tape: list[tuple[np.ndarray, ...]],
    d_hs: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    batch, steps, _ = x.shape
    d_h = wh.shape[0]
    dx = np.zeros_like(x)
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * d_h)
    dh_next = np.zeros((batch, d_h))
    dc_next = np.zeros((batch, d_h))
    da = np.empty((batch, 4 * d_h))
    for t in reversed(range(steps)):
        gi, gf, gc, go, hc, c_prev, h_prev = tape[t]
        dh = d_hs[:, t] + dh_next
        dc = dc_next + dh * go * (1.0 - hc * hc)
        da[:, :d_h] = dc * gc * gi * (1.0 - gi)
        da[:, d_h : 2 * d_h] = dc * c_prev * gf * (1.0 - gf)
        da[:, 2 * d_h : 3 * d_h] = dc * gi * (1.0 - gc * gc)
        da[:, 3 * d_h :] = dh * hc * go * (1.0 - go)
        dwx += x[:, t].T @ da
        dwh += h_prev.T @ da
        db += da.sum(axis=0)
        dx[:, t] = da @ wx.T
        dh_next = da @ wh.T
        dc_next = dc * gf
    return dx, dwx, dwh, db


def encode_batch(
    embedded: np.ndarray,
    params: EncoderParams,
    dropout: float = 0.0,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray, TapeNode]:
    """Run both directions over a (B, T, d_e) stack of equal-length inputs.

    Returns per-token states H (B, T, 2*d_h), their per-sequence mean
    (B, 2*d_h), and the tape for the backward pass. Inverted dropout is
    applied to H before pooling when training, so downstream consumers and
    the pooled representation see the same dropped states.
    """
    x = np.ascontiguousarray(embedded, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] < 1:
        raise ValueError("embedded input must be (batch, steps>=1, d_e)")
    h_f, tape_f = _lstm_forward(x, params.wx_f, params.wh_f, params.b_f)
    h_b_rev, tape_b = _lstm_forward(x[:, ::-1], params.wx_b, params.wh_b, params.b_b)
    hidden = np.concatenate([h_f, h_b_rev[:, ::-1]], axis=2)
    mask = None
    if train and dropout > 0.0:
        if rng is None:
            raise ValueError("dropout at train time requires an rng")
        keep = 1.0 - dropout
        mask = (rng.random(hidden.shape) < keep) / keep
        hidden = hidden * mask
    if not np.isfinite(hidden).all():
        raise NumericError("encoder produced non-finite hidden states")
    pooled = hidden.mean(axis=1)
    tape = TapeNode(embedded=x, params=params, steps_f=tape_f, steps_b=tape_b, dropout_mask=mask)
    return hidden, pooled, tape


def encoder_backward_batch(
    tape: TapeNode, d_hidden: np.ndarray, d_pooled: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Exact reverse of encode_batch.

    Takes gradients w.r.t. H and the pooled mean, returns gradients for the
    recurrent tensors (named as in EncoderParams.tensors, minus the
    embedding) plus the gradient w.r.t. the embedded inputs.
    """
    x = tape.embedded
    steps = x.shape[1]
    d_h = tape.params.d_h
    if d_hidden.shape != (x.shape[0], steps, 2 * d_h):
        raise ValueError("d_hidden shape does not match the taped forward pass")
    upstream = d_hidden + d_pooled[:, None, :] / steps
    if tape.dropout_mask is not None:
        upstream = upstream * tape.dropout_mask
    dx_f, dwx_f, dwh_f, db_f = _lstm_backward(
        x, tape.params.wx_f, tape.params.wh_f, tape.steps_f, upstream[:, :, :d_h]
    )
    dx_b, dwx_b, dwh_b, db_b = _lstm_backward(
        x[:, ::-1], tape.params.wx_b, tape.params.wh_b, tape.steps_b,
        upstream[:, ::-1, d_h:],
    )
    grads = {
        "wx_f": dwx_f, "wh_f": dwh_f, "b_f": db_f,
        "wx_b": dwx_b, "wh_b": dwh_b, "b_b": db_b,
    }
    return grads, dx_f + dx_b[:, ::-1]


def encode(
    embedded: np.ndarray,
    params: EncoderParams,
    dropout: float = 0.0,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[HiddenStates, TapeNode]:
    """Encode one (T, d_e) input; see encode_batch."""
    hidden, pooled, tape = encode_batch(
        np.asarray(embedded)[None], params, dropout=dropout, train=train, rng=rng
    )
    return HiddenStates(H=hidden[0], pooled=pooled[0]), tape


def encoder_backward(
    tape: TapeNode, d_hidden: np.ndarray, d_pooled: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Backward for a single-sequence encode; see encoder_backward_batch."""
    grads, dx = encoder_backward_batch(tape, np.asarray(d_hidden)[None], np.asarray(d_pooled)[None])
    return grads, dx[0]


def mean_pool(hidden: np.ndarray) -> np.ndarray:
    """Arithmetic mean over the rows of a (T, d) state matrix."""
    h = np.asarray(hidden)
    if h.ndim != 2 or h.shape[0] < 1:
        raise ValueError("mean_pool expects a nonempty (T, d) matrix")
    return h.mean(axis=0)
