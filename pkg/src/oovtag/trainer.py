"""Joint training of the tagger: CRF NLL plus contrastive objectives.

Each minibatch stacks every original utterance with its augmented views
(identical length by construction), runs one batched encoder pass per
stack, scores the original through the CRF, pools every view for the
contrastive losses, and backpropagates the summed objective exactly. All
randomness derives from the config seed, so a training run is a pure
function of (config, data).
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field, asdict
from typing import Callable, IO, Iterable, Sequence

import numpy as np

from oovtag.augment import (
    KEYBOARD, OCR, RANDOM_MIX, SLOT_INFILL,
    AugmentError, ConfusionTables, load_confusion_tables, slot_augment, word_augment,
)
from oovtag.contrastive import (
    AS_WRITTEN, POSITIVES,
    ContrastiveBatch, ObjectiveConfig, infonce_backward, scl_backward,
)
from oovtag.corpus import OUTSIDE, Dataset, Utterance, VocabIndex, build_vocab
from oovtag.crf import TagIndex, build_tag_index, crf_backward, crf_nll, emissions, emissions_backward
from oovtag.encoder import NumericError, embed_batch, encode_batch, encoder_backward_batch
from oovtag.infill import FallbackInfiller, Infiller, InfillError, LexiconInfiller, RemoteInfiller, build_lexicon
from oovtag.model import Checkpoint, ModelParams, init_model, params_from_tensors


class ConfigError(ValueError):
    """Invalid training configuration."""


@dataclass(frozen=True)
class TrainConfig:
    """All knobs of one training run; serializable to/from a JSON document."""

    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 7
    lambda_ce: float = 1.0
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    word_aug: bool = True
    slot_aug: bool = True
    token_rate: float = 0.3
    mask_rate: float = 0.5
    d_e: int = 64
    d_h: int = 128
    dropout: float = 0.4
    min_count: int = 1
    patience: int = 10
    constrain_decode: bool = False
    infill_endpoint: str | None = None

    _INT_FIELDS = ("epochs", "batch_size", "seed", "d_e", "d_h", "min_count", "patience")
    _FLOAT_FIELDS = ("learning_rate", "beta1", "beta2", "epsilon", "lambda_ce",
                     "token_rate", "mask_rate", "dropout")
    _BOOL_FIELDS = ("word_aug", "slot_aug", "constrain_decode")

    def __post_init__(self) -> None:
        for name in self._INT_FIELDS:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        for name in self._FLOAT_FIELDS:
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{name} must be a number, got {value!r}")
        for name in self._BOOL_FIELDS:
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(f"{name} must be a boolean")
        if self.infill_endpoint is not None and not isinstance(self.infill_endpoint, str):
            raise ConfigError("infill_endpoint must be a string or null")
        if not isinstance(self.objective, ObjectiveConfig):
            raise ConfigError("objective must be an ObjectiveConfig")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if (self.word_aug or self.slot_aug) and self.batch_size < 2:
            raise ConfigError("contrastive training requires batch_size >= 2")
        for name in ("token_rate", "mask_rate"):
            rate = getattr(self, name)
            if not 0.0 < rate <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {rate}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ConfigError("learning_rate and epsilon must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.d_e < 1 or self.d_h < 1 or self.min_count < 1 or self.patience < 1:
            raise ConfigError("d_e, d_h, min_count and patience must be >= 1")

    @staticmethod
    def from_dict(doc: dict) -> "TrainConfig":
        data = dict(doc)
        objective = data.pop("objective", {})
        if not isinstance(objective, dict):
            raise ConfigError("objective must be a JSON object")
        known = {f.name for f in TrainConfig.__dataclass_fields__.values()}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            parsed = ObjectiveConfig(**objective)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid objective: {exc}") from exc
        return TrainConfig(objective=parsed, **data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ViewSpec:
    """One encoder input: an original utterance or an augmented view of it."""

    utterance: Utterance
    kind: str


@dataclass(frozen=True)
class AssembledBatch:
    """Per-original view stacks plus the contrastive structure over them.

    Stack i belongs to originals[i]; position 0 is always the original
    itself, word-level views follow, and a slot-infill view is last when
    present. scl_members and nce_pairs address views as (stack, position).
    """

    originals: tuple[Utterance, ...]
    stacks: tuple[tuple[ViewSpec, ...], ...]
    scl_members: tuple[tuple[int, int], ...]
    scl_group_ids: tuple[int, ...]
    nce_pairs: tuple[tuple[tuple[int, int], tuple[int, int]], ...]


WORD_METHODS = ((KEYBOARD, "keyboard"), (OCR, "ocr"), (RANDOM_MIX, "random"))


def assemble_batch(
    originals: Sequence[Utterance],
    cfg: TrainConfig,
    tables: ConfusionTables,
    infiller: Infiller | None,
    rng: np.random.Generator,
) -> AssembledBatch:
    """Build every view of a minibatch and the contrastive bookkeeping.

    Word-level augmentation contributes one view per method and groups them
    with their original for the supervised contrastive loss; slot-level
    augmentation contributes one infilled view paired with the original for
    InfoNCE. Utterances without slot words are skipped by the latter.
    """
    if not originals:
        raise ValueError("cannot assemble an empty batch")
    stacks: list[tuple[ViewSpec, ...]] = []
    scl_members: list[tuple[int, int]] = []
    scl_group_ids: list[int] = []
    nce_pairs: list[tuple[tuple[int, int], tuple[int, int]]] = []
    for i, u in enumerate(originals):
        stack = [ViewSpec(utterance=u, kind="original")]
        if cfg.word_aug:
            scl_members.append((i, 0))
            scl_group_ids.append(u.id)
            for method, kind in WORD_METHODS:
                pair = word_augment(u, method, cfg.token_rate, tables, rng)
                stack.append(ViewSpec(utterance=pair.augmented, kind=kind))
                scl_members.append((i, len(stack) - 1))
                scl_group_ids.append(u.id)
        if cfg.slot_aug and u.slot_positions():
            if infiller is None:
                raise AugmentError("slot augmentation requires an infiller")
            try:
                pair = slot_augment(u, infiller, cfg.mask_rate, rng)
            except InfillError as exc:
                raise AugmentError(f"utterance {u.id}: slot infill failed: {exc}") from exc
            stack.append(ViewSpec(utterance=pair.augmented, kind=SLOT_INFILL))
            nce_pairs.append(((i, 0), (i, len(stack) - 1)))
        stacks.append(tuple(stack))
    return AssembledBatch(
        originals=tuple(originals),
        stacks=tuple(stacks),
        scl_members=tuple(scl_members),
        scl_group_ids=tuple(scl_group_ids),
        nce_pairs=tuple(nce_pairs),
    )


def total_loss(l_scl: float, l_nce: float, ce_losses: Sequence[float], cfg: TrainConfig) -> float:
    """alpha-combined contrastive losses plus lambda_ce times the mean NLL."""
    obj = cfg.objective
    combined = obj.alpha * l_scl + (1.0 - obj.alpha) * l_nce
    ce = float(np.mean(ce_losses)) if len(ce_losses) else 0.0
    value = combined + cfg.lambda_ce * ce
    if not np.isfinite(value):
        raise NumericError(f"non-finite total loss: scl={l_scl} nce={l_nce} ce={ce}")
    return value


def train_step(
    params: ModelParams,
    batch: AssembledBatch,
    cfg: TrainConfig,
    vocab: VocabIndex,
    tag_index: TagIndex,
    epoch: int,
) -> tuple[dict[str, float], dict[str, np.ndarray]]:
    """One exact forward/backward over an assembled minibatch.

    Returns the loss components and the gradient of the total loss with
    respect to every parameter tensor (flat dotted names).
    """
    flat = params.tensors()
    grads = {name: np.zeros_like(t) for name, t in flat.items()}
    n_orig = len(batch.originals)

    ids_store, hidden_store, pooled_store, tapes = [], [], [], []
    d_hidden_store, d_pooled_store = [], []
    for i, stack in enumerate(batch.stacks):
        ids = np.asarray([vocab.encode(v.utterance.tokens) for v in stack])
        embedded = embed_batch(ids, params.encoder)
        drop_rng = np.random.default_rng([cfg.seed, epoch, batch.originals[i].id, 2])
        hidden, pooled, tape = encode_batch(
            embedded, params.encoder, dropout=cfg.dropout, train=True, rng=drop_rng
        )
        ids_store.append(ids)
        hidden_store.append(hidden)
        pooled_store.append(pooled)
        tapes.append(tape)
        d_hidden_store.append(np.zeros_like(hidden))
        d_pooled_store.append(np.zeros_like(pooled))

    ce_losses = []
    ce_scale = cfg.lambda_ce / n_orig
    for i, u in enumerate(batch.originals):
        h0 = hidden_store[i][0]
        em = emissions(h0, params.crf)
        gold = tag_index.encode(u.labels)
        ce_losses.append(crf_nll(em, params.crf, gold))
        if cfg.lambda_ce == 0.0:
            continue
        d_em, crf_grads = crf_backward(em, params.crf, gold)
        d_h0, d_w, d_b = emissions_backward(h0, params.crf, d_em)
        d_hidden_store[i][0] += ce_scale * d_h0
        grads["crf.proj_w"] += ce_scale * d_w
        grads["crf.proj_b"] += ce_scale * d_b
        for name, g in crf_grads.items():
            grads[f"crf.{name}"] += ce_scale * g

    l_scl = 0.0
    alpha = cfg.objective.alpha
    if batch.scl_members:
        reps = np.stack([pooled_store[i][j] for i, j in batch.scl_members])
        scl_batch = ContrastiveBatch(reps=reps, group_ids=batch.scl_group_ids)
        l_scl, g = scl_backward(scl_batch, cfg.objective)
        if alpha > 0.0:
            for (i, j), grad in zip(batch.scl_members, g):
                d_pooled_store[i][j] += alpha * grad

    l_nce = 0.0
    if batch.nce_pairs:
        members = [a for a, _ in batch.nce_pairs] + [p for _, p in batch.nce_pairs]
        reps = np.stack([pooled_store[i][j] for i, j in members])
        m = len(batch.nce_pairs)
        group_ids = tuple(batch.originals[a[0]].id for a, _ in batch.nce_pairs) * 2
        nce_batch = ContrastiveBatch(
            reps=reps, group_ids=group_ids,
            pair_map=tuple((k, m + k) for k in range(m)),
        )
        l_nce, g = infonce_backward(nce_batch, cfg.objective)
        if alpha < 1.0:
            for (i, j), grad in zip(members, g):
                d_pooled_store[i][j] += (1.0 - alpha) * grad

    for i in range(n_orig):
        enc_grads, d_embedded = encoder_backward_batch(
            tapes[i], d_hidden_store[i], d_pooled_store[i]
        )
        for name, g in enc_grads.items():
            grads[f"enc.{name}"] += g
        np.add.at(
            grads["enc.embedding"],
            ids_store[i].reshape(-1),
            d_embedded.reshape(-1, params.encoder.d_e),
        )

    components = {
        "loss_total": total_loss(l_scl, l_nce, ce_losses, cfg),
        "loss_scl": float(l_scl),
        "loss_nce": float(l_nce),
        "loss_ce": float(np.mean(ce_losses)),
    }
    return components, grads


@dataclass
class OptimizerState:
    """Adam moment accumulators, one pair per parameter tensor."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def init_optimizer(params: dict[str, np.ndarray]) -> OptimizerState:
    return OptimizerState(
        m={k: np.zeros_like(t) for k, t in params.items()},
        v={k: np.zeros_like(t) for k, t in params.items()},
    )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    cfg: TrainConfig,
) -> dict[str, np.ndarray]:
    """Standard Adam with bias correction; returns fresh parameter arrays."""
    if set(params) != set(grads):
        raise ValueError("parameter and gradient names differ")
    state.step += 1
    t = state.step
    corr1 = 1.0 - cfg.beta1 ** t
    corr2 = 1.0 - cfg.beta2 ** t
    updated = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {p.shape}")
        state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        m_hat = state.m[name] / corr1
        v_hat = state.v[name] / corr2
        updated[name] = p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    return updated


def build_infiller(train_ds: Dataset, cfg: TrainConfig) -> Infiller:
    """Lexicon infiller from the training data, remote-first if configured."""
    lexicon = LexiconInfiller(lexicon=build_lexicon(train_ds))
    if cfg.infill_endpoint:
        return FallbackInfiller(
            primary=RemoteInfiller(endpoint=cfg.infill_endpoint), fallback=lexicon
        )
    return lexicon


def _minibatches(order: np.ndarray, size: int) -> Iterable[np.ndarray]:
    for start in range(0, len(order), size):
        yield order[start : start + size]


def train(
    cfg: TrainConfig,
    train_ds: Dataset,
    dev_ds: Dataset,
    log_stream: IO[str] | None = None,
) -> Checkpoint:
    """Run the full optimization; returns the best-dev-F1 checkpoint.

    Emits one JSON line per epoch with the loss components and dev F1. A
    non-finite loss aborts the run and the last best checkpoint is kept.
    """
    from oovtag.evaluation import span_f1
    from oovtag.model import TaggerModel

    if len(train_ds) == 0 or len(dev_ds) == 0:
        raise ValueError("train and dev datasets must be nonempty")
    vocab = build_vocab(train_ds, min_count=cfg.min_count)
    tag_index = build_tag_index(train_ds)
    params = init_model(
        len(vocab), cfg.d_e, cfg.d_h, len(tag_index), np.random.default_rng([cfg.seed, 0])
    )
    tables = load_confusion_tables()
    infiller = build_infiller(train_ds, cfg) if cfg.slot_aug else None
    flat = params.tensors()
    opt = init_optimizer(flat)

    utts = list(train_ds)
    history: list[dict] = []
    best_flat = flat
    best_epoch = 0
    best_f1 = -1.0
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = np.random.default_rng([cfg.seed, epoch, 0]).permutation(len(utts))
        assemble_rng = np.random.default_rng([cfg.seed, epoch, 1])
        sums = {"loss_total": 0.0, "loss_scl": 0.0, "loss_nce": 0.0, "loss_ce": 0.0}
        steps = 0
        aborted = False
        for chunk in _minibatches(perm, cfg.batch_size):
            originals = [utts[int(j)] for j in chunk]
            batch = assemble_batch(originals, cfg, tables, infiller, assemble_rng)
            try:
                components, grads = train_step(params, batch, cfg, vocab, tag_index, epoch)
            except NumericError:
                aborted = True
                break
            flat = adam_step(flat, grads, opt, cfg)
            params = params_from_tensors(flat)
            for key in sums:
                sums[key] += components[key]
            steps += 1
        if aborted or steps == 0:
            break
        tagger = TaggerModel(
            params=params, tag_index=tag_index, vocab=vocab,
            constrain_decode=cfg.constrain_decode,
        )
        pred, _ = tagger.predict_dataset(dev_ds)
        dev_f1 = span_f1(pred, dev_ds)[0].f1
        record = {"epoch": epoch, "dev_f1": dev_f1}
        record.update({key: sums[key] / steps for key in sums})
        history.append(record)
        if log_stream is not None:
            log_stream.write(json.dumps(record, sort_keys=True) + "\n")
            log_stream.flush()
        if dev_f1 > best_f1:
            best_f1 = dev_f1
            best_flat = flat
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return Checkpoint(
        params=params_from_tensors(best_flat),
        tag_index=tag_index,
        vocab=vocab,
        config=cfg.to_dict(),
        epoch=best_epoch,
        history=tuple(history),
    )


@dataclass(frozen=True)
class GradCheckReport:
    """Worst relative error per tensor from a finite-difference sweep."""

    per_tensor: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(err <= self.tolerance for err in self.per_tensor.values())

    def lines(self) -> list[str]:
        width = max(len(name) for name in self.per_tensor)
        out = [
            f"{name:<{width}}  max rel err {err:.3e}  "
            + ("ok" if err <= self.tolerance else "FAIL")
            for name, err in sorted(self.per_tensor.items())
        ]
        out.append(f"gradient check {'PASSED' if self.passed else 'FAILED'}"
                   f" at tolerance {self.tolerance:g}")
        return out


_LETTERS = string.ascii_lowercase


def _random_tiny_case(seed: int) -> tuple[Dataset, TrainConfig]:
    """Draw a small random corpus and configuration from the seed.

    Structure (utterance count, lengths, slot spans) and hyperparameters
    (dims, dropout, temperatures, alpha, lambda_ce, denominator mode) all
    vary so repeated checks cover the objective's branches: pure SCL and
    pure InfoNCE mixes, disabled tagging loss, and both denominator modes.
    """
    rng = np.random.default_rng([seed, 9])
    pool = ["".join(_LETTERS[i] for i in rng.integers(0, 26, size=4)) for _ in range(10)]
    slots = ("song", "place")[: int(rng.integers(1, 3))]
    utts = []
    n_utts = int(rng.integers(3, 6))
    for k in range(n_utts):
        t = int(rng.integers(2, 5))
        tokens = tuple(pool[int(i)] for i in rng.integers(0, len(pool), size=t))
        labels = [OUTSIDE] * t
        if k == 0 or rng.random() >= 0.25:
            slot = slots[int(rng.integers(len(slots)))]
            width = int(rng.integers(1, min(2, t) + 1))
            start = int(rng.integers(0, t - width + 1))
            labels[start] = f"B-{slot}"
            for p in range(start + 1, start + width):
                labels[p] = f"I-{slot}"
        utts.append(Utterance(id=k, tokens=tokens, labels=tuple(labels)))
    # Temperatures below 0.1 or dropout at 0.5 make the loss so sharply
    # curved that central differences at eps=1e-5 lose accuracy to the
    # O(eps^2) truncation term; keep the draws inside the regime where the
    # check measures the gradient rather than the discretization.
    objective = ObjectiveConfig(
        tau1=float(rng.choice([0.1, 0.15, 0.3])),
        tau2=float(rng.choice([0.1, 0.15, 0.3])),
        alpha=float(rng.choice([0.0, 0.3, 0.5, 0.7, 1.0])),
        infonce_denominator=str(rng.choice([AS_WRITTEN, POSITIVES])),
    )
    cfg = TrainConfig(
        epochs=1,
        batch_size=n_utts,
        seed=seed,
        lambda_ce=float(rng.choice([0.0, 0.5, 1.0])),
        objective=objective,
        token_rate=float(rng.choice([0.4, 0.6, 0.9])),
        mask_rate=1.0,
        d_e=int(rng.integers(3, 6)),
        d_h=int(rng.integers(2, 5)),
        dropout=float(rng.choice([0.0, 0.2, 0.4])),
    )
    return Dataset(utterances=tuple(utts)), cfg


def make_gradcheck_case(
    seed: int = 0,
) -> tuple[Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]], dict[str, np.ndarray]]:
    """A tiny full-model loss closure for finite-difference checking.

    The seed picks one random small corpus and configuration, with both
    augmentations active. The closure is a deterministic function of the
    parameters (augmentation and dropout are frozen), as central
    differences require.
    """
    ds, cfg = _random_tiny_case(seed)
    utts = ds.utterances
    vocab = build_vocab(ds, min_count=cfg.min_count)
    tag_index = build_tag_index(ds)
    tables = load_confusion_tables()
    infiller = build_infiller(ds, cfg)
    batch = assemble_batch(list(utts), cfg, tables, infiller, np.random.default_rng([seed, 1]))
    params = init_model(
        len(vocab), cfg.d_e, cfg.d_h, len(tag_index), np.random.default_rng([seed, 0])
    )
    # At the training init scale the pooled representations have tiny norms,
    # and the cosine curvature (~1/norm^3) overwhelms central differences at
    # eps=1e-5. Check at a 5x-scaled point instead: same code path, but the
    # O(eps^2) truncation term stays far below the pass tolerance.
    params = params_from_tensors({k: 5.0 * t for k, t in params.tensors().items()})

    def loss_and_grads(flat: dict[str, np.ndarray]) -> tuple[float, dict[str, np.ndarray]]:
        components, grads = train_step(
            params_from_tensors(flat), batch, cfg, vocab, tag_index, epoch=1
        )
        return components["loss_total"], grads

    return loss_and_grads, params.tensors()


def grad_check(
    loss_and_grads: Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]],
    params: dict[str, np.ndarray],
    eps: float = 1e-5,
    tolerance: float = 1e-4,
    rng: np.random.Generator | None = None,
    samples: int = 50,
) -> GradCheckReport:
    """Central finite differences on sampled coordinates of every tensor.

    Differences smaller than 1e-8 in absolute terms count as agreement so
    coordinates with an exactly zero gradient do not divide by noise.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    _, analytic = loss_and_grads(params)
    work = {name: t.copy() for name, t in params.items()}
    per_tensor: dict[str, float] = {}
    for name, tensor in params.items():
        count = min(samples, tensor.size)
        coords = rng.choice(tensor.size, size=count, replace=False)
        worst = 0.0
        for flat_idx in coords:
            idx = np.unravel_index(int(flat_idx), tensor.shape)
            original = work[name][idx]
            work[name][idx] = original + eps
            plus = loss_and_grads(work)[0]
            work[name][idx] = original - eps
            minus = loss_and_grads(work)[0]
            work[name][idx] = original
            numeric = (plus - minus) / (2.0 * eps)
            diff = abs(analytic[name][idx] - numeric)
            if diff >= 1e-8:
                worst = max(worst, diff / max(abs(analytic[name][idx]), abs(numeric)))
        per_tensor[name] = worst
    return GradCheckReport(per_tensor=per_tensor, tolerance=tolerance)
