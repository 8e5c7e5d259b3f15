"""Command-line entry point for the slot-filling toolkit.

Subcommands: augment (write augmented views of a corpus), perturb (write a
character-noised copy), train (optimize from a JSON config), eval (score a
checkpoint and emit report, TSV and figure), gradcheck (finite-difference
audit of the gradients), serve-lexicon-info (export the slot lexicon).
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import NoReturn

import numpy as np

from oovtag.augment import (
    KEYBOARD, OCR, RANDOM_MIX,
    AugmentError, load_confusion_tables, noise_test_set, slot_augment, word_augment,
)
from oovtag.corpus import CorpusError, Dataset, load_conll, serialize_conll
from oovtag.evaluation import NoiseConfig, evaluate, report_emit, report_tsv
from oovtag.infill import FallbackInfiller, InfillError, LexiconInfiller, RemoteInfiller, build_lexicon
from oovtag.ioutil import atomic_write_text, canonical_json
from oovtag.model import CheckpointError, load_checkpoint, save_checkpoint, tagger_from_checkpoint
from oovtag.trainer import ConfigError, TrainConfig, grad_check, make_gradcheck_case, train

ENDPOINT_ENV = "OOVTAG_INFILL_URL"
WORD_METHODS = {"keyboard": KEYBOARD, "ocr": OCR, "random": RANDOM_MIX}


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors exit with code 1, not 2."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_threads(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--threads", type=int, default=1,
        help="worker cap (the current implementation runs single-threaded)",
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="oovtag", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("augment", help="write one augmented view per utterance")
    p.add_argument("--in", dest="inp", required=True, help="input corpus (CoNLL two-column)")
    p.add_argument("--out", required=True, help="output corpus path")
    p.add_argument("--method", required=True, choices=["keyboard", "ocr", "random", "slot"])
    p.add_argument("--rate", type=float, default=0.3, help="token selection rate")
    p.add_argument("--mask-rate", type=float, default=0.5, help="slot-word mask rate (slot method)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--infill-endpoint", default=None,
                   help=f"remote infill service URL (fallback: ${ENDPOINT_ENV})")
    _add_threads(p)

    p = sub.add_parser("perturb", help="write a character-noised copy of a corpus")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--noise", type=float, default=0.2, help="per-token noise level")
    p.add_argument("--seed", type=int, default=0)
    _add_threads(p)

    p = sub.add_parser("train", help="train a tagger from a JSON config")
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    _add_threads(p)

    p = sub.add_parser("eval", help="score a checkpoint on a test corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--oov-slots", default=None,
                   help="JSON file listing open-vocabulary slot names")
    p.add_argument("--noise", type=float, default=None,
                   help="also evaluate on a noised copy at this level")
    p.add_argument("--seed", type=int, default=0, help="noise seed")
    p.add_argument("--report", required=True, help="output JSON report path")
    _add_threads(p)

    p = sub.add_parser("gradcheck", help="finite-difference audit of all gradients")
    p.add_argument("--seed", type=int, default=0)
    _add_threads(p)

    p = sub.add_parser("serve-lexicon-info", help="export the slot lexicon of a corpus")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", default=None, help="output JSON path (default: stdout)")
    _add_threads(p)
    return parser


def _resolve_endpoint(flag_value: str | None) -> str | None:
    return flag_value or os.environ.get(ENDPOINT_ENV) or None


def _cmd_augment(args: argparse.Namespace) -> int:
    ds = load_conll(args.inp)
    tables = load_confusion_tables()
    out = []
    if args.method == "slot":
        lexicon = LexiconInfiller(lexicon=build_lexicon(ds))
        endpoint = _resolve_endpoint(args.infill_endpoint)
        infiller = (
            FallbackInfiller(primary=RemoteInfiller(endpoint=endpoint), fallback=lexicon)
            if endpoint else lexicon
        )
        for u in ds:
            if not u.slot_positions():
                out.append(u)
                continue
            rng = np.random.default_rng([args.seed, u.id])
            out.append(slot_augment(u, infiller, args.mask_rate, rng).augmented)
    else:
        method = WORD_METHODS[args.method]
        for u in ds:
            rng = np.random.default_rng([args.seed, u.id])
            out.append(word_augment(u, method, args.rate, tables, rng).augmented)
    atomic_write_text(args.out, serialize_conll(Dataset(utterances=tuple(out))))
    print(f"wrote {len(out)} augmented utterances to {args.out}")
    return 0


def _cmd_perturb(args: argparse.Namespace) -> int:
    ds = load_conll(args.inp)
    noised = noise_test_set(ds, args.noise, load_confusion_tables(), args.seed)
    atomic_write_text(args.out, serialize_conll(noised))
    print(f"wrote {len(noised)} noised utterances to {args.out}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    with open(args.config, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    train_path = doc.pop("train_path", None)
    dev_path = doc.pop("dev_path", None)
    ckpt_path = doc.pop("checkpoint_path", None)
    log_path = doc.pop("log_path", None)
    if not (train_path and dev_path and ckpt_path):
        raise ConfigError("config needs train_path, dev_path and checkpoint_path")
    if args.seed is not None:
        doc["seed"] = args.seed
    if not doc.get("infill_endpoint"):
        doc["infill_endpoint"] = _resolve_endpoint(None)
    cfg = TrainConfig.from_dict(doc)
    train_ds = load_conll(train_path)
    dev_ds = load_conll(dev_path)
    log_path = log_path or ckpt_path + ".log.jsonl"
    with open(log_path, "w", encoding="utf-8") as log_stream:
        ckpt = train(cfg, train_ds, dev_ds, log_stream=log_stream)
    save_checkpoint(ckpt, ckpt_path)
    if ckpt.history:
        from oovtag.figures import save_training_curves

        save_training_curves(ckpt.history, ckpt_path + ".curves.png")
        best = max(rec["dev_f1"] for rec in ckpt.history)
        print(f"best dev F1 {best:.4f} at epoch {ckpt.epoch}; checkpoint: {ckpt_path}")
    else:
        print(f"no training epochs ran; initial checkpoint: {ckpt_path}")
    return 0


def _load_oov_slots(path: str | None) -> set[str]:
    if path is None:
        return set()
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if isinstance(doc, dict):
        doc = doc.get("oov_slots")
    if not isinstance(doc, list) or not all(isinstance(s, str) for s in doc):
        raise ValueError(
            "OOV slot file must be a JSON array of names or {\"oov_slots\": [...]}"
        )
    return set(doc)


def _sibling_path(report_path: str, suffix: str) -> str:
    stem, ext = os.path.splitext(report_path)
    return (stem if ext.lower() == ".json" else report_path) + suffix


def _cmd_eval(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.ckpt)
    test_ds = load_conll(args.test)
    oov_slots = _load_oov_slots(args.oov_slots)
    noise = NoiseConfig(level=args.noise, seed=args.seed) if args.noise is not None else None
    tagger = tagger_from_checkpoint(
        ckpt, constrain_decode=bool(ckpt.config.get("constrain_decode", False))
    )
    report = evaluate(tagger, test_ds, oov_slots, noise=noise)
    report_emit(report, args.report)
    tsv_path = _sibling_path(args.report, ".tsv")
    atomic_write_text(tsv_path, report_tsv(report))
    from oovtag.figures import save_slot_f1_figure

    figure_path = _sibling_path(args.report, ".png")
    save_slot_f1_figure(report, figure_path)
    print(f"report: {args.report}\ntsv: {tsv_path}\nfigure: {figure_path}")
    return 0


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    loss_and_grads, params = make_gradcheck_case(seed=args.seed)
    report = grad_check(loss_and_grads, params, rng=np.random.default_rng(args.seed))
    print("\n".join(report.lines()))
    return 0 if report.passed else 2


def _cmd_lexicon_info(args: argparse.Namespace) -> int:
    ds = load_conll(args.inp)
    lexicon = build_lexicon(ds)
    info = {
        "n_utterances": len(ds),
        "slots": {
            slot: {"n_words": len(words), "words": list(words)}
            for slot, words in sorted(lexicon.entries.items())
        },
    }
    text = canonical_json(info) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
        print(f"wrote lexicon info for {len(info['slots'])} slots to {args.out}")
    else:
        print(text, end="")
    return 0


_HANDLERS = {
    "augment": _cmd_augment,
    "perturb": _cmd_perturb,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "serve-lexicon-info": _cmd_lexicon_info,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        return _HANDLERS[args.command](args)
    except (CorpusError, AugmentError, InfillError, ConfigError, CheckpointError,
            FloatingPointError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
