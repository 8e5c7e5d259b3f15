"""Span-level evaluation: micro F1, per-slot breakdowns, noise robustness.

Scoring is exact-match over (slot, start, end) spans. The OOV-restricted
score keeps only spans of configured open-vocabulary slots, and the noise
score re-runs the tagger on a character-perturbed copy of the test set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from oovtag.augment import ConfusionTables, load_confusion_tables, noise_test_set
from oovtag.corpus import Dataset, extract_spans
from oovtag.ioutil import atomic_write_text, report_json
from oovtag.model import TaggerModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PRF:
    """Span counts with precision/recall/F1 derived from them."""

    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        total = self.tp + self.fp
        return self.tp / total if total else 0.0

    @property
    def recall(self) -> float:
        total = self.tp + self.fn
        return self.tp / total if total else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other: "PRF") -> "PRF":
        return PRF(tp=self.tp + other.tp, fp=self.fp + other.fp, fn=self.fn + other.fn)

    def to_dict(self) -> dict:
        return {
            "p": round(self.precision, 6), "r": round(self.recall, 6),
            "f1": round(self.f1, 6), "tp": self.tp, "fp": self.fp, "fn": self.fn,
        }


def _check_aligned(pred: Dataset, gold: Dataset) -> None:
    if len(pred) != len(gold):
        raise ValueError(f"prediction set has {len(pred)} utterances, gold has {len(gold)}")
    for p, g in zip(pred, gold):
        if p.id != g.id:
            raise ValueError(f"utterance id mismatch: {p.id} vs {g.id}")
        if len(p.tokens) != len(g.tokens):
            raise ValueError(f"utterance {p.id}: length mismatch")


def per_slot_counts(pred: Dataset, gold: Dataset) -> dict[str, PRF]:
    """Exact-match span counts per slot over aligned datasets."""
    _check_aligned(pred, gold)
    counts: dict[str, PRF] = {}
    for p, g in zip(pred, gold):
        pred_spans = set(extract_spans(p.labels))
        gold_spans = set(extract_spans(g.labels))
        for span in pred_spans & gold_spans:
            counts[span.slot] = counts.get(span.slot, PRF()) + PRF(tp=1)
        for span in pred_spans - gold_spans:
            counts[span.slot] = counts.get(span.slot, PRF()) + PRF(fp=1)
        for span in gold_spans - pred_spans:
            counts[span.slot] = counts.get(span.slot, PRF()) + PRF(fn=1)
    return counts


def span_f1(pred: Dataset, gold: Dataset) -> tuple[PRF, dict[str, PRF]]:
    """Micro-averaged PRF plus the per-slot breakdown."""
    per_slot = per_slot_counts(pred, gold)
    overall = PRF()
    for counts in per_slot.values():
        overall = overall + counts
    return overall, per_slot


def f1_ov(pred: Dataset, gold: Dataset, oov_slots: set[str]) -> PRF:
    """Span PRF restricted to the configured open-vocabulary slots."""
    per_slot = per_slot_counts(pred, gold)
    known = gold.slot_types | set(per_slot)
    restricted = PRF()
    for slot in sorted(oov_slots):
        if slot not in known:
            log.warning("configured OOV slot %r not present in the data; ignored", slot)
            continue
        restricted = restricted + per_slot.get(slot, PRF())
    return restricted


@dataclass(frozen=True)
class NoiseConfig:
    """Perturbation level and seed for the robustness evaluation."""

    level: float = 0.2
    seed: int = 0


@dataclass(frozen=True)
class EvalReport:
    overall: PRF
    per_slot: dict[str, PRF]
    f1_ov: PRF
    f1_noise: PRF | None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall.to_dict(),
            "per_slot": {slot: prf.to_dict() for slot, prf in sorted(self.per_slot.items())},
            "f1_ov": self.f1_ov.to_dict(),
            "f1_noise": self.f1_noise.to_dict() if self.f1_noise is not None else None,
            "meta": self.meta,
        }


def evaluate(
    tagger: TaggerModel,
    ds: Dataset,
    oov_slots: set[str],
    noise: NoiseConfig | None = None,
    tables: ConfusionTables | None = None,
) -> EvalReport:
    """Decode a dataset and assemble the full report.

    With a noise config, the same tagger additionally runs on a perturbed
    copy of the dataset and the overall score there is reported as the
    noise F1.
    """
    pred, repairs = tagger.predict_dataset(ds)
    overall, per_slot = span_f1(pred, ds)
    restricted = f1_ov(pred, ds, oov_slots)
    meta = {
        "n_utterances": len(ds),
        "oov_slots": sorted(oov_slots),
        "bio_repairs": repairs,
        "noise_level": None,
        "noise_seed": None,
    }
    noise_prf = None
    if noise is not None:
        noised = noise_test_set(ds, noise.level, tables or load_confusion_tables(), noise.seed)
        pred_noise, noise_repairs = tagger.predict_dataset(noised)
        noise_prf = span_f1(pred_noise, noised)[0]
        meta.update(
            noise_level=noise.level, noise_seed=noise.seed,
            bio_repairs_noise=noise_repairs,
        )
    return EvalReport(
        overall=overall, per_slot=per_slot, f1_ov=restricted,
        f1_noise=noise_prf, meta=meta,
    )


def _table_rows(report: EvalReport) -> list[tuple[str, PRF]]:
    rows = [("overall", report.overall), ("f1_ov", report.f1_ov)]
    if report.f1_noise is not None:
        rows.append(("f1_noise", report.f1_noise))
    rows.extend(sorted(report.per_slot.items()))
    return rows


def report_table(report: EvalReport) -> str:
    """Fixed-width human-readable summary of a report."""
    rows = _table_rows(report)
    width = max(len(name) for name, _ in rows)
    lines = [f"{'':{width}}      P      R     F1     TP    FP    FN"]
    for name, prf in rows:
        lines.append(
            f"{name:<{width}}  {prf.precision:5.3f}  {prf.recall:5.3f}  {prf.f1:5.3f}"
            f"  {prf.tp:5d} {prf.fp:5d} {prf.fn:5d}"
        )
    return "\n".join(lines) + "\n"


def report_tsv(report: EvalReport) -> str:
    """Tab-delimited report, one row per metric and slot."""
    lines = ["name\tprecision\trecall\tf1\ttp\tfp\tfn"]
    for name, prf in _table_rows(report):
        lines.append(
            f"{name}\t{prf.precision:.6f}\t{prf.recall:.6f}\t{prf.f1:.6f}"
            f"\t{prf.tp}\t{prf.fp}\t{prf.fn}"
        )
    return "\n".join(lines) + "\n"


def report_emit(report: EvalReport, path: str) -> None:
    """Write the canonical JSON report and print the table to stdout."""
    atomic_write_text(path, report_json(report.to_dict()))
    print(report_table(report), end="")
