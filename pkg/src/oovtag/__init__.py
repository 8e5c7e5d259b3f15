"""OOV-robust slot filling toolkit.

Trains an Embedding-BiLSTM-CRF tagger jointly with sentence-level
contrastive objectives over character-noise and slot-infill augmentation
views, and evaluates span F1 on clean, OOV-slot, and noised test sets.
"""

__version__ = "0.1.0"

from oovtag.corpus import Dataset, Span, Utterance, VocabIndex, load_conll, parse_conll, serialize_conll
from oovtag.evaluation import EvalReport, NoiseConfig, evaluate, span_f1
from oovtag.model import Checkpoint, TaggerModel, load_checkpoint, save_checkpoint
from oovtag.trainer import TrainConfig, train

__all__ = [
    "Checkpoint",
    "Dataset",
    "EvalReport",
    "NoiseConfig",
    "Span",
    "TaggerModel",
    "TrainConfig",
    "Utterance",
    "VocabIndex",
    "evaluate",
    "load_checkpoint",
    "load_conll",
    "parse_conll",
    "save_checkpoint",
    "serialize_conll",
    "span_f1",
    "train",
    "__version__",
]
