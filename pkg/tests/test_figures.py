"""Figure rendering writes valid PNG files."""

from oovtag.evaluation import PRF, EvalReport
from oovtag.figures import save_slot_f1_figure, save_training_curves

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def test_slot_f1_figure(tmp_path):
    report = EvalReport(
        overall=PRF(tp=8, fp=2, fn=2),
        per_slot={"song": PRF(tp=5, fp=1, fn=1), "venue": PRF(tp=3, fp=1, fn=1)},
        f1_ov=PRF(tp=5, fp=1, fn=1),
        f1_noise=PRF(tp=6, fp=4, fn=4),
        meta={},
    )
    path = tmp_path / "slots.png"
    save_slot_f1_figure(report, str(path))
    assert path.read_bytes()[:8] == PNG_MAGIC


def test_training_curves(tmp_path):
    history = [
        {"epoch": 1, "dev_f1": 0.4, "loss_total": 9.0, "loss_ce": 6.0,
         "loss_scl": 2.0, "loss_nce": 1.0},
        {"epoch": 2, "dev_f1": 0.7, "loss_total": 5.0, "loss_ce": 3.0,
         "loss_scl": 1.5, "loss_nce": 0.5},
    ]
    path = tmp_path / "curves.png"
    save_training_curves(history, str(path))
    assert path.read_bytes()[:8] == PNG_MAGIC
