"""Confusion matrices, (tolerant) balanced accuracy and score totals."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .joints import ScoreScale


def _check(truths, preds, n_classes):
    t = np.asarray(truths, dtype=np.int64).ravel()
    p = np.asarray(preds, dtype=np.int64).ravel()
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.size} truths vs {p.size} predictions")
    for name, arr in (("truth", t), ("prediction", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"{name} class outside 0..{n_classes - 1}")
    return t, p


def confusion_matrix(truths, preds, n_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    t, p = _check(truths, preds, n_classes)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def balanced_accuracy(cm: np.ndarray) -> float:
    """Mean per-class recall over classes that occur in the truth."""
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError("confusion matrix must be square")
    rows = cm.sum(axis=1)
    present = rows > 0
    if not present.any():
        raise ValueError("confusion matrix has no samples")
    return float(np.mean(np.diag(cm)[present] / rows[present]))


def tolerant_balanced_accuracy(truths, preds, n_classes: int, tol: int = 1) -> float:
    """Balanced accuracy counting a prediction within ``tol`` classes as correct."""
    t, p = _check(truths, preds, n_classes)
    if t.size == 0:
        raise ValueError("no samples")
    hits = np.abs(t - p) <= tol
    recalls = [hits[t == c].mean() for c in np.unique(t)]
    return float(np.mean(recalls))


def tolerant_confusion(cm: np.ndarray, tol: int = 1) -> np.ndarray:
    """Per-class (correct within tol, wrong) counts from a confusion matrix."""
    n = cm.shape[0]
    idx = np.arange(n)
    near = np.abs(idx[:, None] - idx[None, :]) <= tol
    return np.stack([(cm * near).sum(axis=1), (cm * ~near).sum(axis=1)], axis=1)


@dataclass
class JointScore:
    joint: str | None          # identified joint name, None when untagged
    narrowing: int
    erosion: int


@dataclass
class ScoreSheet:
    joints: list[JointScore] = field(default_factory=list)
    total_narrowing: int = 0
    total_erosion: int = 0
    overall_total: int = 0

    def check(self) -> None:
        n = sum(j.narrowing for j in self.joints)
        e = sum(j.erosion for j in self.joints)
        if (n, e, n + e) != (self.total_narrowing, self.total_erosion, self.overall_total):
            raise AssertionError("score sheet totals are inconsistent")


def aggregate_totals(joints, narrowing_scale: ScoreScale | None = None,
                     erosion_scale: ScoreScale | None = None) -> ScoreSheet:
    joints = list(joints)
    for j in joints:
        for scale, v in ((narrowing_scale, j.narrowing), (erosion_scale, j.erosion)):
            if v < 0 or (scale is not None and v >= scale.classes):
                raise ValueError(f"score {v} out of range for joint {j.joint}")
    n = sum(j.narrowing for j in joints)
    e = sum(j.erosion for j in joints)
    return ScoreSheet(joints, n, e, n + e)


def confusion_csv(cm: np.ndarray) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["true\\pred", *range(cm.shape[1])])
    for i, row in enumerate(cm):
        wr.writerow([i, *row.tolist()])
    return buf.getvalue()


def metric_report(name: str, truths, preds, n_classes: int) -> dict:
    cm = confusion_matrix(truths, preds, n_classes)
    return {
        "model": name,
        "n": int(cm.sum()),
        "classes": n_classes,
        "balanced_accuracy": balanced_accuracy(cm),
        "pm1_balanced_accuracy": tolerant_balanced_accuracy(truths, preds, n_classes, 1),
        "confusion": cm,
    }


def evaluate_records(pred, truth) -> list[dict]:
    """Per (limb type, task) metric reports over joints scored in both sets.

    Records are matched on (patient_id, limb); unmatched records are ignored.
    """
    from .joints import TASKS, default_scale
    index = {(r.patient_id, r.limb): r for r in pred}
    pairs: dict[tuple[str, str], tuple[list, list]] = {}
    for t in truth:
        p = index.get((t.patient_id, t.limb))
        if p is None:
            continue
        for task in TASKS:
            key = (t.limb.limb_type, task)
            for joint, v in t.scores(task).items():
                pv = p.scores(task).get(joint)
                if v is None or pv is None:
                    continue
                tr, pr = pairs.setdefault(key, ([], []))
                tr.append(v)
                pr.append(pv)
    reports = []
    for (lt, task), (tr, pr) in sorted(pairs.items()):
        reports.append(metric_report(f"score-{lt}-{task}", tr, pr, default_scale(task, lt).classes))
    return reports


def evaluate_csvs(pred_csv: str, truth_csv: str) -> list[dict]:
    from .dataset import read_scores_csv
    pred, _ = read_scores_csv(pred_csv)
    truth, _ = read_scores_csv(truth_csv)
    reports = evaluate_records(pred, truth)
    if not reports:
        raise ValueError("no joints are scored in both CSVs")
    return reports


def write_eval(reports: list[dict], out_dir: str) -> None:
    """``metrics.csv`` summary, ``metrics.txt`` and one confusion CSV per model."""
    import os
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["model", "n", "classes", "balanced_accuracy", "pm1_balanced_accuracy"])
        for r in reports:
            wr.writerow([r["model"], r["n"], r["classes"], f"{r['balanced_accuracy']:.6f}",
                         f"{r['pm1_balanced_accuracy']:.6f}"])
    lines = []
    for r in reports:
        with open(os.path.join(out_dir, f"confusion-{r['model']}.csv"), "w") as fh:
            fh.write(confusion_csv(r["confusion"]))
        lines.append(f"{r['model']}: n={r['n']} balanced accuracy {r['balanced_accuracy']:.4f}, "
                     f"within one class {r['pm1_balanced_accuracy']:.4f}")
    with open(os.path.join(out_dir, "metrics.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
