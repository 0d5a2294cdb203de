"""Frame-level metrics: confusion counts, F1 / H_PRS thresholds, AUC-ROC, AUC-PR.

Conventions: a frame is predicted anomalous when ``score >= thr``; any 0/0 ratio
is 0; threshold ties resolve to the smallest threshold.  F1 and H_PRS are
evaluated from integer counts (``2tp / (2tp + fp + fn)`` and
``3 tp tn / (tn (2tp + fp + fn) + tp (tn + fp))``), algebraically the usual
harmonic means, so equal objectives always compare equal in floating point.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, NamedTuple, Sequence

import numpy as np

from .domain import ConfusionCounts, ThresholdSet
from .errors import MissingLabel, NoPositives, SingleClass


class PRF(NamedTuple):
    precision: float
    recall: float
    specificity: float
    f1: float
    h_prs: float


def _ratio(a, b):
    return a / b if b else 0.0


def f1_from_counts(tp, fp, fn):
    tp, fp, fn = np.asarray(tp, float), np.asarray(fp, float), np.asarray(fn, float)
    den = 2 * tp + fp + fn
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(tp > 0, 2 * tp / np.where(den > 0, den, 1), 0.0)


def hprs_from_counts(tp, fp, tn, fn):
    tp, fp, tn, fn = (np.asarray(v, float) for v in (tp, fp, tn, fn))
    den = tn * (2 * tp + fp + fn) + tp * (tn + fp)
    ok = (tp > 0) & (tn > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ok, 3 * tp * tn / np.where(den > 0, den, 1), 0.0)


def prf_metrics(counts: ConfusionCounts) -> PRF:
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    return PRF(
        _ratio(tp, tp + fp),
        _ratio(tp, tp + fn),
        _ratio(tn, tn + fp),
        float(f1_from_counts(tp, fp, fn)),
        float(hprs_from_counts(tp, fp, tn, fn)),
    )


def align(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """Turn (mapping, mapping) or (sequence, sequence) into aligned arrays.

    For mappings, every scored key needs a label; labelled keys without a score
    are ignored (see :func:`count_unscored`).
    """
    if isinstance(scores, Mapping):
        if not isinstance(labels, Mapping):
            raise TypeError("scores and labels must both be mappings or both be sequences")
        keys = list(scores)
        try:
            lab = [labels[k] for k in keys]
        except KeyError as exc:
            raise MissingLabel(f"scored frame {exc.args[0]!r} has no label") from None
        return (np.fromiter((scores[k] for k in keys), dtype=np.float64, count=len(keys)),
                np.asarray(lab, dtype=np.int64).reshape(len(keys)))
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.int64).ravel()
    if s.shape != y.shape:
        raise MissingLabel(f"{len(s)} scores but {len(y)} labels")
    return s, y


def count_unscored(scores: Mapping, labels: Mapping) -> int:
    return sum(1 for k in labels if k not in scores)


def confusion_at(scores, labels, thr: float) -> ConfusionCounts:
    s, y = align(scores, labels)
    pred = s >= thr
    pos = y == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    return ConfusionCounts(tp, fp, int(np.sum(~pos)) - fp, int(np.sum(pos)) - tp)


@dataclass(frozen=True)
class Sweep:
    """Confusion counts at every candidate threshold, ascending."""

    thresholds: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    tn: np.ndarray
    fn: np.ndarray

    @property
    def f1(self) -> np.ndarray:
        return f1_from_counts(self.tp, self.fp, self.fn)

    @property
    def h_prs(self) -> np.ndarray:
        return hprs_from_counts(self.tp, self.fp, self.tn, self.fn)


def threshold_sweep(scores, labels) -> Sweep:
    """Exact sweep over all distinct scores plus a sentinel at max + 1."""
    s, y = align(scores, labels)
    if len(s) == 0:
        raise SingleClass("no scored frames")
    uniq, inv = np.unique(s, return_inverse=True)
    pos_per = np.bincount(inv, weights=(y == 1), minlength=len(uniq))
    neg_per = np.bincount(inv, weights=(y != 1), minlength=len(uniq))
    # predictions at threshold uniq[i]: all scores >= uniq[i]
    tp = np.cumsum(pos_per[::-1])[::-1]
    fp = np.cumsum(neg_per[::-1])[::-1]
    n_pos, n_neg = pos_per.sum(), neg_per.sum()
    thr = np.append(uniq, uniq[-1] + 1.0)
    tp = np.append(tp, 0.0).astype(np.int64)
    fp = np.append(fp, 0.0).astype(np.int64)
    return Sweep(thr, tp, fp, int(n_neg) - fp, int(n_pos) - tp)


def calibrate_thresholds(scores, labels) -> ThresholdSet:
    s, y = align(scores, labels)
    if not ((y == 1).any() and (y != 1).any()):
        raise SingleClass("calibration needs both normal and anomalous frames")
    sw = threshold_sweep(s, y)
    f1, h = sw.f1, sw.h_prs
    i_f1 = int(np.argmax(f1))  # first maximum == smallest threshold
    i_h = int(np.argmax(h))
    return ThresholdSet(float(sw.thresholds[i_f1]), float(sw.thresholds[i_h]),
                        float(f1[i_f1]), float(h[i_h]), len(sw.thresholds))


def auc_roc(scores, labels) -> float:
    """Mann-Whitney AUC: P(pos > neg) + 0.5 P(pos == neg)."""
    s, y = align(scores, labels)
    pos = y == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC-ROC needs both classes")
    uniq, inv, counts = np.unique(s, return_inverse=True, return_counts=True)
    below = np.concatenate(([0], np.cumsum(counts)[:-1]))
    # twice the midrank keeps everything integral
    rank2 = 2 * below + counts + 1
    u2 = int(rank2[inv[pos]].sum()) - n_pos * (n_pos + 1)
    return u2 / (2 * n_pos * n_neg)


def auc_pr(scores, labels) -> float:
    """Average precision with tied scores processed as one block."""
    s, y = align(scores, labels)
    n_pos = int((y == 1).sum())
    if n_pos == 0:
        raise NoPositives("AUC-PR needs at least one anomalous frame")
    uniq, inv = np.unique(s, return_inverse=True)
    pos_per = np.bincount(inv, weights=(y == 1), minlength=len(uniq))[::-1]
    all_per = np.bincount(inv, minlength=len(uniq))[::-1]
    tp = np.cumsum(pos_per)
    seen = np.cumsum(all_per)
    return float(np.sum((pos_per / n_pos) * (tp / seen)))


def roc_points(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds) at every sweep candidate, for external plotting."""
    sw = threshold_sweep(scores, labels)
    n_pos = sw.tp[0] + sw.fn[0]
    n_neg = sw.fp[0] + sw.tn[0]
    return (sw.fp / max(n_neg, 1), sw.tp / max(n_pos, 1), sw.thresholds)


def pr_points(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    sw = threshold_sweep(scores, labels)
    with np.errstate(divide="ignore", invalid="ignore"):
        prec = np.where(sw.tp + sw.fp > 0, sw.tp / np.maximum(sw.tp + sw.fp, 1), 0.0)
    n_pos = sw.tp[0] + sw.fn[0]
    return prec, sw.tp / max(n_pos, 1), sw.thresholds


@dataclass(frozen=True)
class SliceMetrics:
    n_frames: int
    n_anomalous: int
    auc_roc: float | None
    auc_pr: float | None
    f1_at_thr_f1: float
    hprs_at_thr_hprs: float
    confusion_f1: ConfusionCounts
    confusion_hprs: ConfusionCounts

    def to_dict(self) -> dict:
        return {"n_frames": self.n_frames, "n_anomalous": self.n_anomalous,
                "auc_roc": self.auc_roc, "auc_pr": self.auc_pr,
                "f1_at_thrF1": self.f1_at_thr_f1, "hprs_at_thrHPRS": self.hprs_at_thr_hprs,
                "confusion_at_thrF1": self.confusion_f1.to_dict(),
                "confusion_at_thrHPRS": self.confusion_hprs.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SliceMetrics":
        return cls(d["n_frames"], d["n_anomalous"], d["auc_roc"], d["auc_pr"], d["f1_at_thrF1"],
                   d["hprs_at_thrHPRS"], ConfusionCounts.from_dict(d["confusion_at_thrF1"]),
                   ConfusionCounts.from_dict(d["confusion_at_thrHPRS"]))


def slice_metrics(s: np.ndarray, y: np.ndarray, thresholds: ThresholdSet) -> SliceMetrics:
    n_pos = int((y == 1).sum())
    both = 0 < n_pos < len(y)
    c_f1 = confusion_at(s, y, thresholds.thr_f1)
    c_h = confusion_at(s, y, thresholds.thr_hprs)
    return SliceMetrics(
        len(y), n_pos,
        auc_roc(s, y) if both else None,
        auc_pr(s, y) if n_pos else None,
        prf_metrics(c_f1).f1, prf_metrics(c_h).h_prs, c_f1, c_h)


@dataclass
class EvalReport:
    thresholds: ThresholdSet
    slices: dict[str, SliceMetrics] = field(default_factory=dict)
    n_unscored: int = 0

    @property
    def overall(self) -> SliceMetrics:
        return self.slices["overall"]

    def to_dict(self) -> dict:
        return {"thresholds": self.thresholds.to_dict(), "n_unscored": self.n_unscored,
                "slices": {k: v.to_dict() for k, v in self.slices.items()}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalReport":
        return cls(ThresholdSet.from_dict(d["thresholds"]),
                   {k: SliceMetrics.from_dict(v) for k, v in d["slices"].items()},
                   d.get("n_unscored", 0))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    def rows(self) -> list[tuple[str, str, Any]]:
        out = []
        for name, m in self.slices.items():
            d = m.to_dict()
            for metric in ("auc_roc", "auc_pr", "f1_at_thrF1", "hprs_at_thrHPRS", "n_frames", "n_anomalous"):
                out.append((name, metric, "NA" if d[metric] is None else d[metric]))
            for tag in ("thrF1", "thrHPRS"):
                for k, v in d[f"confusion_at_{tag}"].items():
                    out.append((name, f"{k}_at_{tag}", v))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("slice", "metric", "value"))
        w.writerows(self.rows())
        return buf.getvalue()


def evaluate(scores: Mapping, labels: Mapping, thresholds: ThresholdSet, *,
             cameras: Mapping | None = None, events: Mapping | None = None,
             eval_windows: Mapping | None = None) -> EvalReport:
    """Overall and sliced metrics over the scored frames.

    ``cameras`` / ``eval_windows`` map frame keys to a group; when ``cameras``
    is omitted and keys are ``(camera_id, frame_index)`` tuples, the camera is
    read from the key.  ``events`` maps anomalous frame keys to their category;
    each event slice holds that category's frames plus every normal frame.
    """
    keys = list(scores)
    s, y = align(scores, labels)
    report = EvalReport(thresholds, n_unscored=count_unscored(scores, labels))
    report.slices["overall"] = slice_metrics(s, y, thresholds)

    def grouped(mapping, prefix):
        groups: dict[Any, list[int]] = {}
        for i, k in enumerate(keys):
            g = mapping.get(k)
            if g is not None:
                groups.setdefault(g, []).append(i)
        for g in sorted(groups, key=lambda v: (str(type(v)), v)):
            idx = np.array(groups[g])
            report.slices[f"{prefix}={g}"] = slice_metrics(s[idx], y[idx], thresholds)

    if cameras is None and keys and isinstance(keys[0], tuple):
        cameras = {k: k[0] for k in keys}
    if cameras is not None:
        grouped(cameras, "camera")
    if eval_windows is not None:
        grouped(eval_windows, "window")
    if events is not None:
        neg = np.flatnonzero(y != 1)
        cats: dict[str, list[int]] = {}
        for i, k in enumerate(keys):
            c = events.get(k)
            if c and y[i] == 1:
                cats.setdefault(c, []).append(i)
        for c in sorted(cats):
            idx = np.concatenate([np.array(cats[c]), neg])
            report.slices[f"event={c}"] = slice_metrics(s[idx], y[idx], thresholds)
    return report


def metric_in_unit_interval(v) -> bool:
    return v is None or (0.0 <= v <= 1.0 and not math.isnan(v))
