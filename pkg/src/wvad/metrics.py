"""Frame accuracy, ROC/AUC and score histograms."""
from dataclasses import dataclass

import numpy as np

from wvad.core import InputError


class UndefinedROCError(InputError):
    """ROC needs both classes in the ground truth."""


def frame_accuracy(pred, truth):
    """Percentage of frames where ``pred`` equals ``truth``."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise InputError("prediction and truth differ in length")
    if pred.size == 0:
        raise InputError("no frames to score")
    return 100.0 * np.count_nonzero(pred == truth) / pred.size


@dataclass
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int


def confusion(pred, truth):
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    return Confusion(int(np.sum(pred & truth)), int(np.sum(pred & ~truth)),
                     int(np.sum(~pred & ~truth)), int(np.sum(~pred & truth)))


@dataclass
class RocCurve:
    """Points ordered by decreasing threshold; the first is (0, 0) at +inf."""

    thresholds: np.ndarray
    tps: np.ndarray  # cumulative true positives per point
    fps: np.ndarray  # cumulative false positives per point

    @property
    def n_pos(self):
        return int(self.tps[-1])

    @property
    def n_neg(self):
        return int(self.fps[-1])

    @property
    def tpr(self):
        return self.tps / self.n_pos

    @property
    def fpr(self):
        return self.fps / self.n_neg

    def operating_point(self, threshold):
        """Confusion counts when frames with ``score >= threshold`` are called speech."""
        idx = np.searchsorted(-self.thresholds, -threshold, side="right") - 1
        tp, fp = int(self.tps[idx]), int(self.fps[idx])
        return Confusion(tp, fp, self.n_neg - fp, self.n_pos - tp)


def roc_curve(scores, truth):
    """ROC with speech as the positive class; equal scores share one threshold."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=bool).ravel()
    if scores.shape != truth.shape:
        raise InputError("scores and truth differ in length")
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedROCError("ROC is undefined when only one class is present")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    t = truth[order]
    tps = np.cumsum(t)
    fps = np.cumsum(~t)
    # last index of each run of equal scores
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    return RocCurve(np.r_[np.inf, s[last]], np.r_[0, tps[last]], np.r_[0, fps[last]])


def auc(curve):
    """Trapezoidal area under the ROC curve."""
    x, y = curve.fpr, curve.tpr
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


def roc_auc(scores, truth):
    return auc(roc_curve(scores, truth))


@dataclass
class Histogram:
    edges: np.ndarray  # (bins + 1,)
    counts: np.ndarray  # (2, bins); row 0 non-speech channel, row 1 speech channel

    @property
    def total(self):
        return int(self.counts[0].sum())

    def outer_mass(self, channel, width=0.1):
        """Count of values below ``width`` or at/above ``1 - width``."""
        lo = self.edges[:-1]
        hi = self.edges[1:]
        mask = (hi <= width + 1e-12) | (lo >= 1.0 - width - 1e-12)
        return int(self.counts[channel][mask].sum())


FILTERS = ("all", "tn", "tp")


def channel_histogram(values, bins=10, subset="all", truth=None):
    """Per-channel histograms of ``(2, n)`` values over [0, 1].

    ``subset`` restricts frames to true negatives ("tn") or true positives
    ("tp") of the decision rule; those need ``truth``.
    """
    data = np.asarray(getattr(values, "data", values), dtype=np.float64)
    if bins < 2:
        raise InputError("need at least 2 bins")
    if subset not in FILTERS:
        raise InputError(f"unknown filter {subset!r}")
    if subset != "all":
        if truth is None:
            raise InputError(f"filter {subset!r} needs truth labels")
        truth = np.asarray(truth, dtype=bool)
        pred = data[1] >= data[0]
        keep = (pred & truth) if subset == "tp" else (~pred & ~truth)
        data = data[:, keep]
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts = np.stack([np.histogram(np.clip(row, 0.0, 1.0), bins=edges)[0] for row in data])
    return Histogram(edges, counts)
