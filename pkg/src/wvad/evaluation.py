"""Corpus-level scoring: per-condition ACC/AUC tables and figure data."""
import logging
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from wvad.core import InputError
from wvad.metrics import (
    UndefinedROCError,
    auc,
    channel_histogram,
    confusion,
    frame_accuracy,
    roc_curve,
)
from wvad.model import predict_labels

log = logging.getLogger(__name__)

GROUP_KEYS = {"snr": "snr_db", "snr_db": "snr_db", "noise_type": "noise_type",
              "speaker_class": "speaker_class", "speaker": "speaker_class"}
STAGES = ("db1", "db2", "db3", "final")


class DecisionMismatchError(RuntimeError):
    """ROC operating point at score 0 disagrees with the decision rule."""


@dataclass
class UtteranceResult:
    uid: str
    attributes: dict
    scores: np.ndarray  # (2, n_frames)
    truth: np.ndarray  # bool per frame
    taps: list = None

    @property
    def pred(self):
        return predict_labels(self.scores)

    @property
    def score(self):
        return self.scores[1].astype(np.float64) - self.scores[0].astype(np.float64)


def run_model(model, utterances, keep_taps=False):
    out = []
    for u in utterances:
        scores, taps = model.forward(u.noisy, return_intermediates=True)
        out.append(UtteranceResult(u.uid, u.attributes, scores.data, u.labels.speech,
                                   taps if keep_taps else None))
    return out


def check_decision_consistency(score, pred, truth):
    """Assert the ROC point at threshold 0 reproduces the decision-rule confusion."""
    try:
        curve = roc_curve(score, truth)
    except UndefinedROCError:
        return
    at_zero = curve.operating_point(0.0)
    direct = confusion(pred, truth)
    if at_zero != direct:
        raise DecisionMismatchError(f"ROC at 0: {at_zero}, decision rule: {direct}")


def _pooled(results):
    score = np.concatenate([r.score for r in results])
    pred = np.concatenate([r.pred for r in results])
    truth = np.concatenate([r.truth for r in results])
    return score, pred, truth


def _row(label, results):
    score, pred, truth = _pooled(results)
    check_decision_consistency(score, pred, truth)
    row = OrderedDict(label)
    row["n_utts"] = len(results)
    row["n_frames"] = int(truth.size)
    row["acc"] = frame_accuracy(pred, truth)
    try:
        row["auc"] = auc(roc_curve(score, truth))
    except UndefinedROCError:
        log.warning("group %s has a single class; AUC reported as NA", dict(label) or "ALL")
        row["auc"] = None
    return row


def summarize(results, by=()):
    """Rows of ACC (%) and AUC per attribute group, then a pooled AVG row."""
    keys = []
    for k in by:
        if k not in GROUP_KEYS:
            raise InputError(f"unknown group key {k!r}; choose from {sorted(GROUP_KEYS)}")
        keys.append(k)
    if not results:
        raise InputError("nothing to evaluate")
    rows = []
    if keys:
        groups = OrderedDict()
        for r in results:
            try:
                gid = tuple(r.attributes[GROUP_KEYS[k]] for k in keys)
            except KeyError as exc:
                raise InputError(f"utterance {r.uid} lacks attribute {exc}") from None
            groups.setdefault(gid, []).append(r)
        for gid in sorted(groups, key=lambda g: tuple((isinstance(v, str), v) for v in g)):
            rows.append(_row(zip(keys, gid), groups[gid]))
    rows.append(_row([(k, "AVG") for k in keys] or [("group", "AVG")], results))
    return rows


def _fmt(key, v):
    if v is None:
        return "NA"
    if key in ("acc", "auc"):
        return f"{v:.6f}"
    return str(v)


def rows_to_csv(rows):
    header = list(rows[0].keys())
    lines = [",".join(header)]
    lines += [",".join(_fmt(h, r[h]) for h in header) for r in rows]
    return "\n".join(lines) + "\n"


def stage_values(result, stage):
    if stage not in STAGES:
        raise InputError(f"unknown stage {stage!r}; choose from {STAGES}")
    if stage == "final":
        return result.scores
    return result.taps[STAGES.index(stage)]


def stage_histogram(results, stage, subset="all", bins=10):
    """Histogram over all utterances; TN/TP are taken from the final decision."""
    values = np.concatenate([stage_values(r, stage) for r in results], axis=1)
    final = np.concatenate([r.scores for r in results], axis=1)
    truth = np.concatenate([r.truth for r in results])
    if subset != "all":
        pred = predict_labels(final)
        keep = (pred & truth) if subset == "tp" else (~pred & ~truth)
        return channel_histogram(values[:, keep], bins)
    return channel_histogram(values, bins)


def histogram_csv(hist):
    lines = ["bin_lo,bin_hi,count_ns,count_s"]
    for lo, hi, cn, cs in zip(hist.edges[:-1], hist.edges[1:], hist.counts[0], hist.counts[1]):
        lines.append(f"{lo:.4f},{hi:.4f},{cn},{cs}")
    return "\n".join(lines) + "\n"


def roc_csv(curve):
    lines = ["threshold,fpr,tpr"]
    for t, f, p in zip(curve.thresholds, curve.fpr, curve.tpr):
        lines.append(f"{t:.8f},{f:.8f},{p:.8f}")
    return "\n".join(lines) + "\n"
