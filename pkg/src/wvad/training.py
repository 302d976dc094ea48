"""Loss, backpropagation and training loops for WVAD and WEVAD."""
import time
from dataclasses import dataclass, field

import numpy as np

from wvad.core import (
    AdamState,
    ConfigurationError,
    InputError,
    adam_step,
    conv1d_backward,
    conv1d_forward,
)
from wvad.dataset import uat_split
from wvad.model import EnsembleModel, WvadConfig, WvadModel, _as_input, predict_labels


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 4
    seed: int = 0
    clamp_epsilon: float = 1e-7
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not 0.0 < self.clamp_epsilon < 0.1:
            raise ConfigurationError("clamp_epsilon must lie in (0, 0.1)")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    acc: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    model: object = None
    stage1: dict = field(default_factory=dict)

    @property
    def losses(self):
        return [e.loss for e in self.epochs]

    @property
    def final_acc(self):
        return self.epochs[-1].acc if self.epochs else float("nan")

    def to_csv(self):
        rows = ["epoch,loss,acc"]
        rows += [f"{e.epoch},{e.loss:.8f},{e.acc:.4f}" for e in self.epochs]
        return "\n".join(rows) + "\n"


# -------------------------------------------------------------------- loss

def _targets(labels):
    onehot = getattr(labels, "onehot", None)
    if onehot is not None:
        return onehot.T.astype(np.float64)
    return np.asarray(labels, dtype=np.float64)


def bce_loss(scores, labels, eps=1e-7):
    """Mean per-channel binary cross-entropy and its gradient w.r.t. the scores.

    ``labels`` is a LabelTrack or a ``(2, n_frames)`` target array. Scores
    are clamped to ``[eps, 1 - eps]``; the gradient is zero where clamping
    is active.
    """
    p = np.asarray(getattr(scores, "data", scores), dtype=np.float64)
    t = _targets(labels)
    if p.shape != t.shape:
        raise InputError(f"scores {p.shape} and labels {t.shape} differ in frame count")
    pc = np.clip(p, eps, 1.0 - eps)
    n = p.size
    loss = -np.sum(t * np.log(pc) + (1.0 - t) * np.log1p(-pc)) / n
    grad = (pc - t) / (pc * (1.0 - pc)) / n
    grad[(p < eps) | (p > 1.0 - eps)] = 0.0
    return float(loss), grad


# ---------------------------------------------------------- backpropagation

def _head_backward(model, s, fb_out, taps, grad, grads, need_s_grad=True):
    """Backprop through decoder and FB; appends head grads, returns grad w.r.t. s."""
    inputs = [fb_out] + taps[:-1]
    dec_grads = []
    for layer, x, y in zip(reversed(model.decoder), reversed(inputs), reversed(taps)):
        grad, gk, gb = conv1d_backward(x, layer, grad, output=y)
        dec_grads.append((gk, gb))
    g_s, gk, gb = conv1d_backward(s, model.fb, grad, output=fb_out,
                                  need_input_grad=need_s_grad)
    grads.extend([gk, gb])
    for gk, gb in reversed(dec_grads):
        grads.extend([gk, gb])
    return g_s


def wvad_loss_and_grads(model, waveform, labels, eps=1e-7):
    """Loss, gradients for ``model.params()`` order, and the forward scores."""
    x = _as_input(waveform, model.config)
    acts = [x]
    for layer in model.encoder:
        acts.append(conv1d_forward(acts[-1], layer))
    s = acts[-1]
    fb_out = model.framing_block(s)
    scores, taps = model.decode(fb_out, return_intermediates=True)
    loss, grad = bce_loss(scores, labels, eps)
    head = []
    g = _head_backward(model, s, fb_out, taps, grad, head)
    enc = []
    for i in range(len(model.encoder) - 1, -1, -1):
        layer = model.encoder[i]
        g, gk, gb = conv1d_backward(acts[i], layer, g, output=acts[i + 1],
                                    need_input_grad=i > 0)
        enc.append((gk, gb))
    grads = [t for pair in reversed(enc) for t in pair] + head
    return loss, grads, scores


def head_loss_and_grads(model, features, labels, eps=1e-7):
    """Same as above for FB + decoder only, given precomputed encoder features."""
    fb_out = model.framing_block(features)
    scores, taps = model.decode(fb_out, return_intermediates=True)
    loss, grad = bce_loss(scores, labels, eps)
    grads = []
    # frozen encoder: no gradient w.r.t. the features
    _head_backward(model, features, fb_out, taps, grad, grads, need_s_grad=False)
    return loss, grads, scores


# ------------------------------------------------------------------- loops

def _check_data(model, utterances):
    if not utterances:
        raise InputError("training set is empty")
    rate = model.config.sample_rate
    for u in utterances:
        if u.noisy.sample_rate != rate:
            raise InputError(f"utterance {u.uid} is {u.noisy.sample_rate} Hz, model expects {rate} Hz")
        if len(u.labels) != model.config.num_frames(len(u.noisy)):
            raise InputError(f"utterance {u.uid}: label count does not match model framing")


def _fit(params, step_fn, n_items, cfg, on_epoch=None):
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    report = TrainReport()
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n_items)
        total_loss, correct, frames = 0.0, 0, 0
        for start in range(0, n_items, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            acc_grads = None
            for idx in batch:
                loss, grads, hits, n = step_fn(int(idx))
                total_loss += loss
                correct += hits
                frames += n
                if acc_grads is None:
                    acc_grads = [g.astype(np.float64) for g in grads]
                else:
                    for a, g in zip(acc_grads, grads):
                        a += g
            for a in acc_grads:
                a /= len(batch)
            adam_step(params, acc_grads, state)
        stats = EpochStats(epoch, total_loss / n_items, 100.0 * correct / max(frames, 1),
                           time.perf_counter() - t0)
        if not np.isfinite(stats.loss):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
        report.epochs.append(stats)
        # a truthy return from the callback ends training early
        if on_epoch is not None and on_epoch(stats):
            break
    return report


def train_wvad(model, utterances, cfg, on_epoch=None):
    """Train every layer of ``model`` in place on the noisy utterances."""
    _check_data(model, utterances)

    def step(i):
        u = utterances[i]
        loss, grads, scores = wvad_loss_and_grads(model, u.noisy, u.labels, cfg.clamp_epsilon)
        hits = int(np.sum(predict_labels(scores) == u.labels.speech))
        return loss, grads, hits, len(u.labels)

    report = _fit(model.params(), step, len(utterances), cfg, on_epoch)
    report.model = model
    return report


def train_head(ensemble, utterances, cfg, on_epoch=None):
    """Train FB + decoder of an ensemble with its encoders held fixed.

    Feature statistics are refit on ``utterances`` first; encoder outputs are
    computed once and cached.
    """
    _check_data(ensemble, utterances)
    raw = [ensemble.encode(u.noisy) for u in utterances]
    ensemble.fit_feature_stats(raw)
    features = [ensemble.normalize(f) for f in raw]

    def step(i):
        u = utterances[i]
        loss, grads, scores = head_loss_and_grads(ensemble, features[i], u.labels,
                                                  cfg.clamp_epsilon)
        hits = int(np.sum(predict_labels(scores) == u.labels.speech))
        return loss, grads, hits, len(u.labels)

    report = _fit(ensemble.head_params(), step, len(utterances), cfg, on_epoch)
    report.model = ensemble
    return report


def train_wevad(utterances, tree, cfg, model_config=None, pretrained=None, on_epoch=None):
    """Two-stage WEVAD training.

    Stage 1 trains one WVAD per tree node on that node's subset (models in
    ``pretrained``, keyed by node name, are reused as-is). Stage 2 freezes
    the collected encoders and trains a fresh FB + decoder on all data.
    Returns ``(ensemble, report)``; ``report.stage1`` holds per-node reports.
    """
    model_config = model_config or WvadConfig()
    pretrained = dict(pretrained or {})
    subsets = uat_split(utterances, tree)
    for name, subset in subsets.items():
        if not subset and name not in pretrained:
            raise ConfigurationError(f"tree node {name!r} selects no utterances")
    stage1 = {}
    encoders = []
    for i, (name, subset) in enumerate(subsets.items()):
        if name in pretrained:
            model = pretrained[name]
        else:
            model = WvadModel.init(model_config, seed=cfg.seed + 1 + i)
            stage1[name] = train_wvad(model, subset, cfg)
        encoders.append(model.encoder)
    ensemble = EnsembleModel.from_encoders(model_config, encoders, list(subsets),
                                           seed=cfg.seed)
    report = train_head(ensemble, utterances, cfg, on_epoch)
    report.stage1 = stage1
    return ensemble, report


# ---------------------------------------------------------- config files

_KEYS = {
    "lr": ("learning_rate", float),
    "learning_rate": ("learning_rate", float),
    "epochs": ("epochs", int),
    "batch": ("batch_size", int),
    "batch_size": ("batch_size", int),
    "seed": ("seed", int),
    "eps": ("clamp_epsilon", float),
    "beta1": ("beta1", float),
    "beta2": ("beta2", float),
    "adam_eps": ("adam_eps", float),
}


def parse_keyvalue(text):
    """``key = value`` lines; blank lines and ``#`` comments ignored."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {n}: expected key = value, got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key] = value
    return out


def train_config_from_dict(values):
    """Split a key-value mapping into a TrainConfig and the remaining keys."""
    cfg = TrainConfig()
    rest = {}
    for key, value in values.items():
        if key in _KEYS:
            attr, conv = _KEYS[key]
            try:
                setattr(cfg, attr, conv(value))
            except ValueError as exc:
                raise ConfigurationError(f"bad value for {key}: {value!r}") from exc
        else:
            rest[key] = value
    cfg.validate()
    return cfg, rest
