"""Synthetic noisy-speech corpus with speaker-class / SNR attributes.

"Speech" is a sequence of harmonic tone bursts with smooth envelopes; the
two speaker classes differ in fundamental-frequency range. Noise is
filtered white noise. Frame labels come from an energy threshold on the
clean signal, and the SNR is measured over the speech-labelled region.
"""
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from wvad.audio_io import (
    LabelTrack,
    Waveform,
    frames_to_samples,
    num_frames,
    read_labels,
    read_wav,
    write_labels,
    write_wav,
)
from wvad.core import ConfigurationError, InputError

SPEAKER_F0 = {"A": (120.0, 180.0), "B": (200.0, 300.0)}
NOISE_BANDS = {"lowpass": (None, 1000.0), "bandpass": (400.0, 2400.0)}
PEAK_TARGET = 0.95


@dataclass(eq=False)
class Utterance:
    uid: str
    clean: Waveform
    noisy: Waveform
    labels: LabelTrack
    attributes: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.clean) != len(self.noisy) or self.clean.sample_rate != self.noisy.sample_rate:
            raise InputError(f"{self.uid}: clean/noisy length or rate mismatch")
        expected = num_frames(len(self.noisy), self.labels.frame_len, self.labels.hop)
        if len(self.labels) != expected:
            raise InputError(f"{self.uid}: {len(self.labels)} labels for {expected} frames")


# ------------------------------------------------------------------ mixing

def rms(x):
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0


@dataclass
class Mixture:
    noisy: np.ndarray
    clean: np.ndarray  # scaled clean component
    noise: np.ndarray  # scaled noise component
    gain: float  # noise gain before peak normalisation
    scale: float  # shared peak-normalisation factor


def mix_at_snr(clean, noise, snr_db, speech_mask=None, offset=0):
    """Add ``noise`` to ``clean`` at ``snr_db``.

    Signal power is taken over ``speech_mask`` (all samples if None), noise
    power over the whole noise segment. The sum is scaled by one shared
    factor so that its peak stays below 1.
    """
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if offset < 0 or noise.size - offset < clean.size:
        raise InputError("noise is shorter than the clean signal")
    seg = noise[offset:offset + clean.size]
    region = clean if speech_mask is None else clean[np.asarray(speech_mask, bool)]
    s_rms, n_rms = rms(region), rms(seg)
    if s_rms == 0.0:
        raise InputError("clean signal has no energy in its speech region")
    if n_rms == 0.0:
        raise InputError("noise segment has no energy")
    gain = s_rms / (n_rms * 10.0 ** (snr_db / 20.0))
    mixed = clean + gain * seg
    peak = float(np.max(np.abs(mixed)))
    scale = min(1.0, PEAK_TARGET / peak) if peak > 0 else 1.0
    return Mixture(mixed * scale, clean * scale, gain * seg * scale, gain, scale)


def measured_snr(clean, noisy, speech_mask=None):
    """SNR in dB of ``clean`` (over ``speech_mask``) against ``noisy - clean``."""
    clean = np.asarray(clean, dtype=np.float64)
    residual = np.asarray(noisy, dtype=np.float64) - clean
    region = clean if speech_mask is None else clean[np.asarray(speech_mask, bool)]
    return 20.0 * np.log10(rms(region) / rms(residual))


# ----------------------------------------------------------------- labels

def frame_rms_db(samples, frame_len, hop):
    n = num_frames(len(samples), frame_len, hop)
    if n == 0:
        return np.zeros(0)
    x = np.asarray(samples, dtype=np.float64)
    frames = np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop][:n]
    power = np.mean(frames * frames, axis=1)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(power)


def energy_oracle_labels(clean, frame_len, hop, threshold_db=-40.0, sample_rate=0):
    """A frame is speech iff its RMS level in dBFS reaches ``threshold_db``."""
    samples = getattr(clean, "samples", clean)
    sample_rate = getattr(clean, "sample_rate", sample_rate)
    level = frame_rms_db(samples, frame_len, hop)
    return LabelTrack.from_binary(level >= threshold_db, frame_len, hop, sample_rate)


# -------------------------------------------------------------- synthesis

@dataclass
class CorpusSpec:
    n_utterances: int = 10
    duration: float = 2.0
    sample_rate: int = 8000
    snr_grid: tuple = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0)
    speaker_classes: tuple = ("A", "B")
    noise_types: tuple = ("lowpass", "bandpass")
    duty_cycle: float = 0.5
    burst_range: tuple = (0.15, 0.5)
    threshold_db: float = -40.0
    frame_len: int = 160
    hop: int = 80

    def validate(self):
        if self.n_utterances < 1:
            raise ConfigurationError("n_utterances must be >= 1")
        if self.duration * self.sample_rate < self.frame_len:
            raise ConfigurationError("duration shorter than one frame")
        if not 0.05 <= self.duty_cycle <= 0.95:
            raise ConfigurationError("duty_cycle must lie in [0.05, 0.95]")
        if not self.snr_grid:
            raise ConfigurationError("empty SNR grid")
        for c in self.speaker_classes:
            if c not in SPEAKER_F0:
                raise ConfigurationError(f"unknown speaker class {c!r}")
        for n in self.noise_types:
            if n not in NOISE_BANDS:
                raise ConfigurationError(f"unknown noise type {n!r}")
        lo, hi = self.burst_range
        if not 0 < lo <= hi:
            raise ConfigurationError("invalid burst_range")
        if self.frame_len != 2 * self.hop:
            raise ConfigurationError("hop must be half of frame_len")
        if 2 * max(NOISE_BANDS[n][1] for n in self.noise_types) >= self.sample_rate:
            raise ConfigurationError("sample rate too low for the noise bands")

    def condition(self, index):
        """(speaker_class, snr_db, noise_type) assigned to utterance ``index``.

        Speaker classes alternate fastest; every block of
        ``len(snr_grid) * len(noise_types)`` utterances per class covers each
        (SNR, noise) pair exactly once.
        """
        nc, nn = len(self.speaker_classes), len(self.noise_types)
        j = index // nc
        k = j % (len(self.snr_grid) * nn)
        return (self.speaker_classes[index % nc], self.snr_grid[k // nn],
                self.noise_types[k % nn])


def _burst_tone(rng, n, sample_rate, f0_range):
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(*f0_range)
    glide = 1.0 + rng.uniform(-0.1, 0.1) * t / max(t[-1], 1e-9)
    phase = 2.0 * np.pi * np.cumsum(f0 * glide) / sample_rate
    n_harm = max(1, int(0.45 * sample_rate / (f0 * 1.1)))
    tilt = rng.uniform(0.6, 1.2)
    formant = rng.uniform(400.0, 1200.0)
    tone = np.zeros(n)
    for h in range(1, n_harm + 1):
        amp = h ** -tilt * (1.0 + 1.5 * np.exp(-((h * f0 - formant) / 250.0) ** 2))
        tone += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    # slow syllable-like modulation, never dropping to silence
    mod = 0.75 + 0.25 * np.sin(2 * np.pi * rng.uniform(3.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
    ramp = min(int(0.02 * sample_rate), n // 2)
    env = np.ones(n)
    if ramp > 0:
        edge = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = edge
        env[n - ramp:] = edge[::-1]
    tone *= mod * env
    return tone / (np.max(np.abs(tone)) + 1e-12)


def synth_clean(rng, spec, speaker_class):
    n = int(round(spec.duration * spec.sample_rate))
    x = np.zeros(n)
    lo, hi = spec.burst_range
    mean_burst = 0.5 * (lo + hi)
    mean_gap = mean_burst * (1.0 - spec.duty_cycle) / spec.duty_cycle
    pos = int(rng.uniform(0.3, 1.0) * mean_gap * spec.sample_rate)
    while pos < n:
        length = int(rng.uniform(lo, hi) * spec.sample_rate)
        stop = min(n, pos + length)
        if stop - pos >= int(0.05 * spec.sample_rate):
            level = rng.uniform(0.3, 0.7)
            x[pos:stop] = level * _burst_tone(rng, stop - pos, spec.sample_rate,
                                               SPEAKER_F0[speaker_class])
        pos = stop + int(rng.uniform(0.5, 1.5) * mean_gap * spec.sample_rate)
    return x


def synth_noise(rng, n, sample_rate, noise_type):
    low, high = NOISE_BANDS[noise_type]
    white = rng.standard_normal(n + sample_rate // 10)
    if low is None:
        sos = signal.butter(4, high, btype="lowpass", fs=sample_rate, output="sos")
    else:
        sos = signal.butter(4, (low, high), btype="bandpass", fs=sample_rate, output="sos")
    colored = signal.sosfilt(sos, white)
    return colored[sample_rate // 10:]  # drop filter warm-up


def synthesize_utterance(spec, seed, index):
    rng = np.random.default_rng([seed, index])
    speaker_class, snr_db, noise_type = spec.condition(index)
    clean = synth_clean(rng, spec, speaker_class)
    # guarantee at least one burst so the SNR is defined
    if not np.any(clean):
        n = min(len(clean), int(spec.burst_range[1] * spec.sample_rate))
        clean[:n] = 0.5 * _burst_tone(rng, n, spec.sample_rate, SPEAKER_F0[speaker_class])
    labels = energy_oracle_labels(clean, spec.frame_len, spec.hop, spec.threshold_db,
                                  spec.sample_rate)
    mask = frames_to_samples(labels.speech, clean.size, spec.frame_len, spec.hop)
    if not mask.any():
        mask = clean != 0
    noise = synth_noise(rng, clean.size, spec.sample_rate, noise_type)
    mix = mix_at_snr(clean, noise, snr_db, speech_mask=mask)
    attrs = {"speaker_class": speaker_class, "snr_db": float(snr_db),
             "noise_type": noise_type, "scale": mix.scale, "gain": mix.gain}
    return Utterance(f"{index:03d}", Waveform(mix.clean, spec.sample_rate),
                     Waveform(mix.noisy, spec.sample_rate), labels, attrs)


def synthesize_corpus(spec, seed):
    """Deterministic corpus; utterance ``i`` draws only from ``(seed, i)``."""
    spec.validate()
    return [synthesize_utterance(spec, seed, i) for i in range(spec.n_utterances)]


# --------------------------------------------------- utterance attribute tree

@dataclass
class TreeLevel:
    name: str
    nodes: dict  # node name -> predicate(attributes) -> bool
    attribute: str


@dataclass
class AttributeTree:
    levels: list

    def node_names(self):
        return [name for name, _ in self._walk()]

    def _walk(self, depth=0, prefix="", preds=()):
        if depth == len(self.levels):
            return
        level = self.levels[depth]
        for name, pred in level.nodes.items():
            path = f"{prefix}/{name}" if prefix else name
            chain = preds + ((level.attribute, pred),)
            yield path, chain
            yield from self._walk(depth + 1, path, chain)


def speaker_tree():
    """Two nodes: one per speaker class."""
    return AttributeTree([TreeLevel("speaker", {
        "A": lambda v: v == "A", "B": lambda v: v == "B"}, "speaker_class")])


def speaker_snr_tree(threshold_db=10.0):
    """Six nodes: A, A/hi, A/lo, B, B/hi, B/lo."""
    snr = TreeLevel("snr", {"hi": lambda v: v >= threshold_db,
                            "lo": lambda v: v < threshold_db}, "snr_db")
    return AttributeTree(speaker_tree().levels + [snr])


def tree_from_string(text, snr_threshold=10.0):
    key = text.strip().replace(" ", "")
    if key in ("speaker_class", "2"):
        return speaker_tree()
    if key in ("speaker_class,snr", "speaker_class/snr", "6"):
        return speaker_snr_tree(snr_threshold)
    raise ConfigurationError(f"unknown tree spec {text!r}")


def uat_split(utterances, tree):
    """Map every tree node (depth-first order) to the utterances it selects."""
    out = {}
    for path, chain in tree._walk():
        members = []
        for utt in utterances:
            ok = True
            for attr, pred in chain:
                if attr not in utt.attributes:
                    raise ConfigurationError(f"utterance {utt.uid} lacks attribute {attr!r}")
                if not pred(utt.attributes[attr]):
                    ok = False
                    break
            if ok:
                members.append(utt)
        out[path] = members
    return out


# ------------------------------------------------------------ corpus on disk

MANIFEST = "manifest.txt"


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_corpus(out_dir, utterances, spec=None, seed=None):
    for sub in ("clean", "noisy", "labels"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    lines = []
    if spec is not None:
        lines.append(f"# sample_rate={spec.sample_rate} frame_len={spec.frame_len} hop={spec.hop} "
                     f"threshold_db={_fmt(spec.threshold_db)} seed={seed}")
        lines.append("# snr_db measured over speech-labelled frames of the clean signal")
    for u in utterances:
        write_wav(os.path.join(out_dir, "clean", f"{u.uid}.wav"), u.clean)
        write_wav(os.path.join(out_dir, "noisy", f"{u.uid}.wav"), u.noisy)
        write_labels(os.path.join(out_dir, "labels", f"{u.uid}.txt"), u.labels)
        fields = [f"id={u.uid}"] + [f"{k}={_fmt(v)}" for k, v in u.attributes.items()]
        lines.append(" ".join(fields))
    with open(os.path.join(out_dir, MANIFEST), "w") as f:
        f.write("\n".join(lines) + "\n")


def _parse_value(v):
    try:
        return float(v) if any(c in v for c in ".eE") or v.lstrip("-").isdigit() else v
    except ValueError:
        return v


def read_manifest(corpus_dir):
    path = os.path.join(corpus_dir, MANIFEST)
    if not os.path.exists(path):
        raise InputError(f"no {MANIFEST} in {corpus_dir}")
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rec = dict(tok.split("=", 1) for tok in line.split())
            if "id" not in rec:
                raise InputError(f"manifest record without id: {line!r}")
            records.append({k: (v if k in ("id", "speaker_class", "noise_type") else _parse_value(v))
                            for k, v in rec.items()})
    return records


def load_corpus(corpus_dir):
    utts = []
    for rec in read_manifest(corpus_dir):
        uid = rec.pop("id")
        clean = read_wav(os.path.join(corpus_dir, "clean", f"{uid}.wav"))
        noisy = read_wav(os.path.join(corpus_dir, "noisy", f"{uid}.wav"))
        labels = read_labels(os.path.join(corpus_dir, "labels", f"{uid}.txt"),
                             sample_rate=noisy.sample_rate)
        utts.append(Utterance(uid, clean, noisy, labels, rec))
    if not utts:
        raise InputError(f"corpus {corpus_dir} is empty")
    return utts
