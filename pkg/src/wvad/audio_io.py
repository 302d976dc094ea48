"""PCM16 WAV and frame-label file I/O, plus the shared framing arithmetic."""
import re
from dataclasses import dataclass

import numpy as np

from wvad.core import FormatError, InputError

NONSPEECH = np.array([1, 0], dtype=np.int8)
SPEECH = np.array([0, 1], dtype=np.int8)


@dataclass(eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise InputError("waveform must be a non-empty 1D signal")

    def __len__(self):
        return self.samples.size


@dataclass(eq=False)
class LabelTrack:
    """Per-frame one-hot labels; row ``[1, 0]`` is non-speech, ``[0, 1]`` speech."""

    onehot: np.ndarray  # (n_frames, 2)
    frame_len: int
    hop: int
    sample_rate: int

    def __post_init__(self):
        self.onehot = np.asarray(self.onehot, dtype=np.int8).reshape(-1, 2)
        if self.onehot.size and not np.all(self.onehot.sum(axis=1) == 1):
            raise FormatError("labels must be [1,0] or [0,1]")
        if self.onehot.size and not np.all((self.onehot == 0) | (self.onehot == 1)):
            raise FormatError("labels must be [1,0] or [0,1]")

    @classmethod
    def from_binary(cls, speech, frame_len, hop, sample_rate):
        speech = np.asarray(speech, dtype=bool)
        onehot = np.stack([~speech, speech], axis=1).astype(np.int8)
        return cls(onehot, frame_len, hop, sample_rate)

    @property
    def speech(self):
        """Boolean speech indicator per frame."""
        return self.onehot[:, 1].astype(bool)

    def __len__(self):
        return self.onehot.shape[0]


def num_frames(length, frame_len, hop):
    if length < frame_len:
        return 0
    return (length - frame_len) // hop + 1


def frame_bounds(n_frames, frame_len, hop):
    """(start, stop) sample indices of each frame."""
    starts = np.arange(n_frames) * hop
    return np.stack([starts, starts + frame_len], axis=1)


def frames_to_samples(speech, length, frame_len, hop):
    """Sample-level mask covered by any speech frame."""
    mask = np.zeros(length, dtype=bool)
    for start, stop in frame_bounds(len(speech), frame_len, hop)[np.asarray(speech, bool)]:
        mask[start:stop] = True
    return mask


# --------------------------------------------------------------------- WAV

def read_wav(path):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    pcm = None
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        size = int.from_bytes(data[pos + 4:pos + 8], "little")
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise FormatError(f"{path}: truncated {cid!r} chunk")
        if cid == b"fmt ":
            if size < 16:
                raise FormatError(f"{path}: short fmt chunk")
            fmt = np.frombuffer(body[:16], dtype="<u2", count=2).tolist() + [
                int.from_bytes(body[4:8], "little"),
                int.from_bytes(body[14:16], "little"),
            ]
        elif cid == b"data":
            pcm = body
        pos += 8 + size + (size & 1)
    if fmt is None or pcm is None:
        raise FormatError(f"{path}: missing fmt or data chunk")
    tag, channels, rate, bits = fmt
    if tag != 1:
        raise FormatError(f"{path}: only PCM is supported (format tag {tag})")
    if channels != 1:
        raise FormatError(f"{path}: expected mono, found {channels} channels")
    if bits != 16:
        raise FormatError(f"{path}: expected 16-bit samples, found {bits}")
    if len(pcm) % 2:
        raise FormatError(f"{path}: odd data length")
    samples = np.frombuffer(pcm, dtype="<i2").astype(np.float32) / 32768.0
    return Waveform(samples, rate)


def to_pcm16(samples):
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    return np.clip(np.rint(x * 32768.0), -32768, 32767).astype("<i2")


def write_wav(path, waveform):
    pcm = to_pcm16(waveform.samples).tobytes()
    rate = int(waveform.sample_rate)
    header = b"".join([
        b"RIFF", (36 + len(pcm)).to_bytes(4, "little"), b"WAVE",
        b"fmt ", (16).to_bytes(4, "little"),
        (1).to_bytes(2, "little"), (1).to_bytes(2, "little"),
        rate.to_bytes(4, "little"), (2 * rate).to_bytes(4, "little"),
        (2).to_bytes(2, "little"), (16).to_bytes(2, "little"),
        b"data", len(pcm).to_bytes(4, "little"),
    ])
    with open(path, "wb") as f:
        f.write(header + pcm)


# ------------------------------------------------------------------ labels

_HEADER = re.compile(r"^#frame=(\d+) hop=(\d+) rate=(\d+)$")


def write_labels(path, track):
    lines = [f"#frame={track.frame_len} hop={track.hop} rate={track.sample_rate}"]
    lines += ["1" if s else "0" for s in track.speech]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def parse_labels(text, frame_len=None, hop=None, sample_rate=None):
    """Parse label text; explicit arguments must agree with any header present."""
    lines = text.splitlines()
    header = {}
    if lines and lines[0].startswith("#"):
        m = _HEADER.match(lines[0].strip())
        if not m:
            raise FormatError(f"bad label header {lines[0]!r}")
        header = dict(zip(("frame_len", "hop", "sample_rate"), map(int, m.groups())))
        lines = lines[1:]
    given = {"frame_len": frame_len, "hop": hop, "sample_rate": sample_rate}
    for key, val in given.items():
        if val is None:
            continue
        if key in header and header[key] != val:
            raise FormatError(f"label header {key}={header[key]} does not match {val}")
        header[key] = val
    speech = []
    for n, line in enumerate(lines, 1):
        tok = line.strip()
        if not tok:
            continue
        if tok not in ("0", "1"):
            raise FormatError(f"line {n}: label token {tok!r} is not 0 or 1")
        speech.append(tok == "1")
    return LabelTrack.from_binary(np.array(speech, dtype=bool),
                                  header.get("frame_len", 0), header.get("hop", 0),
                                  header.get("sample_rate", 0))


def read_labels(path, frame_len=None, hop=None, sample_rate=None):
    with open(path) as f:
        return parse_labels(f.read(), frame_len, hop, sample_rate)
