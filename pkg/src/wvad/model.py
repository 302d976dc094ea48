"""WVAD encoder / framing block / decoder network and the WEVAD encoder ensemble.

Channel convention everywhere: index 0 is non-speech, index 1 is speech.
"""
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from wvad.audio_io import num_frames
from wvad.core import (
    DTYPE,
    ConfigurationError,
    ConvLayer,
    FormatError,
    InputError,
    conv1d_forward,
)

NONSPEECH, SPEECH = 0, 1

MAGIC = b"WVAD"
FORMAT_VERSION = 1
KIND_WVAD, KIND_ENSEMBLE = 0, 1


@dataclass(frozen=True)
class WvadConfig:
    sample_rate: int = 8000
    frame_len: int = 160
    hop: int = 80
    encoder_channels: tuple = (16, 8, 4, 2)
    encoder_kernel: int = 55
    decoder_kernels: tuple = (55, 15, 5)
    leaky_slope: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        object.__setattr__(self, "decoder_kernels", tuple(int(k) for k in self.decoder_kernels))
        ch, dk = self.encoder_channels, self.decoder_kernels
        if len(ch) != 4 or min(ch) < 1 or ch[-1] != 2:
            raise ConfigurationError("encoder_channels must be 4 positive counts ending in 2")
        if any(a < b for a, b in zip(ch, ch[1:])):
            raise ConfigurationError("encoder_channels must be non-increasing")
        if len(dk) != 3 or any(a <= b for a, b in zip(dk, dk[1:])) or min(dk) < 1:
            raise ConfigurationError("decoder_kernels must be 3 strictly decreasing sizes")
        # symmetric zero padding keeps length only for odd kernels
        if self.encoder_kernel % 2 == 0 or any(k % 2 == 0 for k in dk):
            raise ConfigurationError("encoder and decoder kernels must be odd")
        if self.frame_len < 2 or self.frame_len != 2 * self.hop:
            raise ConfigurationError("hop must be exactly half of frame_len")
        if self.sample_rate < 1 or not 0.0 < self.leaky_slope < 1.0:
            raise ConfigurationError("invalid sample_rate or leaky_slope")

    @classmethod
    def for_sample_rate(cls, sample_rate, **overrides):
        """Preset scaled from the 8 kHz defaults so frames stay at 100 Hz."""
        if sample_rate % 100:
            raise ConfigurationError("sample rate must be a multiple of 100 Hz")
        hop = sample_rate // 100
        kernel = 55 * sample_rate // 8000
        kernel += 1 - kernel % 2
        params = dict(sample_rate=sample_rate, frame_len=2 * hop, hop=hop,
                      encoder_kernel=kernel)
        params.update(overrides)
        return cls(**params)

    def num_frames(self, length):
        return num_frames(length, self.frame_len, self.hop)


@dataclass(eq=False)
class FrameScores:
    """Decoder output, shape ``(2, n_frames)``: row 0 non-speech, row 1 speech."""

    data: np.ndarray

    @property
    def nonspeech(self):
        return self.data[NONSPEECH]

    @property
    def speech(self):
        return self.data[SPEECH]

    @property
    def n_frames(self):
        return self.data.shape[1]

    def __len__(self):
        return self.data.shape[1]

    def score(self):
        """Scalar detection score ``y_s - y_ns``; 0 is the decision boundary."""
        return self.speech.astype(np.float64) - self.nonspeech.astype(np.float64)


def predict_labels(scores):
    """Boolean speech decision per frame; ties go to speech."""
    data = scores.data if isinstance(scores, FrameScores) else np.asarray(scores)
    return data[SPEECH] >= data[NONSPEECH]


# ------------------------------------------------------------- assemblies

def build_encoder(cfg, rng=None):
    layers = []
    in_ch = 1
    for out_ch in cfg.encoder_channels:
        layers.append(ConvLayer.create(in_ch, out_ch, cfg.encoder_kernel,
                                       padding=cfg.encoder_kernel // 2,
                                       activation="leaky_relu",
                                       slope=cfg.leaky_slope, rng=rng))
        in_ch = out_ch
    return layers


def build_framing_block(cfg, in_channels, rng=None):
    return ConvLayer.create(in_channels, 2, cfg.frame_len, stride=cfg.hop,
                            activation="sigmoid", rng=rng)


def build_decoder(cfg, rng=None):
    return [ConvLayer.create(2, 2, k, padding=k // 2, activation="sigmoid", rng=rng)
            for k in cfg.decoder_kernels]


def _as_input(waveform, cfg):
    samples = getattr(waveform, "samples", waveform)
    rate = getattr(waveform, "sample_rate", None)
    if rate is not None and rate != cfg.sample_rate:
        raise InputError(f"sample rate {rate} Hz does not match model rate {cfg.sample_rate} Hz")
    x = np.asarray(samples, dtype=DTYPE)
    if x.ndim != 1:
        raise InputError("waveform must be 1D")
    if x.size < cfg.frame_len:
        raise InputError(f"waveform of {x.size} samples is shorter than one frame ({cfg.frame_len})")
    return x[None, :]


def run_encoder(layers, x):
    for layer in layers:
        x = conv1d_forward(x, layer)
    return x


class _Head:
    """Shared framing-block + decoder stages."""

    def framing_block(self, s):
        s = np.asarray(s)
        if s.ndim != 2 or s.shape[0] != self.fb.in_channels:
            raise ConfigurationError(
                f"framing block expects {self.fb.in_channels} channels, got shape {s.shape}")
        if s.shape[1] < self.config.frame_len:
            raise InputError("feature map shorter than one frame")
        return conv1d_forward(s, self.fb)

    def decode(self, z0, return_intermediates=False):
        """Run DB1..DB3; optionally also return each block's output."""
        z0 = np.asarray(z0)
        if z0.ndim != 2 or z0.shape[0] != 2:
            raise ConfigurationError(f"decoder expects 2 channels, got shape {z0.shape}")
        z = z0
        taps = []
        for layer in self.decoder:
            z = conv1d_forward(z, layer)
            taps.append(z)
        scores = FrameScores(z)
        if return_intermediates:
            return scores, taps
        return scores

    def features(self, waveform):
        """Input to the framing block."""
        return self.encode(waveform)

    def forward(self, waveform, return_intermediates=False):
        s = self.features(waveform)
        return self.decode(self.framing_block(s), return_intermediates)

    def head_layers(self):
        return [self.fb, *self.decoder]

    def head_params(self):
        return [p for layer in self.head_layers() for p in layer.params()]


class WvadModel(_Head):
    def __init__(self, config, encoder, fb, decoder):
        self.config = config
        self.encoder = list(encoder)
        self.fb = fb
        self.decoder = list(decoder)
        self._validate()

    def _validate(self):
        cfg = self.config
        if len(self.encoder) != 4 or len(self.decoder) != 3:
            raise ConfigurationError("WVAD needs 4 encoder and 3 decoder blocks")
        if [l.out_channels for l in self.encoder] != list(cfg.encoder_channels):
            raise ConfigurationError("encoder channels disagree with config")
        if self.fb.in_channels != cfg.encoder_channels[-1] or self.fb.out_channels != 2:
            raise ConfigurationError("framing block must map encoder output to 2 channels")
        if any(l.in_channels != 2 or l.out_channels != 2 for l in self.decoder):
            raise ConfigurationError("decoder blocks must be 2-in/2-out")

    @classmethod
    def init(cls, config=None, seed=None):
        """Randomly initialised model; ``seed=None`` gives all-zero weights."""
        config = config or WvadConfig()
        rng = None if seed is None else np.random.default_rng(seed)
        enc = build_encoder(config, rng)
        fb = build_framing_block(config, config.encoder_channels[-1], rng)
        return cls(config, enc, fb, build_decoder(config, rng))

    def encode(self, waveform):
        return run_encoder(self.encoder, _as_input(waveform, self.config))

    def layers(self):
        return [*self.encoder, *self.head_layers()]

    def params(self):
        return [p for layer in self.layers() for p in layer.params()]

    def copy(self):
        return WvadModel(self.config, [l.copy() for l in self.encoder], self.fb.copy(),
                         [l.copy() for l in self.decoder])


class EnsembleModel(_Head):
    """Frozen attribute-specific encoders feeding a shared framing block and decoder.

    Separately trained encoders emit features on very different scales, so the
    concatenated map is standardised per channel (``feature_mean`` and
    ``feature_std``, fixed before head training) before it reaches the FB.
    The defaults (0 and 1) leave features unchanged.
    """

    def __init__(self, config, encoders, fb, decoder, names=None, freeze=True,
                 feature_mean=None, feature_std=None):
        self.config = config
        self.encoders = [list(e) for e in encoders]
        self.fb = fb
        self.decoder = list(decoder)
        self.names = list(names) if names is not None else [f"enc{i}" for i in range(len(self.encoders))]
        if not self.encoders:
            raise ConfigurationError("ensemble needs at least one encoder")
        if len(self.names) != len(self.encoders):
            raise ConfigurationError("one name per encoder required")
        for enc in self.encoders:
            if len(enc) != 4 or [l.out_channels for l in enc] != list(config.encoder_channels) \
                    or any(l.kernel_size != config.encoder_kernel for l in enc):
                raise ConfigurationError("all encoders must share the configured geometry")
        if fb.in_channels != 2 * len(self.encoders) or fb.out_channels != 2:
            raise ConfigurationError(
                f"framing block needs {2 * len(self.encoders)} input channels, has {fb.in_channels}")
        if freeze:
            for enc in self.encoders:
                for layer in enc:
                    layer.freeze()
        n_ch = fb.in_channels
        self.feature_mean = np.zeros(n_ch, DTYPE) if feature_mean is None \
            else np.asarray(feature_mean, DTYPE).copy()
        self.feature_std = np.ones(n_ch, DTYPE) if feature_std is None \
            else np.asarray(feature_std, DTYPE).copy()
        if self.feature_mean.shape != (n_ch,) or self.feature_std.shape != (n_ch,):
            raise ConfigurationError(f"feature statistics need {n_ch} entries")
        if not np.all(self.feature_std > 0) or not np.all(np.isfinite(self.feature_mean)):
            raise ConfigurationError("feature std must be positive and mean finite")

    @classmethod
    def from_encoders(cls, config, encoders, names=None, seed=None):
        """Wrap trained encoders (copied, then frozen) with a fresh FB/decoder."""
        rng = None if seed is None else np.random.default_rng(seed)
        encs = [[l.copy() for l in enc] for enc in encoders]
        fb = build_framing_block(config, 2 * len(encs), rng)
        return cls(config, encs, fb, build_decoder(config, rng), names)

    @property
    def n_encoders(self):
        return len(self.encoders)

    @property
    def frozen_flags(self):
        return [all(l.frozen for l in enc) for enc in self.encoders]

    def encode(self, waveform):
        x = _as_input(waveform, self.config)
        return np.concatenate([run_encoder(enc, x) for enc in self.encoders], axis=0)

    ensemble_encode = encode

    def normalize(self, s):
        return ((s - self.feature_mean[:, None]) / self.feature_std[:, None]).astype(DTYPE)

    def features(self, waveform):
        return self.normalize(self.encode(waveform))

    def fit_feature_stats(self, feature_maps):
        """Set per-channel mean/std from raw ``encode`` outputs (pooled over time)."""
        n = sum(f.shape[1] for f in feature_maps)
        if n == 0:
            raise InputError("no feature frames to fit statistics on")
        total = sum(f.sum(axis=1, dtype=np.float64) for f in feature_maps)
        mean = total / n
        var = sum(((f - mean[:, None]) ** 2).sum(axis=1) for f in feature_maps) / n
        std = np.sqrt(var)
        std[std < 1e-6] = 1.0  # dead channel: leave its scale alone
        self.feature_mean = mean.astype(DTYPE)
        self.feature_std = std.astype(DTYPE)

    def layers(self):
        return [l for enc in self.encoders for l in enc] + self.head_layers()

    def params(self):
        return self.head_params()


def ensemble_encode(ensemble, waveform):
    return ensemble.encode(waveform)


# ----------------------------------------------------------- serialization

def _write_u32(buf, *values):
    buf.write(struct.pack(f"<{len(values)}I", *values))


def _write_layer(buf, layer):
    _write_u32(buf, *layer.kernels.shape)
    buf.write(np.ascontiguousarray(layer.kernels, dtype="<f4").tobytes())
    _write_u32(buf, layer.biases.shape[0])
    buf.write(np.ascontiguousarray(layer.biases, dtype="<f4").tobytes())


def serialize(model):
    cfg = model.config
    buf = io.BytesIO()
    buf.write(MAGIC)
    ensemble = isinstance(model, EnsembleModel)
    _write_u32(buf, FORMAT_VERSION, KIND_ENSEMBLE if ensemble else KIND_WVAD)
    _write_u32(buf, cfg.sample_rate, cfg.frame_len, cfg.hop)
    _write_u32(buf, len(cfg.encoder_channels), *cfg.encoder_channels)
    _write_u32(buf, cfg.encoder_kernel)
    _write_u32(buf, len(cfg.decoder_kernels), *cfg.decoder_kernels)
    buf.write(struct.pack("<d", cfg.leaky_slope))
    if ensemble:
        _write_u32(buf, model.n_encoders)
        buf.write(bytes(int(f) for f in model.frozen_flags))
        for name in model.names:
            raw = name.encode("utf-8")
            _write_u32(buf, len(raw))
            buf.write(raw)
        for stats in (model.feature_mean, model.feature_std):
            buf.write(np.ascontiguousarray(stats, dtype="<f4").tobytes())
    for layer in model.layers():
        _write_layer(buf, layer)
    return buf.getvalue()


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError("model data truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count=1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals if count > 1 else vals[0]

    def tensor(self, shape):
        n = int(np.prod(shape))
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(DTYPE).reshape(shape)


def _read_layer(r, template):
    shape = r.u32(3)
    if tuple(shape) != template.kernels.shape:
        raise FormatError(f"layer shape {shape} does not match config {template.kernels.shape}")
    kernels = r.tensor(shape)
    nb = r.u32()
    if nb != shape[0]:
        raise FormatError("bias length does not match layer")
    biases = r.tensor((nb,))
    return ConvLayer(kernels, biases, template.stride, template.padding,
                     template.activation, template.slope)


def deserialize(data):
    r = _Reader(bytes(data))
    if r.take(4) != MAGIC:
        raise FormatError("bad magic; not a WVAD model")
    version, kind = r.u32(2)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {version}")
    if kind not in (KIND_WVAD, KIND_ENSEMBLE):
        raise FormatError(f"unknown model kind {kind}")
    rate, frame_len, hop = r.u32(3)
    n_ch = r.u32()
    channels = [r.u32() for _ in range(n_ch)]
    enc_kernel = r.u32()
    n_dk = r.u32()
    dec_kernels = [r.u32() for _ in range(n_dk)]
    (slope,) = struct.unpack("<d", r.take(8))
    try:
        cfg = WvadConfig(rate, frame_len, hop, tuple(channels), enc_kernel,
                         tuple(dec_kernels), slope)
    except ConfigurationError as exc:
        raise FormatError(f"invalid config block: {exc}") from exc
    enc_t = build_encoder(cfg)
    dec_t = build_decoder(cfg)
    if kind == KIND_WVAD:
        enc = [_read_layer(r, t) for t in enc_t]
        fb = _read_layer(r, build_framing_block(cfg, channels[-1]))
        dec = [_read_layer(r, t) for t in dec_t]
        model = WvadModel(cfg, enc, fb, dec)
    else:
        n = r.u32()
        if n < 1:
            raise FormatError("ensemble with no encoders")
        flags = list(r.take(n))
        names = [r.take(r.u32()).decode("utf-8") for _ in range(n)]
        mean = r.tensor((2 * n,))
        std = r.tensor((2 * n,))
        encs = [[_read_layer(r, t) for t in enc_t] for _ in range(n)]
        fb = _read_layer(r, build_framing_block(cfg, 2 * n))
        dec = [_read_layer(r, t) for t in dec_t]
        try:
            model = EnsembleModel(cfg, encs, fb, dec, names, freeze=False,
                                  feature_mean=mean, feature_std=std)
        except ConfigurationError as exc:
            raise FormatError(f"invalid ensemble block: {exc}") from exc
        for enc, flag in zip(model.encoders, flags):
            if flag:
                for layer in enc:
                    layer.freeze()
    if r.pos != len(r.data):
        raise FormatError("trailing bytes after model data")
    return model


def save_model(path, model):
    with open(path, "wb") as f:
        f.write(serialize(model))


def load_model(path):
    with open(path, "rb") as f:
        return deserialize(f.read())
