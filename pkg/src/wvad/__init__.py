"""Waveform-based voice activity detection with fully convolutional networks.

WVAD maps a raw waveform to per-frame (non-speech, speech) scores through an
encoder, a strided framing block and a small decoder. WEVAD replaces the
single encoder with an ensemble of frozen, attribute-specific encoders.
"""
__version__ = "0.1.0"

from wvad.core import (
    ConfigurationError,
    ConvLayer,
    FormatError,
    InputError,
    backend_name,
    conv1d_backward,
    conv1d_forward,
)
from wvad.model import (
    EnsembleModel,
    FrameScores,
    WvadConfig,
    WvadModel,
    load_model,
    predict_labels,
    save_model,
)

__all__ = [
    "ConfigurationError",
    "ConvLayer",
    "EnsembleModel",
    "FormatError",
    "FrameScores",
    "InputError",
    "WvadConfig",
    "WvadModel",
    "backend_name",
    "conv1d_backward",
    "conv1d_forward",
    "load_model",
    "predict_labels",
    "save_model",
]
