"""Numerical kernel: 1D convolution layers, activations, Adam, gradient checks.

A feature map is a plain 2D numpy array of shape ``(channels, length)``.
The convolution itself is a cross-correlation (no kernel flip) with zero
padding on both sides.

The hot loops live in the compiled ``wvad._kernels`` extension. When it is
missing, or ``WVAD_BACKEND=python`` is set in the environment, the numpy
implementation in ``wvad._fallback`` is used instead.
"""
import contextlib
import os
from dataclasses import dataclass, field

import numpy as np

from wvad import _fallback

try:
    from wvad import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

DTYPE = np.float32
ACTIVATIONS = ("leaky_relu", "sigmoid", "none")


class ConfigurationError(ValueError):
    """Inconsistent shapes, channel counts or settings."""


class InputError(ValueError):
    """Input data unusable for the requested operation."""


class FormatError(ValueError):
    """Malformed file or byte stream."""


# ---------------------------------------------------------------- backends

def _select_backend():
    name = os.environ.get("WVAD_BACKEND", "").strip().lower()
    if name == "python" or _compiled is None:
        return _fallback
    return _compiled


_backend = _select_backend()


def backend_name():
    return "compiled" if _backend is _compiled else "python"


def available_backends():
    return ["compiled", "python"] if _compiled is not None else ["python"]


@contextlib.contextmanager
def use_backend(name):
    """Temporarily switch kernel implementation ("compiled" or "python")."""
    global _backend
    if name == "compiled":
        if _compiled is None:
            raise ConfigurationError("compiled kernels are not available")
        new = _compiled
    elif name == "python":
        new = _fallback
    else:
        raise ConfigurationError(f"unknown backend {name!r}")
    old, _backend = _backend, new
    try:
        yield
    finally:
        _backend = old


# ------------------------------------------------------------- activations

def leaky_relu(x, slope=0.01):
    if not 0.0 < slope < 1.0:
        raise ConfigurationError("leaky-ReLU slope must lie in (0, 1)")
    x = np.asarray(x)
    return np.where(x >= 0, x, slope * x).astype(x.dtype, copy=False)


def leaky_relu_grad(x, slope=0.01):
    """Derivative w.r.t. the pre-activation; 1 at the origin."""
    x = np.asarray(x)
    return np.where(x >= 0, 1.0, slope).astype(x.dtype if x.dtype.kind == "f" else float)


def sigmoid(x):
    # split on sign so exp never overflows
    x = np.asarray(x)
    dtype = x.dtype if x.dtype.kind == "f" else np.float64
    x = x.astype(dtype, copy=False)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(y):
    """Derivative expressed through the sigmoid output ``y``."""
    return y * (1.0 - y)


# ------------------------------------------------------------------ layers

@dataclass(eq=False)
class ConvLayer:
    kernels: np.ndarray  # (out_channels, in_channels, kernel_size)
    biases: np.ndarray  # (out_channels,)
    stride: int = 1
    padding: int = 0
    activation: str = "none"
    slope: float = 0.01

    def __post_init__(self):
        if self.kernels.ndim != 3:
            raise ConfigurationError("kernels must be (out, in, kernel_size)")
        if self.biases.shape != (self.kernels.shape[0],):
            raise ConfigurationError(
                f"biases shape {self.biases.shape} does not match "
                f"{self.kernels.shape[0]} output channels")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.stride < 1 or self.padding < 0:
            raise ConfigurationError("stride must be >= 1 and padding >= 0")
        if self.activation == "leaky_relu" and not 0.0 < self.slope < 1.0:
            raise ConfigurationError("leaky-ReLU slope must lie in (0, 1)")

    @classmethod
    def create(cls, in_channels, out_channels, kernel_size, *, stride=1,
               padding=0, activation="none", slope=0.01, rng=None,
               dtype=DTYPE):
        """Fan-in scaled uniform init; ``rng=None`` gives all-zero weights."""
        shape = (out_channels, in_channels, kernel_size)
        if rng is None:
            kernels = np.zeros(shape, dtype=dtype)
        else:
            a = np.sqrt(1.0 / (in_channels * kernel_size))
            kernels = rng.uniform(-a, a, size=shape).astype(dtype)
        return cls(kernels, np.zeros(out_channels, dtype=dtype), stride,
                   padding, activation, slope)

    @property
    def in_channels(self):
        return self.kernels.shape[1]

    @property
    def out_channels(self):
        return self.kernels.shape[0]

    @property
    def kernel_size(self):
        return self.kernels.shape[2]

    @property
    def frozen(self):
        return not self.kernels.flags.writeable

    def freeze(self):
        self.kernels.flags.writeable = False
        self.biases.flags.writeable = False

    def params(self):
        return [self.kernels, self.biases]

    def output_length(self, length):
        return (length + 2 * self.padding - self.kernel_size) // self.stride + 1

    def copy(self):
        return ConvLayer(self.kernels.copy(), self.biases.copy(), self.stride,
                         self.padding, self.activation, self.slope)


def _prepare(x, layer):
    x = np.asarray(x)
    if x.ndim != 2:
        raise ConfigurationError("feature maps must be 2D (channels, length)")
    if x.shape[0] != layer.in_channels:
        raise ConfigurationError(
            f"input has {x.shape[0]} channels, layer expects {layer.in_channels}")
    if layer.output_length(x.shape[1]) < 1:
        raise InputError(
            f"input length {x.shape[1]} too short for kernel {layer.kernel_size} "
            f"with padding {layer.padding}")
    dtype = layer.kernels.dtype
    return np.ascontiguousarray(x, dtype=dtype)


def _activate(z, layer):
    if layer.activation == "leaky_relu":
        return leaky_relu(z, layer.slope)
    if layer.activation == "sigmoid":
        return sigmoid(z)
    return z


def conv1d_forward(x, layer):
    """Apply ``layer`` to feature map ``x``; returns the activated output."""
    x = _prepare(x, layer)
    z = _backend.conv_forward(x, np.ascontiguousarray(layer.kernels),
                              np.ascontiguousarray(layer.biases),
                              layer.stride, layer.padding)
    return _activate(z, layer)


def conv1d_backward(x, layer, grad_out, output=None, need_input_grad=True):
    """Gradients of ``sum(grad_out * conv1d_forward(x, layer))``.

    ``output`` may pass the cached forward result to skip recomputation.
    Returns ``(grad_input, grad_kernels, grad_biases)``; ``grad_input`` is
    None when ``need_input_grad`` is false.
    """
    x = _prepare(x, layer)
    expected = (layer.out_channels, layer.output_length(x.shape[1]))
    grad_out = np.asarray(grad_out)
    if grad_out.shape != expected:
        raise ConfigurationError(
            f"grad_out shape {grad_out.shape} != output shape {expected}")
    dtype = layer.kernels.dtype
    w = np.ascontiguousarray(layer.kernels)
    if layer.activation != "none" and output is None:
        output = conv1d_forward(x, layer)
    if layer.activation == "sigmoid":
        gz = grad_out * sigmoid_grad(output)
    elif layer.activation == "leaky_relu":
        # output and pre-activation share sign since slope > 0
        gz = grad_out * leaky_relu_grad(output, layer.slope)
    else:
        gz = grad_out
    gz = np.ascontiguousarray(gz, dtype=dtype)
    return _backend.conv_backward(x, w, gz, layer.stride, layer.padding,
                                  need_input_grad)


# --------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state):
    """In-place bias-corrected Adam update of ``params``.

    Moment buffers are created lazily (float64) on the first call.
    """
    if len(params) != len(grads):
        raise ConfigurationError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros(p.shape) for p in params]
        state.v = [np.zeros(p.shape) for p in params]
    if len(state.m) != len(params):
        raise ConfigurationError("optimizer state does not match params")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ConfigurationError(
                f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p[...] = (p - update).astype(p.dtype)
    return params, state


# ------------------------------------------------------- gradient checking

def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return np.abs(analytic - numeric) / denom


def numerical_gradient(fn, array, h=1e-3):
    """Central-difference gradient of scalar ``fn()`` w.r.t. ``array`` (perturbed in place)."""
    if h <= 0:
        raise ConfigurationError("step h must be positive")
    grad = np.zeros(array.shape)
    flat = array.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        fp = fn()
        flat[idx] = orig - h
        fm = fn()
        flat[idx] = orig
        grad.reshape(-1)[idx] = (fp - fm) / (2.0 * h)
    return grad


def finite_difference_check(fn, arrays, analytic_grads, h=1e-3):
    """Max relative error between analytic gradients and central differences.

    ``fn`` takes no arguments and evaluates a scalar from the current
    contents of ``arrays``; each array is perturbed in place.
    """
    worst = 0.0
    for arr, ga in zip(arrays, analytic_grads):
        gn = numerical_gradient(fn, arr, h)
        if gn.size:
            worst = max(worst, float(relative_error(ga, gn).max()))
    return worst


def conv_layer_gradient_error(x, layer, grad_out, h=1e-3):
    """Check ``conv1d_backward`` for one layer against central differences."""
    gx, gk, gb = conv1d_backward(x, layer, grad_out)

    def scalar():
        return float(np.sum(grad_out * conv1d_forward(x, layer), dtype=np.float64))

    return finite_difference_check(scalar, [x, layer.kernels, layer.biases],
                                   [gx, gk, gb], h)
