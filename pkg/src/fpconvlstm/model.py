"""The classifier network and its LSTM-only baseline.

Layer stack (``convlstm`` variant)::

    ConvLSTM(hidden_channels, 3x3, same) -> ReLU(h_T) -> flatten -> dropout
    -> Dense(dense_units) + ReLU -> Dense(num_classes) + softmax

The ``lstm_only`` variant flattens each frame to a vector and uses the dense
LSTM cell with ``hidden_channels`` units; everything downstream is the same.
"""
import copy
from dataclasses import dataclass, field, fields

import numpy as np

from .recurrent import (
    ConvLstmParams,
    LstmParams,
    bptt_backward,
    param_names,
    unroll_sequence,
)
from .seeding import rng_for
from .tensor import ShapeError, get_default_dtype, relu, softmax

VARIANTS = ("convlstm", "lstm_only")
MODES = ("train", "eval")


class ConfigError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    """A forward cache was used after the model's parameters changed."""


@dataclass
class ModelConfig:
    num_classes: int
    variant: str = "convlstm"
    timesteps: int = 8
    frame_height: int = 12
    frame_width: int = 96
    hidden_channels: int = 64
    kernel: tuple = (3, 3)
    dropout_rate: float = 0.5
    dense_units: int = 100
    seed: int = 0

    def __post_init__(self):
        self.kernel = tuple(int(k) for k in self.kernel)
        self.validate()

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        for name in ("timesteps", "frame_height", "frame_width", "hidden_channels", "dense_units"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if len(self.kernel) != 2 or any(k < 1 or k % 2 == 0 for k in self.kernel):
            raise ConfigError(f"kernel extents must be positive and odd, got {self.kernel}")

    @property
    def image_height(self):
        return self.timesteps * self.frame_height

    @property
    def input_shape(self):
        return (self.timesteps, self.frame_height, self.frame_width, 1)

    @property
    def flatten_width(self):
        if self.variant == "convlstm":
            return self.frame_height * self.frame_width * self.hidden_channels
        return self.hidden_channels

    def to_items(self):
        """``(key, text)`` pairs in field order; inverse of :meth:`from_items`."""
        out = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "kernel":
                value = f"{value[0]}x{value[1]}"
            out.append((f.name, repr(value) if isinstance(value, float) else str(value)))
        return out

    @classmethod
    def from_items(cls, items):
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, text in items:
            if key not in known:
                raise ConfigError(f"unknown model config key {key!r}")
            kwargs[key] = parse_field(key, text)
        return cls(**kwargs)


def parse_field(key, text):
    text = str(text).strip()
    if key == "variant":
        return text
    if key == "kernel":
        parts = text.lower().replace(",", "x").split("x")
        if len(parts) == 1:
            parts = parts * 2
        return tuple(int(p) for p in parts)
    if key == "dropout_rate":
        return float(text)
    return int(text)


@dataclass
class DenseParams:
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError(f"dense W {self.W.shape} and b {self.b.shape} are inconsistent")


@dataclass
class DropoutMask:
    mask: np.ndarray
    rate: float


@dataclass
class Model:
    config: ModelConfig
    recurrent: object
    dense1: DenseParams
    dense2: DenseParams
    rng: np.random.Generator = field(repr=False)
    version: int = 0

    def parameters(self):
        """Ordered mapping ``name -> array`` (arrays are the live tensors)."""
        out = {f"recurrent.{n}": getattr(self.recurrent, n) for n in param_names(self.recurrent)}
        out["dense1.W"] = self.dense1.W
        out["dense1.b"] = self.dense1.b
        out["dense2.W"] = self.dense2.W
        out["dense2.b"] = self.dense2.b
        return out

    def copy(self):
        return copy.deepcopy(self)

    def load_parameters(self, values):
        """Overwrite parameters in place from a ``name -> array`` mapping."""
        params = self.parameters()
        if set(values) != set(params):
            raise ShapeError(f"parameter names differ: {sorted(set(values) ^ set(params))}")
        for name, arr in params.items():
            src = np.asarray(values[name])
            if src.shape != arr.shape:
                raise ShapeError(f"{name}: expected {arr.shape}, got {src.shape}")
            arr[...] = src
        self.version += 1

    @property
    def dtype(self):
        return self.dense2.W.dtype


def _glorot(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def build_model(config, dtype=None):
    """Glorot-uniform weights and zero biases, deterministic in ``config.seed``."""
    config.validate()
    dtype = np.dtype(dtype or get_default_dtype())
    hc = config.hidden_channels
    draws = iter(range(100))

    def init(shape, fan_in, fan_out):
        return _glorot(rng_for(config.seed, 0x1217, next(draws)), shape, fan_in, fan_out, dtype)

    def zeros(n):
        return np.zeros(n, dtype=dtype)

    if config.variant == "convlstm":
        kh, kw = config.kernel
        shape = (kh, kw, hc + 1, hc)
        ks = {f"K_{g}": init(shape, kh * kw * (hc + 1), kh * kw * hc) for g in "fico"}
        recurrent = ConvLstmParams(**ks, **{f"b_{g}": zeros(hc) for g in "fico"})
    else:
        width = config.frame_height * config.frame_width
        ws = {f"W_{g}": init((hc, hc + width), hc + width, hc) for g in "fico"}
        recurrent = LstmParams(**ws, **{f"b_{g}": zeros(hc) for g in "fico"})

    flat = config.flatten_width
    dense1 = DenseParams(init((config.dense_units, flat), flat, config.dense_units),
                         zeros(config.dense_units))
    dense2 = DenseParams(init((config.num_classes, config.dense_units),
                              config.dense_units, config.num_classes),
                         zeros(config.num_classes))
    return Model(config, recurrent, dense1, dense2, rng_for(config.seed, 0xD409))


def dense_forward(p, x):
    """``W x + b`` for ``x`` of shape ``[in]`` or ``[n, in]``."""
    x = np.asarray(x)
    if x.shape[-1] != p.W.shape[1]:
        raise ShapeError(f"dense input width {x.shape[-1]} != {p.W.shape[1]}")
    return x @ p.W.T + p.b


def dense_backward(p, x, grad):
    """Returns ``(grad_W, grad_b, grad_x)``; batch contributions are summed."""
    x2 = np.atleast_2d(x)
    g2 = np.atleast_2d(grad)
    dx = g2 @ p.W
    return g2.T @ x2, g2.sum(axis=0), dx.reshape(np.shape(x))


def dropout_apply(x, rate, mode, rng):
    """Inverted dropout. Returns ``(output, DropoutMask)``."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    x = np.asarray(x)
    if mode == "eval" or rate == 0.0:
        mask = np.ones_like(x)
    else:
        keep = rng.random(x.shape) >= rate
        mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    return x * mask, DropoutMask(mask, rate)


@dataclass
class ForwardCache:
    x: np.ndarray
    states: list
    gates: list
    h_T: np.ndarray
    dropout: DropoutMask
    dense1_in: np.ndarray
    dense1_out: np.ndarray
    hidden: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    batched: bool
    model_id: int
    version: int


def _prepare_input(m, x):
    cfg = m.config
    x = np.asarray(x, dtype=m.dtype)
    batched = x.ndim == 5
    xb = x if batched else x[None]
    if xb.shape[1:] != cfg.input_shape:
        raise ShapeError(f"input shape {x.shape[-4:]} does not match config {cfg.input_shape}")
    if cfg.variant == "lstm_only":
        xb = xb.reshape(xb.shape[0], cfg.timesteps, -1)
    return xb, batched


def model_forward(m, x, mode="eval"):
    """Class probabilities for one sequence ``[T, h, w, 1]`` or a batch of them.

    Returns ``(probs, cache)``; the cache feeds :func:`model_backward`.
    """
    xb, batched = _prepare_input(m, x)
    cell = "conv" if m.config.variant == "convlstm" else "dense"
    states, gates = unroll_sequence(cell, m.recurrent, xb)
    h_T = states[-1].h
    flat = relu(h_T).reshape(h_T.shape[0], -1)
    dropped, mask = dropout_apply(flat, m.config.dropout_rate, mode, m.rng)
    z1 = dense_forward(m.dense1, dropped)
    a1 = relu(z1)
    logits = dense_forward(m.dense2, a1)
    probs = softmax(logits)
    cache = ForwardCache(xb, states, gates, h_T, mask, dropped, z1, a1, logits, probs,
                         batched, id(m), m.version)
    return (probs if batched else probs[0]), cache


def model_backward(m, cache, grad_logits):
    """Gradients of the loss for every parameter given ``dL/dlogits``.

    ``grad_logits`` is what :func:`fpconvlstm.training.cross_entropy_loss`
    returns (the fused softmax + cross-entropy derivative). Returns a
    mapping with the same keys as :meth:`Model.parameters`.
    """
    if cache.model_id != id(m) or cache.version != m.version:
        raise StaleCacheError("forward cache does not belong to the current parameters")
    g = np.asarray(grad_logits, dtype=m.dtype)
    if not cache.batched:
        g = g[None]
    if g.shape != cache.logits.shape:
        raise ShapeError(f"grad shape {g.shape} != logits shape {cache.logits.shape}")
    dW2, db2, da1 = dense_backward(m.dense2, cache.hidden, g)
    dz1 = da1 * (cache.dense1_out > 0)
    dW1, db1, dd = dense_backward(m.dense1, cache.dense1_in, dz1)
    dflat = dd * cache.dropout.mask
    dh_T = dflat.reshape(cache.h_T.shape) * (cache.h_T > 0)
    rec, _ = bptt_backward(m.recurrent, cache.gates, cache.states, cache.x, dh_T)
    grads = {f"recurrent.{n}": getattr(rec, n) for n in param_names(rec)}
    grads.update({"dense1.W": dW1, "dense1.b": db1, "dense2.W": dW2, "dense2.b": db2})
    return grads


def argmax_class(probs):
    """Index of the largest probability; ties go to the lower index."""
    idx = np.argmax(np.asarray(probs), axis=-1)
    return int(idx) if np.ndim(idx) == 0 else idx


def predict(m, x):
    """Arg-max class of :func:`model_forward` in eval mode."""
    probs, _ = model_forward(m, x, mode="eval")
    return argmax_class(probs)
