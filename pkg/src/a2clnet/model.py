"""Model assembly for A2C-LNet and the three baseline networks.

A model is an ordered list of layer objects plus a flat parameter dict keyed
by stable paths such as ``"bilstm1.fwd.W"``. The A2C-LNet stack is::

    conv1d(+act) -> dropout -> biLSTM -> layer norm -> dropout
        -> multi-head self-attention -> biLSTM -> dropout
        -> LSTM (last hidden state) -> dense(1)
"""

from __future__ import annotations

import base64
import json
import os
from dataclasses import asdict, dataclass, fields
from enum import Enum
from typing import Dict, List, Optional

import numpy as np

from . import layers as L
from .errors import (
    CheckpointCorruptError,
    CheckpointShapeError,
    CheckpointVersionError,
    ConfigurationError,
    InputError,
)
from .init import InitScheme, init_weights
from .tensor import Rng, activation_grad, as_tensor, check_finite, elementwise

FORMAT_NAME = "a2clnet-checkpoint"
FORMAT_VERSION = 1


class Variant(str, Enum):
    A2CLNET = "A2CLNet"
    VANILLA_CNN = "VanillaCNN"
    VANILLA_LSTM = "VanillaLSTM"
    HYBRID_CNN_LSTM = "HybridCNNLSTM"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for member in cls:
            if str(value).lower() == member.value.lower():
                return member
        raise ConfigurationError(f"unknown variant {value!r}; choose from {[m.value for m in cls]}")


@dataclass
class ArchitectureConfig:
    lookback_window: int = 24
    input_features: int = 1
    conv_filters: int = 32
    conv_kernel: int = 3
    lstm1_hidden: int = 64
    lstm2_hidden: int = 64
    lstm3_hidden: int = 32
    attn_heads: int = 4
    attn_key_dim: int = 16
    dropout_rate: float = 0.2
    variant: Variant = Variant.A2CLNET
    conv_activation: str = "relu"
    pool_window: int = 2
    layernorm_epsilon: float = 1e-5

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        self.validate()

    def validate(self):
        for name in (
            "lookback_window", "input_features", "conv_filters", "conv_kernel",
            "lstm1_hidden", "lstm2_hidden", "lstm3_hidden", "attn_heads",
            "attn_key_dim", "pool_window",
        ):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigurationError(f"{name} must be an integer >= 1, got {v!r}")
            setattr(self, name, int(v))
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.conv_activation not in ("relu", "linear", "tanh"):
            raise ConfigurationError(f"conv_activation must be relu, linear or tanh, got {self.conv_activation!r}")
        if self.layernorm_epsilon <= 0:
            raise ConfigurationError("layernorm_epsilon must be positive")
        uses_conv = self.variant is not Variant.VANILLA_LSTM
        if uses_conv and self.conv_kernel > self.lookback_window:
            raise ConfigurationError(
                f"conv_kernel {self.conv_kernel} exceeds lookback_window {self.lookback_window}"
            )
        if self.variant is Variant.VANILLA_CNN:
            if self.pool_window > self.conv_time:
                raise ConfigurationError(
                    f"pool_window {self.pool_window} exceeds conv output length {self.conv_time}"
                )

    @property
    def conv_time(self) -> int:
        return self.lookback_window - self.conv_kernel + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown architecture keys: {sorted(unknown)}")
        return cls(**d)


# --------------------------------------------------------------------------
# Layer wrappers


class Layer:
    name: str = ""

    def param_shapes(self) -> Dict[str, tuple]:
        return {}

    def init_params(self, scheme, rng) -> Dict[str, np.ndarray]:
        return {}

    def forward(self, x, params, mode, rng):
        raise NotImplementedError

    def backward(self, dy, cache):
        raise NotImplementedError

    def _key(self, k):
        return f"{self.name}.{k}"


class Conv(Layer):
    def __init__(self, name, in_ch, out_ch, kernel, activation):
        self.name, self.in_ch, self.out_ch, self.kernel, self.activation = name, in_ch, out_ch, kernel, activation

    def param_shapes(self):
        return {self._key("filters"): (self.out_ch, self.in_ch, self.kernel), self._key("bias"): (self.out_ch,)}

    def init_params(self, scheme, rng):
        return {
            self._key("filters"): init_weights((self.out_ch, self.in_ch, self.kernel), scheme, rng),
            self._key("bias"): np.zeros(self.out_ch),
        }

    def forward(self, x, params, mode, rng):
        p = L.Conv1DParams(params[self._key("filters")], params[self._key("bias")])
        z, cache = L.conv1d_forward(x, p)
        y = elementwise(z, self.activation)
        return y, (cache, y)

    def backward(self, dy, cache):
        conv_cache, y = cache
        g = L.conv1d_backward(dy * activation_grad(self.activation, y), conv_cache)
        return g.dx, {self._key(k): v for k, v in g.params.items()}


class Dropout(Layer):
    def __init__(self, name, rate):
        self.name, self.rate = name, rate

    def forward(self, x, params, mode, rng):
        return L.dropout_forward(x, self.rate, mode, rng)

    def backward(self, dy, cache):
        return L.dropout_backward(dy, cache).dx, {}


def _lstm_shapes(prefix, input_size, hidden):
    return {f"{prefix}.W": (4 * hidden, hidden + input_size), f"{prefix}.b": (4 * hidden,)}


def _lstm_init(prefix, input_size, hidden, scheme, rng):
    return {
        f"{prefix}.W": init_weights((4 * hidden, hidden + input_size), scheme, rng),
        f"{prefix}.b": np.zeros(4 * hidden),
    }


class BiLSTM(Layer):
    def __init__(self, name, input_size, hidden):
        self.name, self.input_size, self.hidden = name, input_size, hidden

    def param_shapes(self):
        return {
            **_lstm_shapes(self._key("fwd"), self.input_size, self.hidden),
            **_lstm_shapes(self._key("bwd"), self.input_size, self.hidden),
        }

    def init_params(self, scheme, rng):
        return {
            **_lstm_init(self._key("fwd"), self.input_size, self.hidden, scheme, rng),
            **_lstm_init(self._key("bwd"), self.input_size, self.hidden, scheme, rng),
        }

    def forward(self, x, params, mode, rng):
        fwd = L.LSTMParams(params[self._key("fwd.W")], params[self._key("fwd.b")])
        bwd = L.LSTMParams(params[self._key("bwd.W")], params[self._key("bwd.b")])
        return L.bilstm_forward(x, fwd, bwd)

    def backward(self, dy, cache):
        g = L.bilstm_backward(dy, cache)
        grads = {}
        for direction in ("fwd", "bwd"):
            for k, v in g.params[direction].items():
                grads[self._key(f"{direction}.{k}")] = v
        return g.dx, grads


class LSTMLast(Layer):
    """Unidirectional LSTM that emits only its final hidden state."""

    def __init__(self, name, input_size, hidden):
        self.name, self.input_size, self.hidden = name, input_size, hidden

    def param_shapes(self):
        return _lstm_shapes(self.name, self.input_size, self.hidden)

    def init_params(self, scheme, rng):
        return _lstm_init(self.name, self.input_size, self.hidden, scheme, rng)

    def forward(self, x, params, mode, rng):
        p = L.LSTMParams(params[self._key("W")], params[self._key("b")])
        hs, cache = L.lstm_forward(x, p)
        return hs[:, -1], (cache, hs.shape)

    def backward(self, dy, cache):
        lstm_cache, shape = cache
        dhs = np.zeros(shape)
        dhs[:, -1] = dy
        g = L.lstm_backward(dhs, lstm_cache)
        return g.dx, {self._key(k): v for k, v in g.params.items()}


class LayerNorm(Layer):
    def __init__(self, name, features, eps):
        self.name, self.features, self.eps = name, features, eps

    def param_shapes(self):
        return {self._key("gain"): (self.features,), self._key("shift"): (self.features,)}

    def init_params(self, scheme, rng):
        return {self._key("gain"): np.ones(self.features), self._key("shift"): np.zeros(self.features)}

    def forward(self, x, params, mode, rng):
        p = L.LayerNormParams(params[self._key("gain")], params[self._key("shift")], self.eps)
        return L.layernorm_forward(x, p)

    def backward(self, dy, cache):
        g = L.layernorm_backward(dy, cache)
        return g.dx, {self._key(k): v for k, v in g.params.items()}


class Attention(Layer):
    def __init__(self, name, d_model, heads, key_dim):
        self.name, self.d_model, self.heads, self.key_dim = name, d_model, heads, key_dim

    def param_shapes(self):
        proj = (self.heads, self.d_model, self.key_dim)
        return {
            self._key("W_Q"): proj,
            self._key("W_K"): proj,
            self._key("W_V"): proj,
            self._key("W_O"): (self.heads * self.key_dim, self.d_model),
        }

    def init_params(self, scheme, rng):
        proj = (self.heads, self.d_model, self.key_dim)
        out = {}
        for k in ("W_Q", "W_K", "W_V"):
            out[self._key(k)] = init_weights(proj, scheme, rng, fan_in=self.d_model, fan_out=self.key_dim)
        out[self._key("W_O")] = init_weights(
            (self.heads * self.key_dim, self.d_model), scheme, rng,
            fan_in=self.heads * self.key_dim, fan_out=self.d_model,
        )
        return out

    def forward(self, x, params, mode, rng):
        p = L.MultiHeadAttnParams(*(params[self._key(k)] for k in ("W_Q", "W_K", "W_V", "W_O")))
        return L.mha_forward(x, p)

    def backward(self, dy, cache):
        g = L.mha_backward(dy, cache)
        return g.dx, {self._key(k): v for k, v in g.params.items()}


class MaxPool(Layer):
    def __init__(self, name, window):
        self.name, self.window = name, window

    def forward(self, x, params, mode, rng):
        return L.maxpool1d_forward(x, self.window, self.window)

    def backward(self, dy, cache):
        return L.maxpool1d_backward(dy, cache).dx, {}


class Flatten(Layer):
    def __init__(self, name):
        self.name = name

    def forward(self, x, params, mode, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache):
        return dy.reshape(cache), {}


class Dense(Layer):
    def __init__(self, name, in_features, out_features, activation="linear"):
        self.name, self.in_features, self.out_features, self.activation = name, in_features, out_features, activation

    def param_shapes(self):
        return {self._key("W"): (self.out_features, self.in_features), self._key("b"): (self.out_features,)}

    def init_params(self, scheme, rng):
        return {
            self._key("W"): init_weights((self.out_features, self.in_features), scheme, rng),
            self._key("b"): np.zeros(self.out_features),
        }

    def forward(self, x, params, mode, rng):
        return L.dense_forward(x, params[self._key("W")], params[self._key("b")], self.activation)

    def backward(self, dy, cache):
        g = L.dense_backward(dy, cache)
        return g.dx, {self._key("W"): g.params["weights"], self._key("b"): g.params["bias"]}


def _stack(cfg: ArchitectureConfig, head_activation: str) -> List[Layer]:
    F, v = cfg.input_features, cfg.variant
    if v is Variant.A2CLNET:
        d_model = 2 * cfg.lstm1_hidden
        return [
            Conv("conv", F, cfg.conv_filters, cfg.conv_kernel, cfg.conv_activation),
            Dropout("drop1", cfg.dropout_rate),
            BiLSTM("bilstm1", cfg.conv_filters, cfg.lstm1_hidden),
            LayerNorm("norm", d_model, cfg.layernorm_epsilon),
            Dropout("drop2", cfg.dropout_rate),
            Attention("attn", d_model, cfg.attn_heads, cfg.attn_key_dim),
            BiLSTM("bilstm2", d_model, cfg.lstm2_hidden),
            Dropout("drop3", cfg.dropout_rate),
            LSTMLast("lstm3", 2 * cfg.lstm2_hidden, cfg.lstm3_hidden),
            Dense("head", cfg.lstm3_hidden, 1, head_activation),
        ]
    if v is Variant.VANILLA_CNN:
        pooled = (cfg.conv_time - cfg.pool_window) // cfg.pool_window + 1
        return [
            Conv("conv", F, cfg.conv_filters, cfg.conv_kernel, cfg.conv_activation),
            MaxPool("pool", cfg.pool_window),
            Flatten("flatten"),
            Dense("head", pooled * cfg.conv_filters, 1, head_activation),
        ]
    if v is Variant.VANILLA_LSTM:
        return [
            LSTMLast("lstm", F, cfg.lstm1_hidden),
            Dense("head", cfg.lstm1_hidden, 1, head_activation),
        ]
    if v is Variant.HYBRID_CNN_LSTM:
        return [
            Conv("conv", F, cfg.conv_filters, cfg.conv_kernel, cfg.conv_activation),
            LSTMLast("lstm", cfg.conv_filters, cfg.lstm1_hidden),
            Dense("head", cfg.lstm1_hidden, 1, head_activation),
        ]
    raise ConfigurationError(f"unsupported variant {v}")


class Model:
    """An assembled network with its parameters and provenance metadata."""

    def __init__(self, config: ArchitectureConfig, params: Dict[str, np.ndarray],
                 head_activation: str = "linear", seed: Optional[int] = None):
        if head_activation not in ("linear", "sigmoid"):
            raise ConfigurationError(f"head activation must be linear or sigmoid, got {head_activation!r}")
        self.config = config
        self.head_activation = head_activation
        self.layers = _stack(config, head_activation)
        self.seed = seed
        self.normalization: Optional[dict] = None
        self.hyperparams: Optional[dict] = None
        expected = self.param_shapes()
        if set(params) != set(expected):
            raise ConfigurationError(
                f"parameter keys differ from architecture: missing {sorted(set(expected) - set(params))}, "
                f"unexpected {sorted(set(params) - set(expected))}"
            )
        for k, shape in expected.items():
            if tuple(np.shape(params[k])) != shape:
                raise ConfigurationError(f"parameter {k} has shape {np.shape(params[k])}, expected {shape}")
        self.params = {k: as_tensor(params[k], copy=True) for k in expected}

    def param_shapes(self) -> Dict[str, tuple]:
        shapes = {}
        for layer in self.layers:
            shapes.update(layer.param_shapes())
        return shapes

    @property
    def variant(self) -> Variant:
        return self.config.variant

    def param_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def _prepare(self, window):
        x = as_tensor(window)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        cfg = self.config
        if x.ndim != 3 or x.shape[1:] != (cfg.lookback_window, cfg.input_features):
            raise InputError(
                f"window shape {as_tensor(window).shape} does not match "
                f"(lookback={cfg.lookback_window}, features={cfg.input_features})"
            )
        return x, squeeze

    def forward_with_cache(self, window, mode: str = L.INFER, rng: Optional[Rng] = None):
        """Predictions of shape (batch,) and the per-layer caches for backward."""
        x, squeeze = self._prepare(window)
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, self.params, mode, rng)
            check_finite(x, f"layer '{layer.name}' output")
            caches.append(cache)
        pred = x[:, 0]
        return pred, (caches, squeeze)

    def forward(self, window, mode: str = L.INFER, rng: Optional[Rng] = None):
        """Normalized next-step prediction; a float for a single window."""
        pred, (_, squeeze) = self.forward_with_cache(window, mode, rng)
        return float(pred[0]) if squeeze else pred

    __call__ = forward

    def backward(self, dpred, cache) -> Dict[str, np.ndarray]:
        caches, _ = cache
        dy = as_tensor(dpred).reshape(-1, 1)
        grads: Dict[str, np.ndarray] = {}
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            dy, g = layer.backward(dy, c)
            grads.update(g)
        return grads

    def copy(self) -> "Model":
        m = Model(self.config, self.params, self.head_activation, self.seed)
        m.normalization = None if self.normalization is None else dict(self.normalization)
        m.hyperparams = None if self.hyperparams is None else dict(self.hyperparams)
        return m


def build(config: ArchitectureConfig, init=InitScheme.XAVIER, rng: Optional[Rng] = None,
          head_activation: str = "linear") -> Model:
    """Assemble ``config.variant`` and draw weights with ``init``.

    Biases start at zero, layer-norm gain at one. Parameters are drawn layer by
    layer in stack order so the same seed always yields the same tensors.
    """
    if rng is None:
        raise ConfigurationError("build() needs an explicit Rng")
    config.validate()
    params = {}
    for layer in _stack(config, head_activation):
        params.update(layer.init_params(init, rng))
    return Model(config, params, head_activation, seed=rng.seed)


def build_baseline(variant, config: ArchitectureConfig, init=InitScheme.XAVIER,
                   rng: Optional[Rng] = None, head_activation: str = "linear") -> Model:
    cfg = ArchitectureConfig.from_dict({**config.to_dict(), "variant": Variant.parse(variant)})
    return build(cfg, init, rng, head_activation)


# --------------------------------------------------------------------------
# Checkpoints


def _encode(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return {"shape": list(arr.shape), "dtype": "<f8", "data": base64.b64encode(data).decode("ascii")}


def checkpoint_dict(model: Model) -> dict:
    return {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "seed": model.seed,
        "config": model.config.to_dict(),
        "head_activation": model.head_activation,
        "normalization": model.normalization,
        "hyperparams": model.hyperparams,
        "tensors": {k: _encode(v) for k, v in sorted(model.params.items())},
    }


def dumps_checkpoint(model: Model) -> str:
    return json.dumps(checkpoint_dict(model), sort_keys=True, indent=1) + "\n"


def save_checkpoint(model: Model, path) -> None:
    text = dumps_checkpoint(model)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def model_from_checkpoint_dict(doc) -> Model:
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise CheckpointCorruptError("not an a2clnet checkpoint (missing or wrong 'format')")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format_version {version!r} is not supported (expected {FORMAT_VERSION})")
    try:
        config = ArchitectureConfig.from_dict(doc["config"])
        head = doc.get("head_activation", "linear")
        tensors = doc["tensors"]
    except (KeyError, TypeError) as exc:
        raise CheckpointCorruptError(f"checkpoint is missing a required field: {exc}") from None
    except ConfigurationError as exc:
        raise CheckpointCorruptError(f"checkpoint config is invalid: {exc}") from None
    expected = {}
    for layer in _stack(config, head):
        expected.update(layer.param_shapes())
    if set(tensors) != set(expected):
        raise CheckpointCorruptError(
            f"tensor keys differ from architecture: missing {sorted(set(expected) - set(tensors))}, "
            f"unexpected {sorted(set(tensors) - set(expected))}"
        )
    params = {}
    for key, shape in expected.items():
        entry = tensors[key]
        try:
            declared = tuple(int(s) for s in entry["shape"])
            dtype = entry.get("dtype", "<f8")
            raw = base64.b64decode(entry["data"], validate=True)
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointCorruptError(f"tensor {key!r} is malformed: {exc}") from None
        if declared != shape:
            raise CheckpointShapeError(f"tensor {key!r} has shape {list(declared)}, config requires {list(shape)}")
        if dtype != "<f8":
            raise CheckpointCorruptError(f"tensor {key!r} has dtype {dtype!r}; only '<f8' is supported")
        if len(raw) != 8 * int(np.prod(shape)):
            raise CheckpointCorruptError(f"tensor {key!r} holds {len(raw)} bytes, expected {8 * int(np.prod(shape))}")
        params[key] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    model = Model(config, params, head, seed=doc.get("seed"))
    model.normalization = doc.get("normalization")
    model.hyperparams = doc.get("hyperparams")
    return model


def load_checkpoint(path) -> Model:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointCorruptError(f"{path}: not valid JSON ({exc})") from None
    except UnicodeDecodeError as exc:
        raise CheckpointCorruptError(f"{path}: not valid UTF-8 ({exc})") from None
    return model_from_checkpoint_dict(doc)
