"""Weight initialization schemes.

Fan counts follow the "(out, in, *receptive)" convention unless passed
explicitly: ``fan_in = shape[1] * receptive``, ``fan_out = shape[0] * receptive``.
That gives, per layer kind:

* dense ``(out, in)``: fan_in = in, fan_out = out
* conv ``(out_ch, in_ch, k)``: fan_in = in_ch*k, fan_out = out_ch*k
* LSTM stacked gates ``(4H, H+I)``: fan_in = H+I, fan_out = 4H
* attention projections are stored ``(heads, d_model, d_k)`` / ``(h*d_k, d_model)``
  in (in, out) order, so the model passes their fans explicitly.
"""

from enum import Enum

import numpy as np

from .errors import ConfigurationError


class InitScheme(str, Enum):
    XAVIER = "Xavier"
    HE = "He"
    RANDOM = "Random"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for member in cls:
            if str(value).lower() == member.value.lower():
                return member
        raise ConfigurationError(f"unknown init scheme {value!r}; choose from {[m.value for m in cls]}")


RANDOM_RANGE = 0.05


def fans(shape):
    shape = tuple(shape)
    if len(shape) == 1:
        return shape[0], shape[0]
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    return shape[1] * receptive, shape[0] * receptive


def init_weights(shape, scheme, rng, fan_in=None, fan_out=None) -> np.ndarray:
    """Draw a weight tensor.

    Xavier: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    He: N(0, sqrt(2 / fan_in)).
    Random: U(-0.05, 0.05).
    """
    scheme = InitScheme.parse(scheme)
    default_in, default_out = fans(shape)
    fan_in = default_in if fan_in is None else fan_in
    fan_out = default_out if fan_out is None else fan_out
    if scheme is InitScheme.XAVIER:
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=shape)
    if scheme is InitScheme.HE:
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return rng.uniform(-RANDOM_RANGE, RANDOM_RANGE, size=shape)
