"""Backend selection for the LSTM recurrence.

The compiled extension is used when it imports; setting the environment
variable ``A2CLNET_PURE_PYTHON=1`` forces the numpy fallback. Both backends
agree to ~1e-15 but are not guaranteed bit-identical to each other.
"""

import os

from . import _lstm_fallback

if os.environ.get("A2CLNET_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _lstm_kernel as _compiled
    except ImportError:  # extension not built
        _compiled = None

if _compiled is not None:
    BACKEND = "cython"
    lstm_forward = _compiled.lstm_forward
    lstm_backward = _compiled.lstm_backward
else:
    BACKEND = "python"
    lstm_forward = _lstm_fallback.lstm_forward
    lstm_backward = _lstm_fallback.lstm_backward

BACKENDS = {"python": _lstm_fallback}
if _compiled is not None:
    BACKENDS["cython"] = _compiled
