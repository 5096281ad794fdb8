"""Central finite differences, kept independent of the analytic backward code."""

import numpy as np

STEP = 1e-5
# Elements whose gradient magnitude is below this are compared absolutely.
FLOOR = 1e-7


def numerical_grad(f, arr, step=STEP):
    """d f() / d arr by central differences; ``arr`` is perturbed in place."""
    # a non-contiguous view would be copied by reshape and never perturbed
    assert arr.flags.c_contiguous, "numerical_grad needs a contiguous array"
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        fp = f()
        flat[k] = orig - step
        fm = f()
        flat[k] = orig
        gflat[k] = (fp - fm) / (2 * step)
    return grad


def max_rel_error(analytic, numeric, floor=FLOOR):
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    assert analytic.shape == numeric.shape, (analytic.shape, numeric.shape)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max()) if analytic.size else 0.0
