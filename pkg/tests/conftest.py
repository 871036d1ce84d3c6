"""Shared fixtures and the finite-difference gradient-check harness.

Gradient checks run in float64 so that central differences at h=1e-3 are not
limited by float32 quantization; losses used for checking are smooth (mean of
squares) because the L1 kink makes finite differences meaningless near zero.
"""

import numpy as np
import pytest

from c2dsr import tensor as T


def rel_err(a, b):
    return abs(a - b) / max(1e-3, abs(a) + abs(b))


def gradcheck(make_loss, params, h=1e-3, tol=1e-3, probes=4, seed=1234):
    """Compare analytic grads of ``make_loss()`` against central differences.

    ``params`` is a dict name -> Tensor; each call to ``make_loss`` must
    rebuild the graph from the current parameter values. Parameters are
    temporarily promoted to float64. Asserts the worst relative error over a
    probe subset of coordinates of every parameter is below ``tol``.
    """
    saved = {k: p.data for k, p in params.items()}
    for p in params.values():
        p.data = p.data.astype(np.float64)
    try:
        with T.precision(np.float64):
            return _gradcheck_f64(make_loss, params, h, tol, probes, seed)
    finally:
        for k, p in params.items():
            p.data = saved[k]


def _gradcheck_f64(make_loss, params, h, tol, probes, seed):
    loss = make_loss()
    for p in params.values():
        p.grad = None
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None
                    else np.zeros_like(p.data))
                for k, p in params.items()}
    worst, worst_name = 0.0, None
    rng = np.random.default_rng(seed)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        for i in rng.choice(flat.size, size=min(probes, flat.size),
                            replace=False):
            keep = flat[i]
            flat[i] = keep + h
            up = make_loss().item()
            flat[i] = keep - h
            down = make_loss().item()
            flat[i] = keep
            fd = (up - down) / (2 * h)
            an = float(analytic[name].reshape(-1)[i])
            err = rel_err(fd, an)
            if err > worst:
                worst, worst_name = err, name
    assert worst < tol, f"gradcheck: rel err {worst:.3e} at {worst_name!r}"
    return worst


def smooth_loss(t):
    """Mean of squares: a kink-free scalar objective for gradient checks."""
    return T.mean(T.square(t))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
