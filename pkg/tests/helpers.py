"""Shared test utilities: finite-difference gradient probe and error metrics."""

import numpy as np

from attnhybrid.tensor import Tensor, no_grad

FD_H = 1e-5
FD_RTOL = 1e-4


def rel_err(got, want) -> float:
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    scale = max(1.0, float(np.max(np.abs(want))) if want.size else 0.0)
    return float(np.max(np.abs(got - want))) / scale if got.size else 0.0


def numeric_grad(f, arrays, index):
    """Central finite differences of scalar f(arrays) w.r.t. arrays[index]."""
    base = [a.copy() for a in arrays]
    g = np.zeros_like(base[index])
    flat = g.reshape(-1)
    target = base[index].reshape(-1)
    for i in range(target.size):
        orig = target[i]
        target[i] = orig + FD_H
        hi = f(base)
        target[i] = orig - FD_H
        lo = f(base)
        target[i] = orig
        flat[i] = (hi - lo) / (2.0 * FD_H)
    return g


def check_grads(build_loss, arrays, note=""):
    """Assert autodiff grads match numeric grads for every input array.

    ``build_loss`` receives a list of Tensors (one per input array) and must
    return a scalar Tensor; it is re-invoked on perturbed plain arrays for the
    numeric side, so it must not capture state across calls.
    """
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build_loss(tensors)
    loss.backward()

    def eval_loss(arrs):
        with no_grad():
            return float(build_loss([Tensor(a) for a in arrs]).data)

    for idx, t in enumerate(tensors):
        want = numeric_grad(eval_loss, arrays, idx)
        got = t.grad if t.grad is not None else np.zeros_like(want)
        err = np.max(np.abs(got - want))
        scale = max(1.0, np.max(np.abs(want)))
        assert err / scale <= FD_RTOL, (
            f"gradient mismatch on input {idx} {note}: {err / scale:.3e}"
        )


def margin_uniform(rng, shape, low=0.2, high=1.5):
    """Random values bounded away from zero (avoids relu/max kinks in FD)."""
    mag = rng.uniform(low, high, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return mag * sign
