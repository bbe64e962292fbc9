"""Shared test oracles: finite differences and gradient checking."""

import numpy as np

from vaecast.tensor import Tape, Tensor


def finite_difference(fn, tensors, h=1e-5):
    """Central-difference gradients of a scalar function of several tensors.

    ``fn`` maps the tensors to a float and must be re-evaluable (any internal
    randomness has to be re-seeded per call).
    """
    grads = []
    for t in tensors:
        flat = t.values.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(*tensors)
            flat[i] = orig - h
            fm = fn(*tensors)
            flat[i] = orig
            g[i] = (fp - fm) / (2.0 * h)
        grads.append(g.reshape(t.shape))
    return grads


def analytic_gradients(fn, tensors):
    """Gradients of ``fn`` (returning a scalar Tensor) via the tape."""
    with Tape() as tape:
        out = fn(*tensors)
        gm = tape.backward(out)
    return [np.zeros(t.shape) if gm.get(t) is None else gm.get(t) for t in tensors]


def rel_error(a, b, floor=1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.max(np.abs(a - b) / denom) if a.size else 0.0


def gradcheck(fn, tensors, h=1e-5, tol=1e-4, floor=1e-6):
    """Assert analytic gradients match central differences elementwise.

    ``fn`` takes the tensors and returns a scalar Tensor; the finite-difference
    oracle evaluates the same function and reads ``.item()``.
    """
    for t in tensors:
        t.requires_grad = True
    analytic = analytic_gradients(fn, tensors)

    def scalar_fn(*ts):
        return fn(*ts).item()

    numeric = finite_difference(scalar_fn, tensors, h=h)
    worst = 0.0
    for ga, gn in zip(analytic, numeric):
        worst = max(worst, rel_error(ga, gn, floor=floor))
    assert worst < tol, f"gradient mismatch: max relative error {worst:.3e} >= {tol}"
    return worst
