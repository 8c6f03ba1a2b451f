"""Shared test oracles: finite-difference gradients and error measures."""

import numpy as np

from conjflow import autodiff as ad


def numeric_gradient(f, tensors, step=1e-5):
    """Central finite differences of a scalar-valued callable.

    ``f`` takes no arguments and reads the current values of ``tensors``;
    the oracle perturbs entries in place and restores them.
    """
    grads = []
    for t in tensors:
        flat = t.values.reshape(-1)
        g = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f()
            flat[i] = orig - step
            fm = f()
            flat[i] = orig
            g[i] = (fp - fm) / (2.0 * step)
        grads.append(g.reshape(t.values.shape))
    return grads


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    floor = np.full_like(a, 1e-6)
    return float(np.max(np.abs(a - b) / np.maximum.reduce([np.abs(a), np.abs(b), floor])))


def check_gradient(build_loss, params, tol=1e-4, step=1e-5):
    """Analytic tape gradient vs the finite-difference oracle."""
    with ad.Tape() as tape:
        loss = build_loss()
    gmap = ad.backward(loss)
    analytic = ad.leaf_grads(gmap, params, tape)
    numeric = numeric_gradient(lambda: float(build_loss().values), params, step=step)
    worst = max(rel_err(a, n) for a, n in zip(analytic, numeric))
    assert worst <= tol, f"gradient mismatch: relative error {worst:g} > {tol:g}"


def rk4_oracle(f, x0, t_end, dt):
    """Plain fixed-step RK4 used as an independent reference integrator."""
    x = np.asarray(x0, dtype=np.float64).copy()
    t = 0.0
    n_steps = int(abs(t_end) / dt)
    h = dt if t_end >= 0 else -dt
    for _ in range(n_steps):
        x = _rk4_step(f, x, h)
        t += h
    rem = t_end - t
    if abs(rem) > 1e-15:
        x = _rk4_step(f, x, rem)
    return x


def _rk4_step(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
