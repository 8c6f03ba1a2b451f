"""Losses, metrics, the training loop, and the two baseline models.

All models share a small duck-typed surface:

  params()                    trainable tensors
  grid_eval(x0, times, h)     list of branch triples (states, plus, minus),
                              tensors of shape (n, m) at t, t+h, t-h
  trajectory(x0, times)       numpy (m, n) output used for metrics

The conjugate-flow model contributes two branches (its twin halves); the
baselines contribute one.  Time derivatives are always second-order
centered finite differences, never autodiff in t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .conjugate_net import Mlp, NcfModel
from .errors import ConfigurationError


# ---------------------------------------------------------------------------
# finite differences in time
# ---------------------------------------------------------------------------

@dataclass
class FdDifferentiator:
    """Centered differences with a fixed small step (O(h^2) accurate)."""

    step: float = 1e-3

    def derivative(self, plus, minus):
        return ad.smul(ad.sub(plus, minus), 0.5 / self.step)


def fd_time_derivative(model_eval, times, step=1e-3):
    """(f(t+h) - f(t-h)) / 2h for a numpy trajectory callable.

    ``model_eval`` maps an array of times to an (m, n) array of states.
    """
    times = np.asarray(times, dtype=np.float64)
    return (model_eval(times + step) - model_eval(times - step)) / (2.0 * step)


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

class MlpPinn:
    """Feed-forward PINN over (t, x0) with fixed Gaussian Fourier features
    and an output wrapper that pins the initial condition exactly:
    out(t) = x0 + w(t) * trunk(features), w(0) = 0."""

    def __init__(self, state_dim, rng, hidden=(32, 32, 32), fourier_rows=32,
                 sigma=2.0, ic_mode="exp"):
        if ic_mode not in ("exp", "linear"):
            raise ConfigurationError(f"unknown ic_mode {ic_mode!r}")
        self.state_dim = state_dim
        self.ic_mode = ic_mode
        self.freqs = rng.normal(0.0, sigma, size=(fourier_rows, 1 + state_dim))
        self.trunk = Mlp([2 * fourier_rows, *hidden, state_dim], rng)

    def params(self):
        return self.trunk.params()

    def param_count(self):
        return self.trunk.param_count()

    def _wrap(self, times):
        t = np.asarray(times, dtype=np.float64)
        return t if self.ic_mode == "linear" else -np.expm1(-t)

    def _features(self, x0, times):
        t = np.asarray(times, dtype=np.float64)
        v = np.vstack([t[None, :], np.tile(np.asarray(x0, float)[:, None], (1, t.size))])
        proj = self.freqs @ v
        return np.vstack([np.sin(proj), np.cos(proj)])

    def eval_states(self, x0, times):
        """(n, m) tensor of model states at the given times."""
        x0 = np.asarray(x0, dtype=np.float64)
        feats = ad.tensor(self._features(x0, times))
        wrap = ad.tensor(self._wrap(times)[None, :])
        return ad.add(ad.tensor(x0[:, None]), ad.mul(wrap, self.trunk.forward(feats)))

    def grid_eval(self, x0, times, h):
        times = np.asarray(times, dtype=np.float64)
        m = times.size
        stacked = np.concatenate([times, times + h, times - h])
        out = self.eval_states(x0, stacked)
        return [(ad.tslice(out, 1, 0, m),
                 ad.tslice(out, 1, m, 2 * m),
                 ad.tslice(out, 1, 2 * m, 3 * m))]

    def trajectory(self, x0, times):
        return self.eval_states(x0, times).values.T.copy()


class NeuralOde:
    """Neural vector field integrated by an explicit midpoint solver with
    a fixed number of substeps per inter-sample interval; gradients flow
    through the unrolled steps."""

    def __init__(self, state_dim, rng, hidden=(128, 128), substeps=2):
        self.state_dim = state_dim
        self.field = Mlp([state_dim, *hidden, state_dim], rng)
        self.substeps = substeps

    def params(self):
        return self.field.params()

    def param_count(self):
        return self.field.param_count()

    def _midpoint(self, x, h):
        f1 = self.field.forward(x)
        mid = ad.add(x, ad.smul(f1, 0.5 * h))
        return ad.add(x, ad.smul(self.field.forward(mid), h))

    def _chain(self, x0, times):
        """Sequential states at the given times (first one must be 0)."""
        x = ad.tensor(np.asarray(x0, dtype=np.float64)[:, None])
        states = [x]
        for t_prev, t_next in zip(times[:-1], times[1:]):
            h = (t_next - t_prev) / self.substeps
            for _ in range(self.substeps):
                x = self._midpoint(x, h)
            states.append(x)
        return states

    def grid_eval(self, x0, times, h):
        times = np.asarray(times, dtype=np.float64)
        if times[0] != 0.0:
            raise ConfigurationError("sample grid must start at t=0")
        s = ad.concat(self._chain(x0, times), axis=1)  # (n, m)
        # one batched midpoint probe of size +-h from every grid state
        f1 = self.field.forward(s)
        plus = ad.add(s, ad.smul(self.field.forward(ad.add(s, ad.smul(f1, 0.5 * h))), h))
        minus = ad.add(s, ad.smul(self.field.forward(ad.sub(s, ad.smul(f1, 0.5 * h))), -h))
        return [(s, plus, minus)]

    def trajectory(self, x0, times):
        states = self._chain(x0, np.asarray(times, dtype=np.float64))
        return np.concatenate([s.values.T for s in states], axis=0)


def _ncf_grid_eval(self, x0, times, h):
    times = np.asarray(times, dtype=np.float64)
    m = times.size
    if m > 1:
        dt = times[1] - times[0]
        uniform = np.allclose(np.diff(times), dt, rtol=0, atol=1e-9) and times[0] == 0.0
    else:
        dt, uniform = 0.0, times[0] == 0.0
    if uniform:
        out = self.forward_grid(x0, dt, m, fd_h=h)
        return [out["a"], out["b"]]
    _, xa, xb = self.forward_times(x0, times)
    _, pa, pb = self.forward_times(x0, times + h)
    _, ma, mb = self.forward_times(x0, times - h)
    return [(xa, pa, ma), (xb, pb, mb)]


def _ncf_trajectory(self, x0, times):
    avg, _, _ = self.forward_times(x0, list(np.asarray(times, dtype=np.float64)))
    return avg.values.T.copy()


NcfModel.grid_eval = _ncf_grid_eval
NcfModel.trajectory = _ncf_trajectory


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def residual_loss(branches, field, step, component=None):
    """Mean over the grid of the squared ODE residual, averaged across
    branches.  ``component`` restricts the residual to one state row."""
    fd = FdDifferentiator(step)
    total = None
    for states, plus, minus in branches:
        m = states.values.shape[1]
        resid = ad.sub(fd.derivative(plus, minus), field.eval_tensor(states))
        if component is not None:
            resid = ad.tslice(resid, 0, component, component + 1)
        term = ad.smul(ad.squared_norm(resid), 1.0 / m)
        total = term if total is None else ad.add(total, term)
    return ad.smul(total, 1.0 / len(branches))


def pinn_loss(model, field, x0, times, step=1e-3, component=None):
    """Physics-informed loss on a time grid (see residual_loss)."""
    return residual_loss(model.grid_eval(x0, times, step), field, step, component)


def sample_fit_loss(branches, samples, components):
    """Mean squared error against observed samples on the grid, summed
    over the included components; averaged across branches."""
    lo, hi = components
    samples = np.asarray(samples, dtype=np.float64)
    total = None
    for states, _, _ in branches:
        m = states.values.shape[1]
        if samples.shape != (hi - lo, m):
            raise ConfigurationError(
                f"samples of shape {samples.shape} do not align with the "
                f"{hi - lo} observed components on a {m}-point grid")
        diff = ad.sub(ad.tslice(states, 0, lo, hi), ad.tensor(samples))
        term = ad.smul(ad.squared_norm(diff), 1.0 / m)
        total = term if total is None else ad.add(total, term)
    return ad.smul(total, 1.0 / len(branches))


def data_loss(model, x0, times, samples, components=(1, 4), step=1e-3):
    """Data loss over the observed components (initial state excluded)."""
    return sample_fit_loss(model.grid_eval(x0, times, step), samples, components)


def eval_metrics(model, x0, times_acc, reference_acc, times_ext, reference_ext):
    """Mean squared trajectory errors on the training horizon and on the
    doubled horizon, computed on the model's (averaged) output."""
    pred_acc = model.trajectory(x0, times_acc)
    pred_ext = model.trajectory(x0, times_ext)
    l_acc = float(np.mean(np.sum((pred_acc - reference_acc) ** 2, axis=1)))
    l_ext = float(np.mean(np.sum((pred_ext - reference_ext) ** 2, axis=1)))
    return l_acc, l_ext


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class LossReport:
    epoch: int
    physics_loss: float
    data_loss: float
    total: float


@dataclass
class TrainOutcome:
    history: list
    diverged: bool
    best_total: float


def train(model, losses_fn, epochs=2000, lr=1e-3, betas=(0.9, 0.99),
          physics_weight=1.0, data_weight=1.0):
    """Full-batch Adam training, keeping the best-by-loss parameters.

    ``losses_fn`` computes (physics, data) loss tensors for the current
    parameters; data may be None.  A non-finite loss or gradient aborts
    with the partial history and the diverged flag set.
    """
    params = model.params()
    state = ad.AdamState(params, lr=lr, betas=betas)
    history = []
    diverged = False
    best_total = math.inf
    best_values = [p.values.copy() for p in params]
    for epoch in range(epochs):
        with ad.Tape() as tape:
            physics, data = losses_fn()
            total = ad.smul(physics, physics_weight)
            if data is not None:
                total = ad.add(total, ad.smul(data, data_weight))
        p_val = float(physics.values)
        d_val = float(data.values) if data is not None else 0.0
        t_val = float(total.values)
        if not math.isfinite(t_val):
            diverged = True
            break
        history.append(LossReport(epoch, p_val, d_val, t_val))
        if t_val < best_total:
            best_total = t_val
            best_values = [p.values.copy() for p in params]
        grads = ad.leaf_grads(ad.backward(total), params, tape)
        try:
            ad.adam_step(params, grads, state)
        except ad.DivergedTrainingError:
            diverged = True
            break
    for p, v in zip(params, best_values):
        p.values[:] = v
    return TrainOutcome(history, diverged, best_total)


def export_history_csv(path, history):
    """CSV mirror of the per-epoch loss history."""
    with open(path, "w") as fh:
        fh.write("epoch,physics_loss,data_loss,total\n")
        for rec in history:
            fh.write(f"{rec.epoch},{rec.physics_loss:.17g},"
                     f"{rec.data_loss:.17g},{rec.total:.17g}\n")
