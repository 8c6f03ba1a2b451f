"""Benchmark vector fields, reference integrators, and the numerical
check of the constructive conjugation of an augmented flow to a translation.

Fields expose three evaluation paths: ``eval`` (scalar-math numpy, fast
inner loop for integrators), ``jacobian`` (analytic), and ``eval_tensor``
(autodiff ops, used inside training losses).
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .errors import BlowUpError


class VectorField:
    """Autonomous dynamics F with analytic Jacobian."""

    n = 0
    name = "field"

    def eval(self, x):
        raise NotImplementedError

    def jacobian(self, x):
        raise NotImplementedError

    def eval_tensor(self, x):
        """F applied columnwise to an (n, m) tensor of states."""
        raise NotImplementedError


class FitzHughNagumo(VectorField):
    """Two-dimensional relaxation oscillator for spiking dynamics."""

    n = 2
    name = "fitzhugh_nagumo"

    def __init__(self, a=0.0, b=0.0, eps=1.0, current=0.0):
        self.a = a
        self.b = b
        self.eps = eps
        self.current = current

    def eval(self, x):
        v, r = x
        return np.array([
            v - v ** 3 / 3.0 - r + self.current,
            self.eps * (v + self.a - self.b * r),
        ])

    def jacobian(self, x):
        v = x[0]
        return np.array([
            [1.0 - v * v, -1.0],
            [self.eps, -self.eps * self.b],
        ])

    def eval_tensor(self, x):
        v = ad.tslice(x, 0, 0, 1)
        r = ad.tslice(x, 0, 1, 2)
        dv = ad.sub(ad.sub(v, ad.smul(ad.power(v, 3), 1.0 / 3.0)), r)
        if self.current != 0.0:
            dv = ad.add(dv, ad.tensor(self.current))
        inner = v if self.a == 0.0 else ad.add(v, ad.tensor(self.a))
        if self.b != 0.0:
            inner = ad.sub(inner, ad.smul(r, self.b))
        dr = ad.smul(inner, self.eps)
        return ad.concat([dv, dr], axis=0)


class LotkaVolterra(VectorField):
    """Predator-prey oscillator; orbits circle the coexistence point and
    hug the invariant axes."""

    n = 2
    name = "lotka_volterra"

    def __init__(self, alpha=1.0, beta=1.0, gamma=1.0, delta=1.0):
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.delta = delta

    def eval(self, x):
        u, w = x
        return np.array([
            self.alpha * u - self.beta * u * w,
            -self.gamma * w + self.delta * u * w,
        ])

    def jacobian(self, x):
        u, w = x
        return np.array([
            [self.alpha - self.beta * w, -self.beta * u],
            [self.delta * w, self.delta * u - self.gamma],
        ])

    def eval_tensor(self, x):
        u = ad.tslice(x, 0, 0, 1)
        w = ad.tslice(x, 0, 1, 2)
        uw = ad.mul(u, w)
        du = ad.sub(ad.smul(u, self.alpha), ad.smul(uw, self.beta))
        dw = ad.add(ad.smul(w, -self.gamma), ad.smul(uw, self.delta))
        return ad.concat([du, dw], axis=0)


def _exp_ratio(u, c):
    """u / (exp(u/c) - 1), with the removable singularity at u = 0 filled
    by its series value c*(1 - w/2 + w^2/12), w = u/c."""
    w = u / c
    denom = math.expm1(w)
    if abs(denom) < 1e-7:
        return c * (1.0 - 0.5 * w + w * w / 12.0)
    return u / denom


def _exp_ratio_dv(u, c, du_dv):
    """d/dV of _exp_ratio(u(V), c) given du/dV."""
    w = u / c
    denom = math.expm1(w)
    if abs(denom) < 1e-7:
        return du_dv * (-0.5 + w / 6.0)
    ew = denom + 1.0
    return du_dv * (denom - w * ew) / (denom * denom)


class HodgkinHuxley(VectorField):
    """Four-dimensional squid-axon model, original convention (resting
    potential at V = 0, state order V, n, m, h)."""

    n = 4
    name = "hodgkin_huxley"

    def __init__(self, c_m=1.0, g_na=120.0, g_k=36.0, g_l=0.3,
                 v_na=115.0, v_k=-12.0, v_l=10.613, current=10.0):
        self.c_m = c_m
        self.g_na = g_na
        self.g_k = g_k
        self.g_l = g_l
        self.v_na = v_na
        self.v_k = v_k
        self.v_l = v_l
        self.current = current

    # gating rates
    @staticmethod
    def alpha_n(v):
        return 0.01 * _exp_ratio(10.0 - v, 10.0)

    @staticmethod
    def alpha_m(v):
        return 0.1 * _exp_ratio(25.0 - v, 10.0)

    @staticmethod
    def alpha_h(v):
        return 0.07 * math.exp(-v / 20.0)

    @staticmethod
    def beta_n(v):
        return 0.125 * math.exp(-v / 80.0)

    @staticmethod
    def beta_m(v):
        return 4.0 * math.exp(-v / 18.0)

    @staticmethod
    def beta_h(v):
        return 1.0 / (math.exp((30.0 - v) / 10.0) + 1.0)

    def resting_state(self):
        """V = 0 with gating variables at their steady-state values."""
        v = 0.0
        n_inf = self.alpha_n(v) / (self.alpha_n(v) + self.beta_n(v))
        m_inf = self.alpha_m(v) / (self.alpha_m(v) + self.beta_m(v))
        h_inf = self.alpha_h(v) / (self.alpha_h(v) + self.beta_h(v))
        return np.array([v, n_inf, m_inf, h_inf])

    def eval(self, x):
        v, gn, gm, gh = x
        i_k = self.g_k * gn ** 4 * (v - self.v_k)
        i_na = self.g_na * gm ** 3 * gh * (v - self.v_na)
        i_l = self.g_l * (v - self.v_l)
        dv = (self.current - i_k - i_na - i_l) / self.c_m
        dn = self.alpha_n(v) * (1.0 - gn) - self.beta_n(v) * gn
        dm = self.alpha_m(v) * (1.0 - gm) - self.beta_m(v) * gm
        dh = self.alpha_h(v) * (1.0 - gh) - self.beta_h(v) * gh
        return np.array([dv, dn, dm, dh])

    def jacobian(self, x):
        v, gn, gm, gh = x
        j = np.zeros((4, 4))
        j[0, 0] = -(self.g_k * gn ** 4 + self.g_na * gm ** 3 * gh + self.g_l) / self.c_m
        j[0, 1] = -4.0 * self.g_k * gn ** 3 * (v - self.v_k) / self.c_m
        j[0, 2] = -3.0 * self.g_na * gm ** 2 * gh * (v - self.v_na) / self.c_m
        j[0, 3] = -self.g_na * gm ** 3 * (v - self.v_na) / self.c_m

        dan = 0.01 * _exp_ratio_dv(10.0 - v, 10.0, -1.0)
        dam = 0.1 * _exp_ratio_dv(25.0 - v, 10.0, -1.0)
        dah = -0.07 / 20.0 * math.exp(-v / 20.0)
        dbn = -0.125 / 80.0 * math.exp(-v / 80.0)
        dbm = -4.0 / 18.0 * math.exp(-v / 18.0)
        ew = math.exp((30.0 - v) / 10.0)
        dbh = 0.1 * ew / (ew + 1.0) ** 2

        j[1, 0] = dan * (1.0 - gn) - dbn * gn
        j[1, 1] = -self.alpha_n(v) - self.beta_n(v)
        j[2, 0] = dam * (1.0 - gm) - dbm * gm
        j[2, 2] = -self.alpha_m(v) - self.beta_m(v)
        j[3, 0] = dah * (1.0 - gh) - dbh * gh
        j[3, 3] = -self.alpha_h(v) - self.beta_h(v)
        return j

    def _exp_ratio_tensor(self, u, c):
        # masked series keeps the removable singularity differentiable
        w = ad.smul(u, 1.0 / c)
        denom = ad.sub(ad.exp(w), ad.tensor(np.ones(w.values.shape)))
        mask = (np.abs(denom.values) < 1e-7).astype(np.float64)
        regular = ad.mul(u, ad.power(ad.add(denom, ad.tensor(mask)), -1.0))
        series = ad.smul(
            ad.add(ad.sub(ad.tensor(np.ones(w.values.shape)), ad.smul(w, 0.5)),
                   ad.smul(ad.mul(w, w), 1.0 / 12.0)),
            c,
        )
        keep = ad.tensor(1.0 - mask)
        return ad.add(ad.mul(keep, regular), ad.mul(ad.tensor(mask), series))

    def eval_tensor(self, x):
        v = ad.tslice(x, 0, 0, 1)
        gn = ad.tslice(x, 0, 1, 2)
        gm = ad.tslice(x, 0, 2, 3)
        gh = ad.tslice(x, 0, 3, 4)
        ones = ad.tensor(np.ones(v.values.shape))

        i_k = ad.smul(ad.mul(ad.power(gn, 4), ad.sub(v, ad.tensor(self.v_k))), self.g_k)
        i_na = ad.smul(ad.mul(ad.mul(ad.power(gm, 3), gh), ad.sub(v, ad.tensor(self.v_na))), self.g_na)
        i_l = ad.smul(ad.sub(v, ad.tensor(self.v_l)), self.g_l)
        total = ad.add(ad.add(i_k, i_na), i_l)
        dv = ad.smul(ad.sub(ad.tensor(np.full(v.values.shape, self.current)), total), 1.0 / self.c_m)

        a_n = ad.smul(self._exp_ratio_tensor(ad.sub(ad.tensor(np.full(v.values.shape, 10.0)), v), 10.0), 0.01)
        a_m = ad.smul(self._exp_ratio_tensor(ad.sub(ad.tensor(np.full(v.values.shape, 25.0)), v), 10.0), 0.1)
        a_h = ad.smul(ad.exp(ad.smul(v, -1.0 / 20.0)), 0.07)
        b_n = ad.smul(ad.exp(ad.smul(v, -1.0 / 80.0)), 0.125)
        b_m = ad.smul(ad.exp(ad.smul(v, -1.0 / 18.0)), 4.0)
        e30 = ad.exp(ad.smul(ad.sub(ad.tensor(np.full(v.values.shape, 30.0)), v), 0.1))
        b_h = ad.power(ad.add(e30, ones), -1.0)

        dn = ad.sub(ad.mul(a_n, ad.sub(ones, gn)), ad.mul(b_n, gn))
        dm = ad.sub(ad.mul(a_m, ad.sub(ones, gm)), ad.mul(b_m, gm))
        dh = ad.sub(ad.mul(a_h, ad.sub(ones, gh)), ad.mul(b_h, gh))
        return ad.concat([dv, dn, dm, dh], axis=0)


class RescaledField(VectorField):
    """Change of variables x~ = s * x applied to a base field: the
    rescaled dynamics are F~(x~) = s * F(x~ / s)."""

    def __init__(self, base, factors):
        self.base = base
        self.factors = np.asarray(factors, dtype=np.float64)
        self.n = base.n
        self.name = base.name + "_rescaled"

    def rescale(self, x):
        return np.asarray(x) * self.factors

    def unscale(self, x):
        return np.asarray(x) / self.factors

    def eval(self, x):
        return self.factors * self.base.eval(np.asarray(x) / self.factors)

    def jacobian(self, x):
        j = self.base.jacobian(np.asarray(x) / self.factors)
        return self.factors[:, None] * j / self.factors[None, :]

    def eval_tensor(self, x):
        col = self.factors.reshape(-1, 1)
        inner = ad.mul(x, ad.tensor(1.0 / col))
        return ad.mul(self.base.eval_tensor(inner), ad.tensor(col))


# ---------------------------------------------------------------------------
# integrators
# ---------------------------------------------------------------------------

def _values(x):
    return x.values if isinstance(x, ad.Tensor) else x


def _rk4_step(f, x, h):
    k1 = f(x)
    k2 = f(x + (0.5 * h) * k1)
    k3 = f(x + (0.5 * h) * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _midpoint_step(f, x, h):
    return x + h * f(x + (0.5 * h) * f(x))


def _dense_solve(step, field, x0, times, dt):
    if dt <= 0:
        raise ValueError("dt must be positive")
    times = list(times)
    if any(t2 < t1 for t1, t2 in zip(times, times[1:])) or (times and times[0] < 0):
        raise ValueError("times must be sorted ascending from 0")
    f = field.eval
    x = x0
    t = 0.0
    out = []
    for target in times:
        span = target - t
        nsteps = int(span / dt)
        for _ in range(nsteps):
            x = step(f, x, dt)
        t += nsteps * dt
        rem = target - t
        if rem > 1e-12:
            x = step(f, x, rem)
        t = target
        if not np.all(np.isfinite(_values(x))):
            raise BlowUpError(t)
        out.append(x)
    return out


def rk4_solve(field, x0, times, dt):
    """Classical fixed-step RK4 with dense output at the requested times
    (stepping lands on each time exactly; final partial step allowed).
    Returns an (len(times), n) array."""
    x0 = np.asarray(x0, dtype=np.float64)
    states = _dense_solve(_rk4_step, field, x0, times, dt)
    return np.stack(states)


def midpoint_solve(field_like, x0, times, dt):
    """Explicit midpoint rule with the same dense-output contract as
    rk4_solve.  When ``x0`` is a tensor and the field evaluates tensors,
    every step is recorded, so gradients flow through the unrolled
    solution."""
    if isinstance(x0, ad.Tensor):
        states = _dense_solve(_midpoint_step, field_like, x0, times, dt)
        return states
    x0 = np.asarray(x0, dtype=np.float64)
    return np.stack(_dense_solve(_midpoint_step, field_like, x0, times, dt))


def flow_to(field, x0, t, dt):
    """Flow map of the field over a signed time span (RK4 steps)."""
    x = np.asarray(x0, dtype=np.float64)
    if t == 0.0:
        return x.copy()
    h = dt if t > 0 else -dt
    nsteps = int(abs(t) / dt)
    f = field.eval
    for _ in range(nsteps):
        x = _rk4_step(f, x, h)
    rem = t - nsteps * h
    if abs(rem) > 1e-12:
        x = _rk4_step(f, x, rem)
    if not np.all(np.isfinite(x)):
        raise BlowUpError(t)
    return x


# ---------------------------------------------------------------------------
# constructive conjugation demo
# ---------------------------------------------------------------------------

def verify_translation_conjugation(field, x0_values, t_values, a_values=(0.0, 0.5), dt=1e-3):
    """Max defect of conjugating the time-augmented flow to a translation.

    The augmented system (x, a) with da/dt = 1 is conjugated to a pure
    translation in a by H(x, a) = (flow(-a) x, a).  The check applies
    H, the unit translation for time t, then H^{-1}, and compares with
    advancing x directly by t.
    """
    return _translation_conjugation_defect(field, x0_values, t_values, a_values, dt)


def translation_conjugation_report(field, x0_values, t_values, a_values=(0.0, 0.5), dt=1e-3):
    """Defect at dt together with a Richardson error estimate from a
    dt/2 comparison of the same composite maps."""
    coarse, ends_coarse = _translation_conjugation_defect(field, x0_values, t_values, a_values, dt,
                                           collect=True)
    _, ends_fine = _translation_conjugation_defect(field, x0_values, t_values, a_values, dt / 2.0,
                                    collect=True)
    est = 0.0
    for (wc, rc), (wf, rf) in zip(ends_coarse, ends_fine):
        est = max(est, (np.max(np.abs(wc - wf)) + np.max(np.abs(rc - rf))) * 16.0 / 15.0)
    return {"defect": coarse, "estimate": est}


def _translation_conjugation_defect(field, x0_values, t_values, a_values, dt, collect=False):
    defect = 0.0
    endpoints = []
    for x0 in x0_values:
        for a in a_values:
            for t in t_values:
                z = flow_to(field, x0, -a, dt)        # H
                w = flow_to(field, z, a + t, dt)      # translate a, then H^{-1}
                ref = flow_to(field, x0, t, dt)       # direct flow
                defect = max(defect, float(np.max(np.abs(w - ref))))
                if collect:
                    endpoints.append((w, ref))
    if collect:
        return defect, endpoints
    return defect


# ---------------------------------------------------------------------------
# trajectory export
# ---------------------------------------------------------------------------

def export_trajectory_csv(path, times, states, column_names=None):
    """CSV with header t,x1,...,xn and 17-significant-digit decimals."""
    states = np.asarray(states)
    n = states.shape[1]
    names = column_names or [f"x{i + 1}" for i in range(n)]
    with open(path, "w") as fh:
        fh.write("t," + ",".join(names) + "\n")
        for t, row in zip(times, states):
            fh.write(",".join(f"{v:.17g}" for v in (t, *row)) + "\n")
