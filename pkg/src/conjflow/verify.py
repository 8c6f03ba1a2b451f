"""Invariant suites behind ``conjflow verify``: gradient checks against
finite differences, group-property checks over random models, coupling
round trips, initializer identities, and the conjugation-construction
demo.  Each suite returns (name, passed, detail) rows."""

from __future__ import annotations

import time

import numpy as np

from . import autodiff as ad
from . import dynamics as dyn
from . import matrix_flow as mf
from . import training as tr
from .conjugate_net import NcfModel, ncf_init, twin_augment


def numeric_gradient(f, tensors, step=1e-5):
    """Central-difference gradient oracle, independent of the tape."""
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


def max_rel_err(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    floor = np.full_like(a, 1e-6)
    return float(np.max(np.abs(a - b) / np.maximum.reduce([np.abs(a), np.abs(b), floor])))


def _grad_gap(build_loss, params, step=1e-5):
    with ad.Tape() as tape:
        loss = build_loss()
    analytic = ad.leaf_grads(ad.backward(loss), params, tape)
    numeric = numeric_gradient(lambda: float(build_loss().values), params, step=step)
    return max(max_rel_err(x, n) for x, n in zip(analytic, numeric))


def gradient_suite(tol=1e-4):
    """Finite-difference checks for every op kind and both losses."""
    rng = ad.make_rng(90)
    rows = []

    def check(name, build, params, step=1e-5):
        gap = _grad_gap(build, params, step=step)
        rows.append((f"grad/{name}", gap <= tol, f"max rel err {gap:.2e}"))

    a = ad.parameter(rng.uniform(-2, 2, size=(3, 4)))
    b = ad.parameter(rng.uniform(-2, 2, size=(3, 4)))
    w = ad.parameter(rng.uniform(-2, 2, size=(4, 3)))
    v = ad.parameter(rng.uniform(-2, 2, size=4))
    pos = ad.parameter(rng.uniform(0.5, 2.0, size=5))

    check("add", lambda: ad.tsum(ad.add(a, b)), [a, b])
    check("sub", lambda: ad.squared_norm(ad.sub(a, b)), [a, b])
    check("mul", lambda: ad.tsum(ad.mul(a, b)), [a, b])
    check("scalar-mul", lambda: ad.tsum(ad.smul(a, -1.7)), [a])
    check("matmul", lambda: ad.squared_norm(ad.matmul(a, w)), [a, w])
    check("tanh", lambda: ad.tsum(ad.tanh(a)), [a])
    check("exp", lambda: ad.tsum(ad.exp(a)), [a])
    check("power", lambda: ad.tsum(ad.power(pos, -1)), [pos])
    check("sum", lambda: ad.tsum(a), [a])
    check("mean", lambda: ad.tmean(ad.mul(a, a)), [a])
    check("concat", lambda: ad.squared_norm(ad.concat([a, b], axis=1)), [a, b])
    check("slice", lambda: ad.squared_norm(ad.tslice(a, 1, 1, 3)), [a])
    check("transpose", lambda: ad.squared_norm(ad.transpose(a)), [a])
    check("squared-norm", lambda: ad.squared_norm(v), [v])

    fh = dyn.FitzHughNagumo()
    pinn_model = tr.MlpPinn(2, ad.make_rng(91), hidden=(6,), fourier_rows=4)
    x0 = np.array([0.5, -0.2])
    times = np.linspace(0, 1, 4)
    check("pinn_loss", lambda: tr.pinn_loss(pinn_model, fh, x0, times),
          pinn_model.params())

    hh = dyn.RescaledField(dyn.HodgkinHuxley(), (0.1, 10.0, 10.0, 10.0))
    x0h = hh.rescale(dyn.HodgkinHuxley().resting_state())
    data_model = NcfModel(4, (6,), ad.make_rng(92), output_scale=0.4)
    ncf_init(data_model, hh, x0h, init_scale=0.5)
    samples = ad.make_rng(93).uniform(2, 7, size=(3, 3))
    # stiff gating exponentials need a coarser, still-valid FD step
    check("data_loss",
          lambda: tr.data_loss(data_model, x0h, np.linspace(0, 0.5, 3), samples),
          data_model.params(), step=1e-4)
    return rows


def group_suite(n_models=100, t_values=(0.3, 1.1)):
    """Identity / associativity / inversion defects of the conjugate flow
    over random parameterizations in dimensions 2 and 4."""
    rng = ad.make_rng(94)
    worst = {"identity": 0.0, "associativity": 0.0, "inversion": 0.0}
    t_start = time.perf_counter()
    for k in range(n_models):
        n = 2 if k % 2 == 0 else 4
        model = NcfModel(n, (16, 16), ad.make_rng(1000 + k),
                         topology_mode="skew" if k % 3 == 0 else "free")
        model.flow.M.values[:] = rng.uniform(-0.5, 0.5, size=(2 * n, 2 * n))
        model.flow.b.values[:] = rng.uniform(-1, 1, size=(2 * n, 1))
        z0 = twin_augment(rng.uniform(-2, 2, size=n))

        def flow(z, t):
            return model.flow_map(z, [t]).values[:, 0]

        worst["identity"] = max(worst["identity"], float(np.max(np.abs(flow(z0, 0.0) - z0))))
        for t in t_values:
            direct = flow(z0, 2 * t)
            hop = flow(flow(z0, t), t)
            denom = max(float(np.linalg.norm(direct)), 1.0)
            worst["associativity"] = max(
                worst["associativity"], float(np.linalg.norm(hop - direct)) / denom)
            back = flow(flow(z0, t), -t)
            worst["inversion"] = max(
                worst["inversion"],
                float(np.linalg.norm(back - z0)) / max(float(np.linalg.norm(z0)), 1.0))
    elapsed = time.perf_counter() - t_start
    return [
        ("group/identity", worst["identity"] <= 1e-10, f"max defect {worst['identity']:.2e}"),
        ("group/associativity", worst["associativity"] <= 1e-7,
         f"max relative defect {worst['associativity']:.2e}"),
        ("group/inversion", worst["inversion"] <= 1e-7,
         f"max relative defect {worst['inversion']:.2e}"),
        ("group/runtime", elapsed <= 30.0, f"{n_models} models in {elapsed:.1f}s"),
    ]


def coupling_suite(trials=1000):
    """Round-trip exactness of the coupling ensembles."""
    rng = ad.make_rng(95)
    worst = 0.0
    for k in range(trials):
        n = 2 if k % 2 == 0 else 4
        model = NcfModel(n, (12,), ad.make_rng(2000 + k))
        z = rng.uniform(-3, 3, size=(2 * n, 2))
        back = model.ensemble.inverse(model.ensemble.forward(ad.tensor(z))).values
        forth = model.ensemble.forward(model.ensemble.inverse(ad.tensor(z))).values
        scale = max(float(np.max(np.abs(z))), 1.0)
        worst = max(worst, float(np.max(np.abs(back - z))) / scale,
                    float(np.max(np.abs(forth - z))) / scale)
    return [("coupling/round-trip", worst <= 1e-10, f"max relative defect {worst:.2e} over {trials} trials")]


def initializer_suite(trials=100):
    """Constraint and isometry identities of the flow initializers."""
    rng = ad.make_rng(96)
    worst_constraint = 0.0
    worst_skew_constraint = 0.0
    worst_isometry = 0.0
    for _ in range(trials):
        d = int(rng.integers(2, 6))
        j0 = rng.uniform(-2, 2, size=(d, d))
        x0 = rng.uniform(-2, 2, size=d)
        if np.linalg.norm(x0) < 0.1:
            x0[0] += 1.0
        f0 = rng.uniform(-2, 2, size=d)
        a = mf.init_constrained_linearization(j0, x0, f0)
        worst_constraint = max(worst_constraint, float(np.linalg.norm(a @ x0 - f0)))
        a_skew, b = mf.init_skew_fallback(j0, x0, f0)
        worst_skew_constraint = max(worst_skew_constraint,
                                    float(np.linalg.norm(a_skew @ x0 + b - f0)))
        t = float(rng.uniform(-2, 2))
        e = mf.expm(ad.tensor(a_skew * t)).values
        y = rng.uniform(-2, 2, size=d)
        worst_isometry = max(worst_isometry,
                             abs(float(np.linalg.norm(e @ y)) - float(np.linalg.norm(y))))
    return [
        ("init/constrained", worst_constraint <= 1e-12, f"max |Ax0-f0| {worst_constraint:.2e}"),
        ("init/skew-constraint", worst_skew_constraint <= 1e-12,
         f"max |Ax0+b-f0| {worst_skew_constraint:.2e}"),
        ("init/skew-isometry", worst_isometry <= 1e-8, f"max norm drift {worst_isometry:.2e}"),
    ]


def conjugation_suite():
    """Conjugation of the time-augmented flow to a translation, on a
    linear field (closed-form check) and on the spiking benchmark field
    (Richardson-bounded check)."""

    class LinearDecay(dyn.VectorField):
        n = 1

        def eval(self, x):
            return -x

    rows = []
    lin = LinearDecay()
    x0s = [np.array([1.0]), np.array([-0.4])]
    defect = dyn.verify_translation_conjugation(lin, x0s, [0.3, 1.0], dt=1e-4)
    rows.append(("conjugation/linear", defect <= 1e-6, f"max defect {defect:.2e}"))

    fh = dyn.FitzHughNagumo()
    report = dyn.translation_conjugation_report(
        fh, [np.array([2.0, -2.0 / 3.0]), np.array([1.5, 0.2])],
        [0.5, 1.0], dt=1e-3)
    bound = 10.0 * max(report["estimate"], 1e-14)
    rows.append(("conjugation/fitzhugh-nagumo", report["defect"] <= bound,
                 f"defect {report['defect']:.2e} vs 10x Richardson bound {bound:.2e}"))
    return rows


def run_all(fast=False):
    suites = [
        gradient_suite(),
        group_suite(n_models=20 if fast else 100),
        coupling_suite(trials=100 if fast else 1000),
        initializer_suite(trials=20 if fast else 100),
        conjugation_suite(),
    ]
    return [row for suite in suites for row in suite]
