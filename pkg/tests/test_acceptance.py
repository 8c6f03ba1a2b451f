"""Acceptance criteria for the benchmark reproduction.

Each test prints one PASS/FAIL line per criterion before asserting, so a
full run reads as a checklist.  The experiment sweeps run at the shipped
defaults (5 seeds, full epoch budgets) and are shared session-wide; expect
the module to dominate the suite's runtime.
"""

import time

import numpy as np
import pytest

from conjflow import harness as hz
from conjflow import verify as vf


def report(name, ok, detail):
    print(f"{name} {'PASS' if ok else 'FAIL'}: {detail}")
    return ok


def run_sweep(out_root, experiment, models):
    t0 = time.perf_counter()
    aggs = {}
    for model in models:
        spec = hz.ExperimentSpec.build(experiment, model,
                                       {"out_dir": str(out_root / experiment)})
        _, aggs[model] = hz.run_experiment(spec)
    return aggs, time.perf_counter() - t0


@pytest.fixture(scope="session")
def out_root(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def fh_sweep(out_root):
    return run_sweep(out_root, "fh_forward", ("mlp", "ncf", "ncf_t"))


@pytest.fixture(scope="session")
def hh_sweep(out_root):
    return run_sweep(out_root, "hh_inverse", ("mlp", "ncf", "ncf_t", "node"))


@pytest.fixture(scope="session")
def lv_sweep(out_root):
    return run_sweep(out_root, "lv_forward", ("mlp", "ncf_t"))


@pytest.fixture(scope="session")
def fh4_sweep(out_root):
    return run_sweep(out_root, "fh_nonlinear", ("mlp", "ncf", "ncf_t"))


def mean(aggs, model, metric):
    return aggs[model][metric]["mean"]


def test_ac1_fh_benchmark(fh_sweep):
    aggs, elapsed = fh_sweep
    checks = [
        report("AC-1 ncf_t L_acc<=1e-2", mean(aggs, "ncf_t", "l_acc") <= 1e-2,
               f"{mean(aggs, 'ncf_t', 'l_acc'):.3e}"),
        report("AC-1 ncf_t L_extrap<=1e-1", mean(aggs, "ncf_t", "l_extrap") <= 1e-1,
               f"{mean(aggs, 'ncf_t', 'l_extrap'):.3e}"),
        report("AC-1 mlp L_acc<=1e-2", mean(aggs, "mlp", "l_acc") <= 1e-2,
               f"{mean(aggs, 'mlp', 'l_acc'):.3e}"),
        report("AC-1 mlp L_extrap>=1.0", mean(aggs, "mlp", "l_extrap") >= 1.0,
               f"{mean(aggs, 'mlp', 'l_extrap'):.3e}"),
        report("AC-1 runtime<=15min", elapsed <= 900.0, f"{elapsed:.0f}s"),
    ]
    assert all(checks)


def test_ac2_fh_extrapolation_ordering(fh_sweep):
    aggs, _ = fh_sweep
    e_t = mean(aggs, "ncf_t", "l_extrap")
    e_f = mean(aggs, "ncf", "l_extrap")
    e_m = mean(aggs, "mlp", "l_extrap")
    checks = [
        report("AC-2 ncf_t < ncf by >=10x", e_t * 10 <= e_f,
               f"ncf_t {e_t:.3e} vs ncf {e_f:.3e}"),
        report("AC-2 ncf < mlp by >=10x", e_f * 10 <= e_m,
               f"ncf {e_f:.3e} vs mlp {e_m:.3e}"),
    ]
    assert all(checks)


def test_ac3_hh_benchmark(hh_sweep):
    aggs, _ = hh_sweep
    nt_acc = mean(aggs, "ncf_t", "l_acc")
    nt_ext = mean(aggs, "ncf_t", "l_extrap")
    m_acc = mean(aggs, "mlp", "l_acc")
    m_ext = mean(aggs, "mlp", "l_extrap")
    node_time = mean(aggs, "node", "wall_time_s")
    ncf_time = mean(aggs, "ncf_t", "wall_time_s")
    checks = [
        report("AC-3 ncf_t L_extrap<=1e-1", nt_ext <= 1e-1, f"{nt_ext:.3e}"),
        report("AC-3 ncf_t extrap within 3x of acc", nt_ext <= 3 * nt_acc,
               f"extrap {nt_ext:.3e} vs acc {nt_acc:.3e}"),
        report("AC-3 mlp extrap/acc>=1e3", m_ext / m_acc >= 1e3,
               f"ratio {m_ext / m_acc:.1f}"),
        report("AC-3 node completed", aggs["node"]["l_acc"]["mean"] is not None,
               f"{aggs['node']['n_diverged']} diverged"),
        report("AC-3 node time >= 2x ncf", node_time >= 2 * ncf_time,
               f"node {node_time:.0f}s vs ncf {ncf_time:.0f}s"),
    ]
    assert all(checks)


def test_ac4_lv_spurious_equilibrium(lv_sweep):
    aggs, _ = lv_sweep
    checks = [
        report("AC-4 mlp L_acc>=0.3", mean(aggs, "mlp", "l_acc") >= 0.3,
               f"{mean(aggs, 'mlp', 'l_acc'):.3e}"),
        report("AC-4 ncf_t L_acc<=1e-1", mean(aggs, "ncf_t", "l_acc") <= 1e-1,
               f"{mean(aggs, 'ncf_t', 'l_acc'):.3e}"),
    ]
    assert all(checks)


def test_ac5_fh_nonlinear_failure_mode(fh4_sweep):
    aggs, _ = fh4_sweep
    checks = [
        report("AC-5 mlp L_acc<=1e-3", mean(aggs, "mlp", "l_acc") <= 1e-3,
               f"{mean(aggs, 'mlp', 'l_acc'):.3e}"),
        report("AC-5 ncf L_acc>=0.3", mean(aggs, "ncf", "l_acc") >= 0.3,
               f"{mean(aggs, 'ncf', 'l_acc'):.3e}"),
        report("AC-5 ncf_t L_acc>=0.3", mean(aggs, "ncf_t", "l_acc") >= 0.3,
               f"{mean(aggs, 'ncf_t', 'l_acc'):.3e}"),
    ]
    assert all(checks)


def test_ac6_group_property_suite():
    rows = vf.group_suite(n_models=100)
    checks = [report(f"AC-6 {name}", ok, detail) for name, ok, detail in rows]
    assert all(checks)


def test_ac7_coupling_round_trips():
    rows = vf.coupling_suite(trials=1000)
    checks = [report(f"AC-7 {name}", ok, detail) for name, ok, detail in rows]
    assert all(checks)


def test_ac8_gradient_suite():
    rows = vf.gradient_suite()
    checks = [report(f"AC-8 {name}", ok, detail) for name, ok, detail in rows]
    assert all(checks)


def test_ac9_conjugation_demo():
    rows = vf.conjugation_suite()
    checks = [report(f"AC-9 {name}", ok, detail) for name, ok, detail in rows]
    assert all(checks)


def test_ac10_initializer_suite():
    rows = vf.initializer_suite(trials=100)
    checks = [report(f"AC-10 {name}", ok, detail) for name, ok, detail in rows]
    assert all(checks)
