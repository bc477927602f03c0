"""Acceptance suite: each test prints one PASS/FAIL line, then asserts."""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from oracles import dense_heisenberg, dense_magnetization, filtered_average
from rmps_thermo.estimator import (
    estimate_thermal_expectation,
    estimate_trace,
    plan_samples,
    relative_variance_scan,
)
from rmps_thermo.experiments import FilterConfig, magnetization_curve
from rmps_thermo.hamiltonians import build_model, ising_mpo, magnetization_mpo, mpo_square
from rmps_thermo.moments import (
    empirical_moment,
    exact_second_moment,
    loglog_slope,
    two_design_report,
)
from rmps_thermo.mps import left_canonical_residuals, norm
from rmps_thermo.sampler import RmpsSpec, derive_seed, sample_indexed

# Tr H^2 of the N=10, lambda=1.5 Ising chain, from the Pauli-kron oracle
ISING_N10_TRACE_H2 = 32256.0


@pytest.fixture
def report(capsys):
    def emit(name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")

    return emit


def test_first_moment_identity(report):
    t0 = time.perf_counter()
    m = 200_000
    em = empirical_moment(RmpsSpec(4, 2), 1, m, np.random.default_rng(derive_seed(0, 1)))
    dev = float(np.max(np.abs(em.mean - np.eye(16) / 16)))
    tol = 5 / math.sqrt(m)
    elapsed = time.perf_counter() - t0
    ok = dev <= tol and elapsed < 60
    report("first-moment", ok, f"max|E1 - I/16| = {dev:.2e} (tol {tol:.2e}), {elapsed:.1f}s")
    assert ok


def test_second_moment_formula(report):
    t0 = time.perf_counter()
    worst = {}
    for n in (3, 4):
        spec = RmpsSpec(n, 2)
        em = empirical_moment(spec, 2, 100_000, np.random.default_rng(derive_seed(0, 2, n)))
        worst[n] = float(em.z_scores(exact_second_moment(spec)).max())
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 5 and elapsed < 300
    report("second-moment", ok, f"max z N=3: {worst[3]:.2f}, N=4: {worst[4]:.2f} (tol 5), {elapsed:.1f}s")
    assert ok


def test_two_design_distance_scaling(report):
    chis = [2, 4, 8, 16]
    rows = two_design_report([6], chis)
    rel = [r.relative_distance for r in rows]
    slope = loglog_slope(chis, rel)
    ok = abs(slope + 1) <= 0.2
    report(
        "two-design-scaling",
        ok,
        f"N=6 relative distances {[round(x, 4) for x in rel]}, slope {slope:.3f} (target -1 +- 0.2)",
    )
    assert ok


def test_variance_collapse(report):
    t0 = time.perf_counter()
    ms = [8, 16, 32, 64, 128, 256, 512]
    op = mpo_square(ising_mpo(20, 1.5))
    rows = relative_variance_scan(op, RmpsSpec(20, 8, master_seed=0), [2, 4, 8], ms, runs=50)
    rv = {chi: [r.relative_variance for r in rows if r.chi == chi] for chi in (2, 4, 8)}
    slopes = {chi: loglog_slope(ms, v) for chi, v in rv.items()}
    ratios = [a / b for a, b in zip(rv[2], rv[4])]
    slope_ok = all(abs(s + 1) <= 0.15 for s in slopes.values())
    ratio_ok = all(2 <= q <= 8 for q in ratios)
    ok = slope_ok and ratio_ok
    elapsed = time.perf_counter() - t0
    detail = (
        f"slopes {{{', '.join(f'{c}: {s:.3f}' for c, s in slopes.items())}}} (target -1 +- 0.15); "
        f"chi2/chi4 ratios {[round(q, 2) for q in ratios]} (range [2, 8]), {elapsed:.0f}s"
    )
    report("variance-collapse", ok, detail)
    assert ok


def test_microcanonical_estimator(report):
    t0 = time.perf_counter()
    n, chi = 8, 8
    plan = plan_samples(0.1, 0.1, chi)
    fc = FilterConfig(energy_density=-0.15, window=0.5)
    b = magnetization_mpo(n)
    parts = []
    ok = True
    for i, lam in enumerate((0.0, 0.5, 1.0)):
        h, terms = build_model("heisenberg", n, lam)
        fs = fc.build(n, terms)
        spec = RmpsSpec(n, chi, master_seed=derive_seed(0, 5, i))
        res = estimate_thermal_expectation(h, b, fs, spec, plan.num_samples, 16, method="zipup")
        ref = filtered_average(
            dense_heisenberg(n, lam), dense_magnetization(n), fs.target_energy, fs.half_width, fs.num_applications
        )
        dev = abs(res.mean - ref) / res.standard_error
        ok &= dev <= 3
        parts.append(f"lam={lam}: {res.mean:.4f} vs {ref:.4f} ({dev:.2f} se)")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 600
    report("microcanonical", ok, f"M={plan.num_samples}; " + "; ".join(parts) + f"; {elapsed:.0f}s")
    assert ok


def test_finite_size_overlap(report):
    t0 = time.perf_counter()
    lams = [0.0, 0.25, 0.5]
    fc = FilterConfig(energy_density=-0.15, window=0.35)
    curves = {
        n: magnetization_curve(n, lams, 16, 50, fc, 24, 0, method="zipup", dense_reference=False)
        for n in (24, 48)
    }
    diffs = [abs(a.mean - b.mean) for a, b in zip(curves[24], curves[48])]
    ok = max(diffs) <= 0.03
    elapsed = time.perf_counter() - t0
    parts = [
        f"lam={lam}: {a.mean:.4f}+-{a.standard_error:.4f} (e/N {a.energy_density:.3f}) "
        f"vs {b.mean:.4f}+-{b.standard_error:.4f} (e/N {b.energy_density:.3f})"
        for lam, a, b in zip(lams, curves[24], curves[48])
    ]
    report("finite-size", ok, "; ".join(parts) + f"; max diff {max(diffs):.4f} (tol 0.03), {elapsed:.0f}s")
    assert ok


def test_trace_estimation(report):
    t0 = time.perf_counter()
    op = mpo_square(ising_mpo(10, 1.5))
    res = estimate_trace(op, RmpsSpec(10, 8, master_seed=0), 10_000, keep_records=False)
    dev = abs(res.mean - ISING_N10_TRACE_H2) / res.standard_error
    elapsed = time.perf_counter() - t0
    ok = dev <= 3 and elapsed < 120
    report(
        "trace",
        ok,
        f"{res.mean:.1f} +- {res.standard_error:.1f} vs {ISING_N10_TRACE_H2:.0f} ({dev:.2f} se), {elapsed:.0f}s",
    )
    assert ok


def test_chebyshev_contract(report):
    t0 = time.perf_counter()
    n, chi, lam = 6, 4, 1.0
    eps, delta, runs = 0.2, 0.2, 200
    plan = plan_samples(eps, delta, chi)
    h, terms = build_model("heisenberg", n, lam)
    fs = FilterConfig(energy_density=-0.15, window=0.5).build(n, terms)
    b = magnetization_mpo(n)
    ref = filtered_average(
        dense_heisenberg(n, lam), dense_magnetization(n), fs.target_energy, fs.half_width, fs.num_applications
    )
    failures = 0
    for run in range(runs):
        spec = RmpsSpec(n, chi, master_seed=derive_seed(0, 8, run))
        res = estimate_thermal_expectation(h, b, fs, spec, plan.num_samples, 16, keep_records=False)
        failures += abs(res.mean - ref) > eps * abs(ref)
    frac = failures / runs
    elapsed = time.perf_counter() - t0
    ok = frac <= delta and elapsed < 600
    report(
        "chebyshev",
        ok,
        f"M={plan.num_samples}, reference {ref:.4f}, failure fraction {frac:.3f} (tol {delta}), {elapsed:.0f}s",
    )
    assert ok


def test_sampler_invariants(report):
    specs = [RmpsSpec(2, 2), RmpsSpec(5, 4), RmpsSpec(8, 8), RmpsSpec(12, 16), RmpsSpec(20, 2)]
    failures = 0
    worst = 0.0
    count = 0
    for spec in specs:
        for i in range(200):
            psi = sample_indexed(spec, i)
            err = max(abs(norm(psi) - 1), max(left_canonical_residuals(psi)))
            worst = max(worst, err)
            failures += err > 1e-10
            count += 1
    ok = failures == 0 and count == 1000
    report("sampler-invariants", ok, f"{count} states, {failures} failures, worst residual {worst:.1e}")
    assert ok
