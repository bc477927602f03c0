from __future__ import annotations

import math

import numpy as np
import pytest

from oracles import dense_heisenberg, dense_magnetization, filtered_average, ising_trace_h2
from rmps_thermo.errors import InvalidArgumentError
from rmps_thermo.estimator import (
    SampleRecord,
    dense_canonical_average,
    dense_filtered_average,
    degenerate_indices,
    estimate_thermal_expectation,
    estimate_trace,
    jackknife_standard_error,
    plan_samples,
    relative_variance_scan,
    replan_from_variance,
    variance_diagnostics,
)
from rmps_thermo.hamiltonians import (
    FilterSpec,
    TrotterSpec,
    build_model,
    filter_spec_for,
    heisenberg_mpo,
    ising_mpo,
    magnetization_mpo,
    mpo_square,
)
from rmps_thermo.moments import analytic_relative_variance
from rmps_thermo.mps import identity_mpo, mpo_scale, mpo_to_dense, mpo_trace
from rmps_thermo.sampler import RmpsSpec


def test_plan_samples_examples():
    assert plan_samples(0.1, 0.1, 16).num_samples == 63
    assert plan_samples(1 - 1e-9, 1 - 1e-9, 2**40).num_samples == 1
    assert plan_samples(0.05, 0.1, 16).num_samples == 4 * plan_samples(0.1, 0.1, 16).num_samples - 2
    assert plan_samples(0.1, 0.1, 8).num_samples == 125
    assert plan_samples(0.2, 0.2, 4).num_samples == 32


def test_plan_samples_epsilon_scaling_exact():
    a = plan_samples(0.2, 0.1, 5).num_samples
    b = plan_samples(0.1, 0.1, 5).num_samples
    assert (a, b) == (50, 200)


@pytest.mark.parametrize("args", [(0.0, 0.1, 4), (1.0, 0.1, 4), (0.1, 0.0, 4), (0.1, 1.5, 4), (0.1, 0.1, 1)])
def test_plan_samples_rejects(args):
    with pytest.raises(InvalidArgumentError):
        plan_samples(*args)


def test_replan_from_variance():
    assert replan_from_variance(0.1, 0.1, 0.05) == 50
    assert replan_from_variance(0.1, 0.1, 0.0) == 1


def test_jackknife_of_mean_equals_standard_error():
    v = np.random.default_rng(0).standard_normal(50)
    assert jackknife_standard_error(v) == pytest.approx(v.std(ddof=1) / np.sqrt(50))
    assert jackknife_standard_error(v, np.mean) == pytest.approx(v.std(ddof=1) / np.sqrt(50))
    assert jackknife_standard_error([3.0]) == 0.0


def small_heisenberg(n=6, lam=0.5):
    h, terms = build_model("heisenberg", n, lam)
    fs = filter_spec_for(terms, -0.15 * n, 0.5 * math.sqrt(n))
    return h, terms, fs


def test_identity_observable_gives_one():
    h, _, fs = small_heisenberg()
    res = estimate_thermal_expectation(h, identity_mpo(6), fs, RmpsSpec(6, 4), 5, 16)
    assert all(r.z == pytest.approx(1.0, abs=1e-12) for r in res.records)
    assert res.mean == pytest.approx(1.0, abs=1e-12)
    assert res.standard_error == pytest.approx(0.0, abs=1e-12)


def test_records_consistent():
    h, _, fs = small_heisenberg()
    res = estimate_thermal_expectation(h, magnetization_mpo(6), fs, RmpsSpec(6, 4, master_seed=3), 4, 16)
    assert [r.index for r in res.records] == [0, 1, 2, 3]
    for r in res.records:
        assert r.y > 0
        assert r.x == pytest.approx(r.z * r.y)
        assert r.y == pytest.approx(math.exp(2 * r.log_norm))
    assert res.degenerate == ()


def test_records_match_dense_filtered_vector():
    n = 6
    h, _, fs = small_heisenberg(n)
    spec = RmpsSpec(n, 4, master_seed=5)
    res = estimate_thermal_expectation(h, magnetization_mpo(n), fs, spec, 2, 64)
    from rmps_thermo.sampler import sample_indexed
    from rmps_thermo.mps import to_dense
    from rmps_thermo.hamiltonians import microcanonical_filter

    g = mpo_to_dense(microcanonical_filter(h, fs))
    b = dense_magnetization(n)
    for r in res.records:
        v = np.linalg.matrix_power(g, fs.half_k) @ to_dense(sample_indexed(spec, r.index))
        assert r.y == pytest.approx(np.vdot(v, v).real, rel=1e-9)
        assert r.x == pytest.approx(np.vdot(v, b @ v).real, rel=1e-8, abs=1e-14)


def test_scale_invariance_of_z():
    h, _, fs = small_heisenberg()
    spec = RmpsSpec(6, 4, master_seed=1)
    b = magnetization_mpo(6)
    a = estimate_thermal_expectation(h, b, fs, spec, 3, 16)
    c = estimate_thermal_expectation(h, mpo_scale(b, 4.0), fs, spec, 3, 16)
    assert [4 * r.z for r in a.records] == [r.z for r in c.records]
    assert 4 * a.mean == c.mean


def test_determinism_across_workers():
    h, _, fs = small_heisenberg()
    spec = RmpsSpec(6, 4, master_seed=9)
    b = magnetization_mpo(6)
    a = estimate_thermal_expectation(h, b, fs, spec, 6, 16, workers=1)
    c = estimate_thermal_expectation(h, b, fs, spec, 6, 16, workers=2)
    assert a == c


def test_split_runs_reuse_indices():
    h, _, fs = small_heisenberg()
    spec = RmpsSpec(6, 4, master_seed=9)
    b = magnetization_mpo(6)
    full = estimate_thermal_expectation(h, b, fs, spec, 4, 16)
    tail = estimate_thermal_expectation(h, b, fs, spec, 2, 16, first_index=2)
    assert full.records[2:] == tail.records


def test_trotter_filter_matches_canonical_average():
    n = 6
    h, terms = build_model("ising", n, 1.0)
    b = magnetization_mpo(n)
    res = estimate_thermal_expectation(
        h, b, TrotterSpec(1.0, 64), RmpsSpec(n, 8, master_seed=2), 150, 64, bond_terms=terms
    )
    ref = dense_canonical_average(mpo_to_dense(h), mpo_to_dense(b), 1.0)
    assert abs(res.mean - ref) < 3 * res.standard_error + 0.01


def test_trotter_requires_terms():
    h = ising_mpo(4, 1.0)
    with pytest.raises(InvalidArgumentError):
        estimate_thermal_expectation(h, h, TrotterSpec(1.0, 2), RmpsSpec(4, 2), 2, 8)


def test_estimator_matches_dense_filtered_average():
    n = 6
    h, _, fs = small_heisenberg(n, 0.5)
    b = magnetization_mpo(n)
    res = estimate_thermal_expectation(h, b, fs, RmpsSpec(n, 8, master_seed=4), 100, 64)
    ref = filtered_average(dense_heisenberg(n, 0.5), dense_magnetization(n), fs.target_energy, fs.half_width, fs.num_applications)
    assert ref == pytest.approx(dense_filtered_average(mpo_to_dense(h), mpo_to_dense(b), fs), abs=1e-10)
    assert abs(res.mean - ref) < 3 * res.standard_error


def test_degenerate_flagging_relative():
    recs = [
        SampleRecord(i, 0.0, 0.0, 0.1, lg, 0.0, 0)
        for i, lg in enumerate([-400.0, -401.0, -420.0])
    ]
    assert degenerate_indices(recs) == (2,)
    assert degenerate_indices(recs[:2]) == ()


def test_trace_identity_exact():
    spec = RmpsSpec(8, 4)
    res = estimate_trace(identity_mpo(8), spec, 7)
    assert res.mean == pytest.approx(256.0, rel=1e-12)
    assert res.standard_error == pytest.approx(0.0, abs=1e-10)
    assert res.log2_scale == 8


def test_trace_large_n_log_scale():
    n = 1100
    spec = RmpsSpec(n, 2)
    res = estimate_trace(identity_mpo(n), spec, 2)
    assert res.log2_scale == n
    assert res.mantissa == pytest.approx(1.0, abs=1e-10)
    assert math.isinf(res.mean)


def test_trace_dense_hermitian_operator():
    n = 6
    op = mpo_square(heisenberg_mpo(n, 0.3))
    res = estimate_trace(op, RmpsSpec(n, 4, master_seed=1), 2000)
    exact = np.trace(mpo_to_dense(op)).real
    assert abs(res.mean - exact) < 3 * res.standard_error


def test_trace_bias_shrinks():
    n = 6
    op = mpo_square(ising_mpo(n, 1.5))
    exact = ising_trace_h2(n, 1.5)
    errs = []
    for m in (100, 1600):
        dev = [abs(estimate_trace(op, RmpsSpec(n, 2, master_seed=s), m, keep_records=False).mean - exact) for s in range(6)]
        errs.append(np.mean(dev))
    assert errs[1] < errs[0] / 2


def test_relative_variance_scan_nested_and_analytic():
    n = 6
    op = mpo_square(ising_mpo(n, 1.5))
    rows = relative_variance_scan(op, RmpsSpec(n, 4, master_seed=3), [2, 4], [4, 8, 16], runs=40)
    assert [(r.chi, r.num_samples) for r in rows] == [(c, m) for c in (2, 4) for m in (4, 8, 16)]
    trace = mpo_trace(op).real
    for chi in (2, 4):
        single = analytic_relative_variance(RmpsSpec(n, chi), op, trace)
        for r in rows:
            if r.chi == chi:
                # 40 runs give the variance to about +-25%
                assert r.relative_variance == pytest.approx(single / r.num_samples, rel=0.6)


def test_relative_variance_scan_rejects_single_run():
    with pytest.raises(InvalidArgumentError):
        relative_variance_scan(identity_mpo(4), RmpsSpec(4, 2), [2], [2], runs=1)


def test_variance_diagnostics_constant_and_identity():
    recs = [SampleRecord(i, 2.0, 1.0, 2.0, 0.0, 0.0, 0) for i in range(5)]
    d = variance_diagnostics(recs)
    assert (d.rv_z, d.rv_x, d.rv_y, d.rcov_xy) == (0.0, 0.0, 0.0, 0.0)
    h, _, fs = small_heisenberg()
    res = estimate_thermal_expectation(h, identity_mpo(6), fs, RmpsSpec(6, 4), 6, 16)
    d = variance_diagnostics(res.records, chi=4)
    assert d.rv_z == pytest.approx(0.0, abs=1e-20)
    assert d.rv_y > 0
    # with z constant, x is proportional to y and the propagated variance vanishes
    assert d.propagated == pytest.approx(0.0, abs=1e-10)


def test_variance_decreases_with_chi():
    n = 6
    h, _, fs = small_heisenberg(n, 0.5)
    b = magnetization_mpo(n)
    rvs = []
    for chi in (2, 4, 8):
        res = estimate_thermal_expectation(h, b, fs, RmpsSpec(n, chi, master_seed=chi), 200, 64)
        rvs.append(variance_diagnostics(res.records, chi).rv_z)
    assert rvs[0] > rvs[1] > rvs[2]


def test_variance_diagnostics_needs_two():
    with pytest.raises(InvalidArgumentError):
        variance_diagnostics([SampleRecord(0, 1.0, 1.0, 1.0, 0.0, 0.0, 0)])


def test_dense_filtered_average_helper():
    n = 4
    h = dense_heisenberg(n, 0.2)
    b = dense_magnetization(n)
    fs = FilterSpec(-0.5, 3.0, 6)
    assert dense_filtered_average(h, b, fs) == pytest.approx(filtered_average(h, b, -0.5, 3.0, 6), abs=1e-12)
