from __future__ import annotations

import numpy as np
import pytest

from oracles import Z as Zr, dense_heisenberg, dense_ising, expm_hermitian, kron_all, site_op
from rmps_thermo.errors import InvalidArgumentError
from rmps_thermo.hamiltonians import (
    FilterSpec,
    TrotterSpec,
    apply_filter_power,
    filter_spec_for,
    heisenberg_mpo,
    heisenberg_terms,
    identity_mpo,
    imaginary_time_evolve,
    ising_mpo,
    ising_terms,
    magnetization_mpo,
    microcanonical_filter,
    mpo_square,
    terms_norm_bound,
    trotter_imaginary_step,
)
from rmps_thermo.mps import expectation_mpo, from_dense, mpo_to_dense, product_state, to_dense
from rmps_thermo.sampler import RmpsSpec, sample_indexed


def test_ising_two_sites():
    h = mpo_to_dense(ising_mpo(2, 0.0))
    assert np.allclose(np.sort(np.linalg.eigvalsh(h)), [-1, -1, 1, 1])
    assert ising_mpo(5, 1.0).max_bond == 3


@pytest.mark.parametrize("n,lam,expected", [(2, 1.0, 12.0), (10, 1.5, 32256.0)])
def test_ising_trace_h2(n, lam, expected):
    h = mpo_to_dense(ising_mpo(n, lam))
    assert np.trace(h @ h).real == pytest.approx(expected)


@pytest.mark.parametrize("n", [2, 3, 6])
def test_ising_matches_pauli_build(n):
    assert np.allclose(mpo_to_dense(ising_mpo(n, 1.5)), dense_ising(n, 1.5))


def test_heisenberg_two_site_spectrum():
    h = mpo_to_dense(heisenberg_mpo(2, 0.0))
    assert np.allclose(np.sort(np.linalg.eigvalsh(h)), [-0.25, -0.25, -0.25, 0.75])
    assert heisenberg_mpo(6, 0.1).max_bond == 5


@pytest.mark.parametrize("n", [2, 4, 6])
def test_heisenberg_matches_pauli_build(n):
    assert np.allclose(mpo_to_dense(heisenberg_mpo(n, 0.4)), dense_heisenberg(n, 0.4))


@pytest.mark.parametrize("n", [3, 5, 6])
def test_heisenberg_conserves_magnetization(n):
    h = mpo_to_dense(heisenberg_mpo(n, 0.0))
    mz = sum(site_op(Zr, i, n) for i in range(n))
    assert np.abs(h @ mz - mz @ h).max() < 1e-12


def test_heisenberg_all_up_energy():
    val = expectation_mpo(product_state([0, 0, 0, 0]), heisenberg_mpo(4, 0.3))
    assert val.real == pytest.approx(-3 * 0.25 + 4 * 0.3)


def test_magnetization_mpo():
    assert expectation_mpo(product_state([0, 1, 0, 0]), magnetization_mpo(4)).real == pytest.approx(0.5)


@pytest.mark.parametrize("terms_fn,mpo_fn", [(ising_terms, ising_mpo), (heisenberg_terms, heisenberg_mpo)])
def test_bond_terms_sum_to_hamiltonian(terms_fn, mpo_fn):
    n = 5
    terms = terms_fn(n, 0.7)
    total = sum(
        kron_all([np.eye(2**i), t, np.eye(2 ** (n - i - 2))]) for i, t in enumerate(terms)
    )
    assert np.allclose(total, mpo_to_dense(mpo_fn(n, 0.7)))


def test_hermiticity():
    for op in (ising_mpo(6, 1.5), heisenberg_mpo(6, 0.5)):
        m = mpo_to_dense(op)
        assert np.abs(m - m.conj().T).max() < 1e-10


def test_mpo_square():
    h = ising_mpo(6, 1.5)
    sq = mpo_square(h)
    assert sq.max_bond <= 9
    dh = mpo_to_dense(h)
    assert np.abs(mpo_to_dense(sq) - dh @ dh).max() < 1e-9
    ident = mpo_square(identity_mpo(4))
    assert np.allclose(mpo_to_dense(ident), np.eye(16))


def test_filter_spec_validation():
    with pytest.raises(InvalidArgumentError):
        FilterSpec(0.0, 1.0, 3)
    with pytest.raises(InvalidArgumentError):
        FilterSpec(0.0, 0.0, 2)
    fs = FilterSpec(0.0, 1.0, 10)
    assert fs.half_k == 5


def test_filter_spec_for_policy():
    terms = ising_terms(6, 1.5)
    fs = filter_spec_for(terms, -1.0, 2.0)
    r = 1.05 * (terms_norm_bound(terms) + 1.0)
    assert fs.half_width == pytest.approx(r)
    assert fs.num_applications % 2 == 0
    assert fs.half_width / np.sqrt(fs.num_applications) <= 2.0


def test_microcanonical_filter_eigenvalues():
    n = 6
    h = dense_ising(n, 1.5)
    energies, vecs = np.linalg.eigh(h)
    fs = FilterSpec(0.3, 5.0, 2)
    g = mpo_to_dense(microcanonical_filter(ising_mpo(n, 1.5), fs))
    expected = 1 - (energies - 0.3) ** 2 / 25.0
    got = np.einsum("ij,ik,kj->j", vecs.conj(), g, vecs).real
    assert np.abs(got - expected).max() < 1e-9
    # an eigenvalue placed exactly at E gives 1
    fs0 = FilterSpec(energies[3], 5.0, 2)
    g0 = mpo_to_dense(microcanonical_filter(ising_mpo(n, 1.5), fs0))
    assert vecs[:, 3].conj() @ g0 @ vecs[:, 3] == pytest.approx(1.0, abs=1e-10)


def test_filter_spectrum_in_range():
    n = 6
    h = dense_ising(n, 1.5)
    r = 2 * np.abs(np.linalg.eigvalsh(h)).max()
    g = mpo_to_dense(microcanonical_filter(ising_mpo(n, 1.5), FilterSpec(0.0, r, 2)))
    w = np.linalg.eigvalsh(g)
    assert w.min() >= 0.75 - 1e-10 and w.max() <= 1 + 1e-10


def test_filter_power_identity():
    psi = sample_indexed(RmpsSpec(5, 4), 0)
    out = apply_filter_power(identity_mpo(5), psi, 6, 16)
    assert out.log_norm_offset == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(to_dense(out), to_dense(psi))


def test_filter_power_concentrates_energy():
    n = 6
    h = dense_ising(n, 1.5)
    hmpo = ising_mpo(n, 1.5)
    fs = filter_spec_for(ising_terms(n, 1.5), -1.0, 1.0)
    g = microcanonical_filter(hmpo, fs)
    psi = sample_indexed(RmpsSpec(n, 4, master_seed=2), 0)
    variances = []
    energies = []
    steps = []

    def record(step, state):
        v = to_dense(state)
        e = np.vdot(v, h @ v).real
        energies.append(e)
        variances.append(np.vdot(v, h @ h @ v).real - e**2)
        steps.append(step)

    out = apply_filter_power(g, psi, 20, 64, on_step=record)
    assert steps == list(range(20))
    assert all(a > b for a, b in zip(variances, variances[1:]))
    assert abs(energies[-1] - fs.target_energy) < fs.half_width / np.sqrt(fs.num_applications) + np.sqrt(variances[-1])
    # log-norm accounting: offset equals ln ||G^20 psi|| computed densely
    gd = mpo_to_dense(g)
    v = np.linalg.matrix_power(gd, 20) @ to_dense(psi)
    assert out.log_norm_offset == pytest.approx(np.log(np.linalg.norm(v)), abs=1e-9)


def test_trotter_zero_tau_is_identity():
    psi = sample_indexed(RmpsSpec(6, 4), 1)
    out = trotter_imaginary_step(ising_terms(6, 1.0), psi, 0.0, 32)
    assert abs(np.vdot(to_dense(out), to_dense(psi))) == pytest.approx(1.0, abs=1e-10)


def test_single_gate_on_product_state():
    terms = heisenberg_terms(2, 0.4)
    psi = product_state([0, 1])
    tau = 0.3
    out = trotter_imaginary_step(terms, psi, tau, 4)
    v = expm_hermitian(terms[0], -tau) @ to_dense(psi)
    assert np.allclose(to_dense(out), v / np.linalg.norm(v), atol=1e-10)


def trotter_error(k, beta=1.0, n=6):
    h = dense_ising(n, 1.0)
    psi = sample_indexed(RmpsSpec(n, 4, master_seed=9), 0)
    v0 = to_dense(psi)
    exact = expm_hermitian(h, -beta / 2) @ v0
    exact /= np.linalg.norm(exact)
    out = imaginary_time_evolve(ising_terms(n, 1.0), psi, TrotterSpec(beta, k), 64)
    return np.linalg.norm(to_dense(out) - exact)


def test_trotter_first_order_convergence():
    ks = [16, 32, 64, 128]
    errs = [trotter_error(k) for k in ks]
    slope = np.polyfit(np.log(ks), np.log(errs), 1)[0]
    assert -1.2 <= slope <= -0.8
    assert errs[2] <= 1e-2


def test_trotter_spec_validation():
    with pytest.raises(InvalidArgumentError):
        TrotterSpec(-1.0, 4)
    with pytest.raises(InvalidArgumentError):
        TrotterSpec(1.0, 0)
    assert TrotterSpec(1.0, 4).tau == pytest.approx(0.125)


def test_filter_monotonic_variance_dense_start():
    n = 5
    h = dense_heisenberg(n, 0.2)
    hmpo = heisenberg_mpo(n, 0.2)
    fs = FilterSpec(-0.5, 4.0, 2)
    g = microcanonical_filter(hmpo, fs)
    v = np.ones(2**n) / np.sqrt(2**n)
    psi = from_dense(v, n)
    prev = np.inf
    for _ in range(8):
        psi = apply_filter_power(g, psi, 1, 32)
        d = to_dense(psi)
        e = np.vdot(d, h @ d).real
        var = np.vdot(d, h @ h @ d).real - e**2
        assert var <= prev + 1e-12
        prev = var
