"""Spin-chain Hamiltonians, energy filters and imaginary-time Trotter steps as MPOs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgumentError
from .mps import (
    MpoOperator,
    MpsState,
    apply_mpo_compress,
    identity_mpo,
    mpo_add,
    mpo_compress,
    mpo_product,
    mpo_scale,
)

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)

# relative squared-singular-value cutoff for exact MPO arithmetic
MPO_CUTOFF = 1e-24
# r = R_SAFETY * (bound on ||H - E||)
R_SAFETY = 1.05


def nearest_neighbor_mpo(
    num_sites: int,
    onsite: np.ndarray | None,
    couplings: Sequence[tuple[np.ndarray, np.ndarray]] = (),
) -> MpoOperator:
    """MPO for ``sum_i onsite_i + sum_i sum_k A_k(i) B_k(i+1)``.

    Bond dimension is ``len(couplings) + 2``.
    """
    if num_sites < 1:
        raise InvalidArgumentError("need at least one site")
    d = 2
    w = len(couplings) + 2
    done = w - 1
    onsite = np.zeros((d, d), dtype=complex) if onsite is None else np.asarray(onsite, dtype=complex)
    bulk = np.zeros((w, d, d, w), dtype=complex)
    bulk[0, :, :, 0] = I2
    bulk[done, :, :, done] = I2
    bulk[0, :, :, done] = onsite
    for k, (a, b) in enumerate(couplings, start=1):
        bulk[0, :, :, k] = a
        bulk[k, :, :, done] = b
    if num_sites == 1:
        return MpoOperator((bulk[0:1, :, :, done : done + 1],))
    tensors = [bulk[0:1]] + [bulk] * (num_sites - 2) + [bulk[:, :, :, done : done + 1]]
    return MpoOperator(tuple(tensors))


def ising_mpo(num_sites: int, lam: float) -> MpoOperator:
    """``H = sum_{i<N} X_i X_{i+1} + lam * sum_i Z_i`` (bond dimension 3)."""
    if num_sites < 2:
        raise InvalidArgumentError(f"num_sites must be >= 2, got {num_sites}")
    return nearest_neighbor_mpo(num_sites, lam * Z, [(X, X)])


def heisenberg_mpo(num_sites: int, lam: float) -> MpoOperator:
    """``H = -1/4 sum_{i<N} (XX + YY + ZZ)_{i,i+1} + lam * sum_i Z_i`` (bond dimension 5)."""
    if num_sites < 2:
        raise InvalidArgumentError(f"num_sites must be >= 2, got {num_sites}")
    return nearest_neighbor_mpo(num_sites, lam * Z, [(p, -0.25 * p) for p in (X, Y, Z)])


def magnetization_mpo(num_sites: int) -> MpoOperator:
    """``(1/N) sum_i Z_i``."""
    return nearest_neighbor_mpo(num_sites, Z / num_sites)


def bond_terms(num_sites: int, coupling: np.ndarray, field: np.ndarray) -> list[np.ndarray]:
    """Split ``sum coupling_{i,i+1} + sum field_i`` into 4x4 bond terms.

    Interior fields are shared equally by the two bonds touching the site.
    """
    if num_sites < 2:
        raise InvalidArgumentError(f"num_sites must be >= 2, got {num_sites}")
    terms = []
    for i in range(num_sites - 1):
        wl = 1.0 if i == 0 else 0.5
        wr = 1.0 if i == num_sites - 2 else 0.5
        terms.append(coupling + wl * np.kron(field, I2) + wr * np.kron(I2, field))
    return terms


def ising_terms(num_sites: int, lam: float) -> list[np.ndarray]:
    return bond_terms(num_sites, np.kron(X, X), lam * Z)


def heisenberg_terms(num_sites: int, lam: float) -> list[np.ndarray]:
    coupling = -0.25 * sum(np.kron(p, p) for p in (X, Y, Z))
    return bond_terms(num_sites, coupling, lam * Z)


def terms_norm_bound(terms: Sequence[np.ndarray]) -> float:
    """Triangle-inequality bound ``sum ||h_b||`` on the Hamiltonian's operator norm."""
    return float(sum(np.linalg.norm(h, 2) for h in terms))


def build_model(model: str, num_sites: int, lam: float) -> tuple[MpoOperator, list[np.ndarray]]:
    """MPO and bond terms for ``model`` in {"ising", "heisenberg"}."""
    if model == "ising":
        return ising_mpo(num_sites, lam), ising_terms(num_sites, lam)
    if model == "heisenberg":
        return heisenberg_mpo(num_sites, lam), heisenberg_terms(num_sites, lam)
    raise InvalidArgumentError(f"unknown model {model!r}")


# --------------------------------------------------------------------------
# operator functions
# --------------------------------------------------------------------------


def shift_mpo(h: MpoOperator, energy: float) -> MpoOperator:
    """``h - energy * I``."""
    shifted = mpo_add(h, mpo_scale(identity_mpo(h.num_sites, h.phys_dim), -energy))
    return mpo_compress(shifted, cutoff=MPO_CUTOFF)


def mpo_square(h: MpoOperator, chi_w: int | None = None, cutoff: float = MPO_CUTOFF) -> MpoOperator:
    """Compressed MPO for ``h @ h``; bond at most ``min(w**2, chi_w)``."""
    return mpo_compress(mpo_product(h, h), chi_w, cutoff)


@dataclass(frozen=True)
class FilterSpec:
    """Microcanonical filter ``G = I - (H - E)^2 / r^2`` applied ``k`` times in total.

    The estimator uses ``A = G^(k/2)``, hence ``k`` must be even.
    """

    target_energy: float
    half_width: float
    num_applications: int

    def __post_init__(self) -> None:
        if not self.half_width > 0:
            raise InvalidArgumentError(f"half_width must be positive, got {self.half_width}")
        if self.num_applications < 2 or self.num_applications % 2:
            raise InvalidArgumentError(
                f"num_applications must be an even positive integer, got {self.num_applications}"
            )

    @property
    def half_k(self) -> int:
        return self.num_applications // 2


def filter_spec_for(
    terms: Sequence[np.ndarray],
    target_energy: float,
    window: float,
    half_width: float | None = None,
) -> FilterSpec:
    """Default filter: ``r`` from the term-norm bound, ``k`` with ``r/sqrt(k) ~ window``.

    ``window`` is the energy width to resolve (same units as ``H``).
    """
    if not window > 0:
        raise InvalidArgumentError(f"window must be positive, got {window}")
    r = half_width if half_width is not None else R_SAFETY * (terms_norm_bound(terms) + abs(target_energy))
    k = max(2, 2 * math.ceil((r / window) ** 2 / 2))
    return FilterSpec(target_energy, r, k)


def microcanonical_filter(
    h: MpoOperator,
    fs: FilterSpec,
    chi_w: int | None = None,
    cutoff: float = MPO_CUTOFF,
) -> MpoOperator:
    """Compressed MPO for ``G = I - (H - E)^2 / r^2``."""
    shifted = shift_mpo(h, fs.target_energy)
    sq = mpo_square(shifted, chi_w, cutoff)
    g = mpo_add(identity_mpo(h.num_sites, h.phys_dim), mpo_scale(sq, -1.0 / fs.half_width**2))
    return mpo_compress(g, chi_w, cutoff)


def apply_filter_power(
    g: MpoOperator,
    psi: MpsState,
    half_k: int,
    chi_max: int,
    cutoff: float = 0.0,
    on_step: Callable[[int, MpsState], None] | None = None,
    method: str = "svd",
) -> MpsState:
    """Apply ``g`` ``half_k`` times with renormalization after every step.

    The returned state has unit norm; ``log_norm_offset`` has accumulated
    ``sum ln ||g psi_step||``. ``on_step(step, state)`` sees every intermediate
    state, which is where per-step truncation diagnostics can be collected.
    """
    if half_k < 0:
        raise InvalidArgumentError(f"half_k must be non-negative, got {half_k}")
    for step in range(half_k):
        psi = apply_mpo_compress(g, psi, chi_max, cutoff, method=method)
        if on_step is not None:
            on_step(step, psi)
    return psi


# --------------------------------------------------------------------------
# canonical ensemble
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrotterSpec:
    """Canonical filter ``A = exp(-beta H / 2)`` built from ``num_steps`` Trotter steps.

    Each step applies ``exp(-tau h_b)`` on odd bonds then even bonds with
    ``tau = beta / (2 * num_steps)``. In terms of ``G = exp(-beta H / k)``
    this is ``k = 2 * num_steps``.
    """

    beta: float
    num_steps: int

    def __post_init__(self) -> None:
        if self.beta < 0:
            raise InvalidArgumentError(f"beta must be non-negative, got {self.beta}")
        if self.num_steps < 1:
            raise InvalidArgumentError(f"num_steps must be positive, got {self.num_steps}")

    @property
    def tau(self) -> float:
        return self.beta / (2 * self.num_steps)


def _expm_hermitian(h: np.ndarray, tau: float) -> np.ndarray:
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-tau * w)) @ v.conj().T


def trotter_layers(terms: Sequence[np.ndarray], tau: float) -> tuple[MpoOperator, MpoOperator]:
    """MPOs for the two gate layers: bonds (0,1),(2,3),... then (1,2),(3,4),...."""
    if tau < 0:
        raise InvalidArgumentError(f"tau must be non-negative, got {tau}")
    n = len(terms) + 1
    d = 2
    layers = []
    for parity in (0, 1):
        tensors: list[np.ndarray] = [I2.reshape(1, d, d, 1)] * n
        for b in range(parity, n - 1, 2):
            gate = _expm_hermitian(terms[b], tau).reshape(d, d, d, d)
            # (s1, s2, t1, t2) -> (s1 t1, s2 t2)
            m = gate.transpose(0, 2, 1, 3).reshape(d * d, d * d)
            u, s, vh = np.linalg.svd(m)
            keep = max(1, int(np.count_nonzero(s > 1e-14 * s[0])))
            root = np.sqrt(s[:keep])
            tensors[b] = (u[:, :keep] * root).reshape(1, d, d, keep)
            tensors[b + 1] = (root[:, None] * vh[:keep]).reshape(keep, d, d, 1)
        layers.append(MpoOperator(tuple(tensors)))
    return layers[0], layers[1]


def trotter_imaginary_step(
    terms: Sequence[np.ndarray],
    psi: MpsState,
    tau: float,
    chi_max: int,
    cutoff: float = 0.0,
    layers: tuple[MpoOperator, MpoOperator] | None = None,
    method: str = "svd",
) -> MpsState:
    """One first-order step ``prod_even exp(-tau h) prod_odd exp(-tau h) |psi>``, renormalized.

    Pass precomputed ``layers`` from :func:`trotter_layers` to avoid rebuilding
    the gates on every step.
    """
    odd, even = layers if layers is not None else trotter_layers(terms, tau)
    psi = apply_mpo_compress(odd, psi, chi_max, cutoff, method=method)
    return apply_mpo_compress(even, psi, chi_max, cutoff, method=method)


def imaginary_time_evolve(
    terms: Sequence[np.ndarray],
    psi: MpsState,
    ts: TrotterSpec,
    chi_max: int,
    cutoff: float = 0.0,
    method: str = "svd",
) -> MpsState:
    """``exp(-beta H / 2)|psi>`` (normalized) via ``ts.num_steps`` Trotter steps."""
    layers = trotter_layers(terms, ts.tau)
    for _ in range(ts.num_steps):
        psi = trotter_imaginary_step(terms, psi, ts.tau, chi_max, cutoff, layers=layers, method=method)
    return psi
