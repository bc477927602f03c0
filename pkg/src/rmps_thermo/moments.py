"""Exact and empirical first and second moments of the random-MPS ensemble.

Every second-moment operator here lives in the commutative algebra generated
by the per-site swaps ``F_j`` that exchange site ``j`` of the two copies. On a
joint eigenvector each ``F_j`` has eigenvalue ``f_j = +-1``, so such an
operator is fixed by one number per sign pattern ``f`` ("sector weights").
For the random-MPS ensemble the weight of a pattern depends only on its
running parities:

* zero unless the total parity ``prod_j f_j`` is +1;
* otherwise ``prod_{j=L}^{N-1} c(s_j) / (d^2 D(s_{N-1}))`` where
  ``s_j = f_0 f_1 ... f_{j-1}`` is the parity of the first ``j`` sites
  (0-based), ``c(+1) = alpha``, ``c(-1) = beta``, ``D(+1) = chi(chi+1)/2``,
  ``D(-1) = chi(chi-1)/2`` and ``L = log2(chi) + 1``.

This is the result of averaging the two-copy transfer channel site by site:
each bulk unitary maps the pair of bond states into its symmetric or
antisymmetric sector with weight alpha or beta, the ramp leaves one joint
projector on the first ``L`` sites, and the terminal site closes the chain.
Dense matrices are assembled from the weights only for small checks.

Two-copy ordering of dense matrices: copy-major, i.e. the index of
``|sigma>|nu>`` is ``sigma * D + nu`` (the ordering of ``np.kron(psi, psi)``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, ResourceLimitError
from .mps import MpoOperator
from .sampler import RmpsSpec, batch_to_dense, sample_rmps_batch

FIRST_MOMENT_LIMIT = 14
SECOND_MOMENT_LIMIT = 7


def alpha_beta(chi: int) -> tuple[Fraction, Fraction, int, int]:
    """Exact ``(alpha, beta, D_s, D_a)`` for bond dimension ``chi``.

    alpha and beta are the weights with which a bulk step sends the pair of
    bond states into the symmetric and antisymmetric sectors; ``D_s`` and
    ``D_a`` are the dimensions of those sectors on ``chi x chi``.
    """
    if chi < 1:
        raise InvalidArgumentError(f"chi must be >= 1, got {chi}")
    alpha = Fraction(chi + 1, 2 * (2 * chi + 1))
    beta = Fraction(chi - 1, 2 * (2 * chi - 1))
    return alpha, beta, chi * (chi + 1) // 2, chi * (chi - 1) // 2


# --------------------------------------------------------------------------
# first moment
# --------------------------------------------------------------------------


def first_moment_factors(spec: RmpsSpec) -> list[Fraction]:
    """Per-site averaging factors whose product is ``1/D``.

    Site ``j`` contributes ``chi_{j+1} / (d chi_j)``; the terminal site
    contributes ``1 / (d chi_{N-1})``.
    """
    bonds = spec.bond_profile
    d = spec.phys_dim
    factors = [Fraction(bonds[j + 1], d * bonds[j]) for j in range(spec.num_sites - 1)]
    factors.append(Fraction(1, d * bonds[spec.num_sites - 1]))
    return factors


def exact_first_moment(spec: RmpsSpec, max_sites: int = FIRST_MOMENT_LIMIT) -> np.ndarray:
    """``E[|psi><psi|] = I / D`` as a dense matrix."""
    if spec.num_sites > max_sites:
        raise ResourceLimitError(f"first moment limited to N <= {max_sites}, got {spec.num_sites}")
    scale = math.prod(first_moment_factors(spec))
    if scale != Fraction(1, spec.dimension):
        raise AssertionError("first-moment factors do not telescope to 1/D")
    return np.eye(spec.dimension) * float(scale)


# --------------------------------------------------------------------------
# second moment: sector weights
# --------------------------------------------------------------------------


def _sign_patterns(n: int) -> np.ndarray:
    """All patterns as a ``(2**n, n)`` array of +-1, site 0 most significant."""
    bits = (np.arange(2**n)[:, None] >> np.arange(n - 1, -1, -1)[None, :]) & 1
    return 1 - 2 * bits


def second_moment_sector_weights(spec: RmpsSpec) -> np.ndarray:
    """Eigenvalue of ``E[|psi><psi|^{x2}]`` on each sign pattern, shape ``(2,)*N``.

    Axis ``j`` index 0 means ``f_j = +1`` (symmetric on site ``j``).
    """
    n = spec.num_sites
    alpha, beta, ds, da = alpha_beta(spec.bond_dim)
    c = {1: float(alpha), -1: float(beta)}
    dims = {1: ds, -1: da}
    d2 = spec.phys_dim**2
    f = _sign_patterns(n)
    prefix = np.cumprod(f, axis=1)  # prefix[:, j] = f_0 ... f_j
    weights = np.ones(f.shape[0])
    for j in range(spec.ramp_length, n):
        s = prefix[:, j - 1]
        weights *= np.where(s > 0, c[1], c[-1])
    last = prefix[:, n - 2]
    with np.errstate(divide="ignore"):
        weights /= d2 * np.where(last > 0, dims[1], dims[-1]).astype(float)
    weights[prefix[:, n - 1] < 0] = 0.0
    weights[~np.isfinite(weights)] = 0.0
    return weights.reshape((2,) * n)


def haar_sector_weights(num_sites: int) -> np.ndarray:
    """Sector weights of ``(I + F) / (D (D + 1))``."""
    dim = 2**num_sites
    total = np.prod(_sign_patterns(num_sites), axis=1)
    return ((1 + total) / (dim * (dim + 1.0))).reshape((2,) * num_sites)


def sector_multiplicities(num_sites: int) -> np.ndarray:
    """Dimension of each joint eigenspace: 3 per symmetric site, 1 per antisymmetric."""
    f = _sign_patterns(num_sites)
    return np.prod(np.where(f > 0, 3, 1), axis=1).reshape((2,) * num_sites)


def sector_distance(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Operator-norm distance between two swap-algebra operators given by weights.

    Returns ``(max |a - b|, max |a - b| / max |b|)``; every pattern has a
    nonempty eigenspace, so these are the exact operator norms.
    """
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    dist = float(np.max(np.abs(a - b)))
    return dist, dist / float(np.max(np.abs(b)))


# --------------------------------------------------------------------------
# dense second moments
# --------------------------------------------------------------------------

_SWAP2 = np.eye(4)[[0, 2, 1, 3]]
_LOCAL_PROJECTORS = ((np.eye(4) + _SWAP2) / 2, (np.eye(4) - _SWAP2) / 2)


def _check_second_limit(num_sites: int, max_sites: int) -> None:
    if num_sites > max_sites:
        raise ResourceLimitError(
            f"dense second moment limited to N <= {max_sites}, got {num_sites}"
        )


def interleaved_to_copy_major(matrix: np.ndarray, num_sites: int) -> np.ndarray:
    """Reorder a two-copy operator from site-interleaved to copy-major indices.

    Interleaved order lists ``(sigma_1, nu_1, sigma_2, nu_2, ...)``; copy-major
    lists ``(sigma_1..sigma_N, nu_1..nu_N)``.
    """
    n = num_sites
    legs = matrix.reshape((2,) * (4 * n))
    order = [2 * j for j in range(n)] + [2 * j + 1 for j in range(n)]
    perm = order + [2 * n + p for p in order]
    dim = 4**n
    return legs.transpose(perm).reshape(dim, dim)


def dense_from_sector_weights(weights: np.ndarray) -> np.ndarray:
    """Dense copy-major matrix ``sum_f w(f) prod_j P_{f_j}``."""
    n = weights.ndim

    def build(w: np.ndarray) -> np.ndarray:
        if w.ndim == 0:
            return np.array([[float(w)]])
        sym, anti = build(w[0]), build(w[1])
        return np.kron(_LOCAL_PROJECTORS[0], sym) + np.kron(_LOCAL_PROJECTORS[1], anti)

    return interleaved_to_copy_major(build(weights), n)


def exact_second_moment(spec: RmpsSpec, max_sites: int = SECOND_MOMENT_LIMIT) -> np.ndarray:
    """Dense ``E[|psi><psi| (x) |psi><psi|]`` on ``H (x) H`` (copy-major)."""
    _check_second_limit(spec.num_sites, max_sites)
    return dense_from_sector_weights(second_moment_sector_weights(spec))


def swap_operator(dim: int) -> np.ndarray:
    """Two-copy swap ``F|a>|b> = |b>|a>`` on ``C^dim (x) C^dim``."""
    idx = np.arange(dim * dim)
    a, b = divmod(idx, dim)
    swap = np.zeros((dim * dim, dim * dim))
    swap[b * dim + a, idx] = 1.0
    return swap


def haar_second_moment(dim: int, max_dim: int = 2**SECOND_MOMENT_LIMIT) -> np.ndarray:
    """``(I + F) / (D (D + 1))``, the second moment of Haar-random states."""
    if dim < 1:
        raise InvalidArgumentError(f"dim must be >= 1, got {dim}")
    if dim > max_dim:
        raise ResourceLimitError(f"dense Haar moment limited to D <= {max_dim}")
    return (np.eye(dim * dim) + swap_operator(dim)) / (dim * (dim + 1.0))


def moment_distance(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """``(||a - b||_inf, ||a - b||_inf / ||b||_inf)`` in operator norm."""
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b

    def opnorm(m: np.ndarray) -> float:
        if np.allclose(m, m.conj().T, atol=1e-14):
            return float(np.max(np.abs(np.linalg.eigvalsh(m))))
        return float(np.linalg.norm(m, 2))

    dist = opnorm(diff)
    return dist, dist / opnorm(b)


# --------------------------------------------------------------------------
# empirical moments
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EmpiricalMoment:
    """Sample mean of ``|psi><psi|`` (order 1) or its two-copy version (order 2).

    ``standard_error`` is entrywise, computed separately for real and
    imaginary parts and combined as ``sqrt(se_re**2 + se_im**2)``.
    """

    order: int
    num_samples: int
    mean: np.ndarray
    standard_error: np.ndarray

    def z_scores(self, exact: np.ndarray, floor: float = 1e-15) -> np.ndarray:
        """``|mean - exact| / se`` with the error floored to skip exactly-zero entries."""
        return np.abs(self.mean - exact) / np.maximum(self.standard_error, floor)


def empirical_moment(
    spec: RmpsSpec,
    order: int,
    num_samples: int,
    rng: np.random.Generator,
    batch_size: int = 4096,
) -> EmpiricalMoment:
    """Monte Carlo estimate of the first or second moment with entrywise errors."""
    if order not in (1, 2):
        raise InvalidArgumentError(f"order must be 1 or 2, got {order}")
    if num_samples < 1:
        raise InvalidArgumentError(f"num_samples must be positive, got {num_samples}")
    if order == 1 and spec.num_sites > FIRST_MOMENT_LIMIT:
        raise ResourceLimitError(f"first moment limited to N <= {FIRST_MOMENT_LIMIT}")
    if order == 2:
        _check_second_limit(spec.num_sites, SECOND_MOMENT_LIMIT)
    dim = spec.dimension ** order
    total = np.zeros((dim, dim), dtype=complex)
    sq_re = np.zeros((dim, dim))
    sq_im = np.zeros((dim, dim))
    done = 0
    while done < num_samples:
        size = min(batch_size, num_samples - done)
        vecs = batch_to_dense(sample_rmps_batch(spec, size, rng))
        if order == 2:
            vecs = np.einsum("ni,nj->nij", vecs, vecs).reshape(size, -1)
        # sums of Re/Im(v_i conj(v_j)) and their squares via matrix products
        a, b = vecs.real, vecs.imag
        aa, bb, ab = a * a, b * b, a * b
        total += vecs.T @ vecs.conj()
        cross = ab.T @ ab
        sq_re += aa.T @ aa + bb.T @ bb + 2 * cross
        sq_im += bb.T @ aa + aa.T @ bb - 2 * cross
        done += size
    mean = total / num_samples
    if num_samples > 1:
        var_re = np.clip(sq_re / num_samples - mean.real**2, 0.0, None) * num_samples / (num_samples - 1)
        var_im = np.clip(sq_im / num_samples - mean.imag**2, 0.0, None) * num_samples / (num_samples - 1)
        se = np.sqrt((var_re + var_im) / num_samples)
    else:
        se = np.full((dim, dim), np.inf)
    return EmpiricalMoment(order, num_samples, mean, se)


# --------------------------------------------------------------------------
# second-moment expectations of MPO pairs
# --------------------------------------------------------------------------


def _site_transfers(w1: np.ndarray, w2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Local transfers ``tr(P_f (W1 (x) W2))`` for f = +1, -1 over MPO bonds."""
    tr1 = np.einsum("assb->ab", w1)
    tr2 = np.einsum("cssd->cd", w2)
    prod = np.einsum("astb,ctsd->acbd", w1, w2)
    ind = np.einsum("ab,cd->acbd", tr1, tr2)
    l1, r1 = w1.shape[0], w1.shape[3]
    l2, r2 = w2.shape[0], w2.shape[3]
    shape = (l1 * l2, r1 * r2)
    return ((ind + prod) / 2).reshape(shape), ((ind - prod) / 2).reshape(shape)


def second_moment_expectation(spec: RmpsSpec, op1: MpoOperator, op2: MpoOperator | None = None) -> complex:
    """``E[<psi|op1|psi> <psi|op2|psi>]`` exactly, without dense matrices.

    Contracts the sector-weight structure with the two MPOs site by site,
    carrying the running parity as a two-state label. Cost is linear in N.
    """
    op2 = op1 if op2 is None else op2
    n = spec.num_sites
    if op1.num_sites != n or op2.num_sites != n:
        raise InvalidArgumentError("operator size does not match the spec")
    alpha, beta, ds, da = alpha_beta(spec.bond_dim)
    c = {1: float(alpha), -1: float(beta)}
    dims = {1: ds, -1: da}
    d2 = spec.phys_dim**2
    env = {1: np.ones((1,), dtype=complex), -1: np.zeros((1,), dtype=complex)}
    for j, (w1, w2) in enumerate(zip(op1.tensors, op2.tensors)):
        if j >= spec.ramp_length:
            env = {s: env[s] * c[s] for s in env}
        if j == n - 1:
            env = {s: (env[s] / (d2 * dims[s]) if dims[s] else env[s] * 0) for s in env}
        t_plus, t_minus = _site_transfers(w1, w2)
        env = {
            1: env[1] @ t_plus + env[-1] @ t_minus,
            -1: env[1] @ t_minus + env[-1] @ t_plus,
        }
    return complex(env[1][0])


def haar_second_moment_expectation(op1: np.ndarray, op2: np.ndarray | None = None) -> complex:
    """``(Tr op1 Tr op2 + Tr op1 op2) / (D (D + 1))`` for dense operators."""
    op2 = op1 if op2 is None else op2
    dim = op1.shape[0]
    return complex((np.trace(op1) * np.trace(op2) + np.trace(op1 @ op2)) / (dim * (dim + 1.0)))


def analytic_relative_variance(spec: RmpsSpec, op: MpoOperator, trace: float) -> float:
    """Single-sample ``Var[x] / E[x]^2`` for ``x = <psi|op|psi>``, given ``Tr op``.

    Uses ``E[x] = Tr(op) / D``. The M-sample mean has this divided by M.
    """
    second = second_moment_expectation(spec, op).real
    mean = trace / spec.dimension
    return second / mean**2 - 1.0


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TwoDesignRow:
    num_sites: int
    bond_dim: int
    distance: float
    relative_distance: float
    scaled_norm: float  # ||E[psi^{x2}]||_inf * D^2 / 2, tends to 1 for large chi


def two_design_row(spec: RmpsSpec) -> TwoDesignRow:
    rmps = second_moment_sector_weights(spec)
    haar = haar_sector_weights(spec.num_sites)
    dist, rel = sector_distance(rmps, haar)
    scaled = float(np.max(rmps)) * spec.dimension**2 / 2
    return TwoDesignRow(spec.num_sites, spec.bond_dim, dist, rel, scaled)


def two_design_report(num_sites_list: Sequence[int], chi_list: Sequence[int] | None = None) -> list[TwoDesignRow]:
    """Distance to the Haar second moment for every valid ``(N, chi)`` pair.

    ``chi_list`` defaults to all powers of two up to ``2**(N-1)``.
    """
    rows = []
    for n in num_sites_list:
        chis = chi_list if chi_list is not None else [2**p for p in range(1, n)]
        for chi in chis:
            if chi > 2 ** (n - 1):
                continue
            rows.append(two_design_row(RmpsSpec(n, chi)))
    return rows


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(lx, ly, 1)[0])

