"""Monte Carlo estimators over random-MPS samples.

Thermal expectations use the ratio statistic ``z_i = <phi_i|B|phi_i> / <phi_i|phi_i>``
with ``phi_i = A psi_i`` and ``A`` either ``G^(k/2)`` (energy filter) or
``exp(-beta H / 2)``. Traces use ``Tr(O) ~ D * mean_i <psi_i|O|psi_i>``.

Samples are independent and keyed by index, so the work can be split over
processes; results are always reduced in index order, hence identical for
any worker count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericalFailureError
from .hamiltonians import (
    FilterSpec,
    TrotterSpec,
    apply_filter_power,
    imaginary_time_evolve,
    microcanonical_filter,
)
from .mps import MpoOperator, MpsState, expectation_mpo, inner_product
from .sampler import RmpsSpec, derive_seed, sample_rmps, sample_seed_for

# samples with y_i / max_j y_j below this are flagged
DEGENERATE_Y = 1e-14


@dataclass(frozen=True)
class EstimatorPlan:
    """Sample count from the Chebyshev bound ``M = ceil(C / (delta eps^2 chi))``."""

    epsilon: float
    delta: float
    chi: int
    num_samples: int
    constant: float = 1.0


def plan_samples(epsilon: float, delta: float, chi: int, constant: float = 1.0) -> EstimatorPlan:
    """Number of samples for relative error ``epsilon`` with failure probability ``delta``.

    ``constant`` is the unknown prefactor of the variance bound; 1 by default.
    The bound is loose, so re-planning from a measured relative variance
    (:func:`replan_from_variance`) usually needs far fewer samples.
    """
    if not 0 < epsilon < 1:
        raise InvalidArgumentError(f"epsilon must be in (0, 1), got {epsilon}")
    if not 0 < delta < 1:
        raise InvalidArgumentError(f"delta must be in (0, 1), got {delta}")
    if chi < 2:
        raise InvalidArgumentError(f"chi must be >= 2, got {chi}")
    if not constant > 0:
        raise InvalidArgumentError(f"constant must be positive, got {constant}")
    raw = constant / (delta * epsilon**2 * chi)
    # absorb rounding noise such as 62.50000000000001
    m = max(1, math.ceil(raw * (1 - 1e-12)))
    return EstimatorPlan(epsilon, delta, chi, m, constant)


def replan_from_variance(epsilon: float, delta: float, relative_variance: float) -> int:
    """Chebyshev sample count ``ceil(rv / (delta eps^2))`` from a measured ``Var[z]/E[z]^2``."""
    if relative_variance < 0:
        raise InvalidArgumentError("relative_variance must be non-negative")
    return max(1, math.ceil(relative_variance / (delta * epsilon**2)))


@dataclass(frozen=True)
class SampleRecord:
    """One Monte Carlo sample.

    ``x = <psi|A B A|psi>`` and ``y = <psi|A^2|psi>`` are reconstituted from
    the unit-norm filtered state and ``log_norm = ln ||A psi||``; they may
    underflow to 0 for long filters, while ``z`` and ``log_norm`` never do.
    """

    index: int
    x: float
    y: float
    z: float
    log_norm: float
    discarded_weight: float
    seed: int
    energy: float = float("nan")


@dataclass(frozen=True)
class EstimateResult:
    """Sample mean with jackknife standard error.

    For traces the value is ``mantissa * 2**log2_scale``; ``mean`` holds that
    product when it fits in a double and ``inf`` otherwise.
    """

    mean: float
    standard_error: float
    num_samples: int
    records: tuple[SampleRecord, ...] = ()
    degenerate: tuple[int, ...] = ()
    log2_scale: float = 0.0
    mantissa: float = float("nan")
    mantissa_error: float = float("nan")

    def summary(self) -> dict:
        return {
            "mean": self.mean,
            "standard_error": self.standard_error,
            "num_samples": self.num_samples,
            "degenerate": list(self.degenerate),
            "log2_scale": self.log2_scale,
            "mantissa": self.mantissa,
            "mantissa_error": self.mantissa_error,
        }


def jackknife_standard_error(values: Sequence[float], statistic: Callable[[np.ndarray], float] | None = None) -> float:
    """Leave-one-out jackknife standard error of ``statistic`` (default: the mean)."""
    v = np.asarray(values, dtype=float)
    n = v.shape[0]
    if n < 2:
        return 0.0
    if statistic is None:
        loo = (v.sum() - v) / (n - 1)
    else:
        loo = np.array([statistic(np.delete(v, i)) for i in range(n)])
    return float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


def _scaled(value: float, log2_scale: float) -> float:
    try:
        return math.ldexp(value, int(log2_scale)) if float(log2_scale).is_integer() else value * 2.0**log2_scale
    except OverflowError:
        return math.copysign(math.inf, value)


def _run_indexed(fn: Callable[[int], object], indices: Sequence[int], workers: int) -> list:
    """Map ``fn`` over ``indices`` and return the results in index order."""
    if workers < 1:
        raise InvalidArgumentError(f"workers must be >= 1, got {workers}")
    if workers == 1 or len(indices) < 2:
        return [fn(i) for i in indices]
    chunk = max(1, len(indices) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, indices, chunksize=chunk))


def default_workers() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)


# --------------------------------------------------------------------------
# thermal expectations
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class _ThermalTask:
    spec: RmpsSpec
    filter: FilterSpec | TrotterSpec
    g: MpoOperator | None
    terms: tuple[np.ndarray, ...] | None
    h: MpoOperator
    b: MpoOperator
    chi_max: int
    cutoff: float
    method: str

    def __call__(self, index: int) -> SampleRecord:
        rng = sample_seed_for(index, self.spec.master_seed)
        psi = sample_rmps(self.spec, rng)
        if isinstance(self.filter, FilterSpec):
            phi = apply_filter_power(
                self.g, psi, self.filter.half_k, self.chi_max, self.cutoff, method=self.method
            )
        else:
            phi = imaginary_time_evolve(
                self.terms, psi, self.filter, self.chi_max, self.cutoff, method=self.method
            )
        return _record(index, self.spec.master_seed, phi, self.b, self.h)


def _record(index: int, master_seed: int, phi: MpsState, b: MpoOperator, h: MpoOperator | None) -> SampleRecord:
    nn = inner_product(phi, phi).real
    num = expectation_mpo(phi, b)
    if not (np.isfinite(nn) and nn > 0 and np.isfinite(num)):
        raise NumericalFailureError(f"sample {index}: non-finite or zero filtered norm")
    z = num.real / nn
    log_norm = phi.log_norm_offset + 0.5 * math.log(nn)
    y = math.exp(2 * log_norm) if 2 * log_norm > -745 else 0.0
    energy = expectation_mpo(phi, h).real / nn if h is not None else float("nan")
    return SampleRecord(
        index=index,
        x=z * y,
        y=y,
        z=float(z),
        log_norm=float(log_norm),
        discarded_weight=float(phi.discarded_weight),
        seed=derive_seed(master_seed, index),
        energy=float(energy),
    )


def degenerate_indices(records: Sequence[SampleRecord], threshold: float = DEGENERATE_Y) -> tuple[int, ...]:
    """Indices whose ``y`` is below ``threshold`` relative to the largest ``y``.

    Compared in log space so that uniformly tiny ``y`` (long filters on long
    chains) are not all flagged.
    """
    if not records:
        return ()
    logs = np.array([2 * r.log_norm for r in records])
    cut = logs.max() + math.log(threshold)
    return tuple(r.index for r, lg in zip(records, logs) if lg < cut)


def estimate_thermal_expectation(
    h: MpoOperator,
    b: MpoOperator,
    filt: FilterSpec | TrotterSpec,
    spec: RmpsSpec,
    num_samples: int,
    chi_max: int,
    cutoff: float = 0.0,
    *,
    bond_terms: Sequence[np.ndarray] | None = None,
    g: MpoOperator | None = None,
    method: str = "svd",
    workers: int = 1,
    first_index: int = 0,
    keep_records: bool = True,
) -> EstimateResult:
    """Estimate ``Tr(A B A) / Tr(A^2)`` by the mean of ``z_i``.

    Args:
        h: Hamiltonian MPO; also used to record the energy of each filtered state.
        b: Observable MPO (Hermitian).
        filt: Energy filter or imaginary-time specification.
        spec: Random-MPS ensemble; ``spec.master_seed`` seeds the samples.
        num_samples: Number of samples ``M``.
        chi_max: Bond cap for the filtered states.
        cutoff: Relative discarded-weight cutoff per truncation.
        bond_terms: Two-site terms of ``h``; required with a :class:`TrotterSpec`.
        g: Prebuilt filter MPO; built from ``h`` and ``filt`` when omitted.
        method: MPO application scheme, ``"svd"`` or ``"zipup"``.
        workers: Processes used for the sample loop.
        first_index: Index of the first sample, for splitting a run in parts.
        keep_records: Keep per-sample records in the result.
    """
    if num_samples < 1:
        raise InvalidArgumentError(f"num_samples must be positive, got {num_samples}")
    if chi_max < 1:
        raise InvalidArgumentError(f"chi_max must be positive, got {chi_max}")
    if h.num_sites != spec.num_sites or b.num_sites != spec.num_sites:
        raise InvalidArgumentError("operator sizes do not match the spec")
    terms = None
    if isinstance(filt, FilterSpec):
        if g is None:
            g = microcanonical_filter(h, filt)
    elif isinstance(filt, TrotterSpec):
        if bond_terms is None:
            raise InvalidArgumentError("bond_terms are required for imaginary-time filters")
        terms = tuple(bond_terms)
        if len(terms) != spec.num_sites - 1:
            raise InvalidArgumentError("need one bond term per nearest-neighbour pair")
    else:
        raise InvalidArgumentError(f"unsupported filter {filt!r}")
    task = _ThermalTask(spec, filt, g, terms, h, b, chi_max, cutoff, method)
    records = _run_indexed(task, range(first_index, first_index + num_samples), workers)
    return _summarize_ratio(records, keep_records)


def _summarize_ratio(records: Sequence[SampleRecord], keep_records: bool) -> EstimateResult:
    z = np.array([r.z for r in records])
    return EstimateResult(
        mean=float(z.mean()),
        standard_error=jackknife_standard_error(z),
        num_samples=len(records),
        records=tuple(records) if keep_records else (),
        degenerate=degenerate_indices(records),
    )


# --------------------------------------------------------------------------
# traces
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class _TraceTask:
    spec: RmpsSpec
    op: MpoOperator

    def __call__(self, index: int) -> SampleRecord:
        psi = sample_rmps(self.spec, sample_seed_for(index, self.spec.master_seed))
        x = expectation_mpo(psi, self.op)
        if not np.isfinite(x):
            raise NumericalFailureError(f"sample {index}: non-finite expectation value")
        return SampleRecord(
            index=index,
            x=float(x.real),
            y=1.0,
            z=float(x.real),
            log_norm=0.0,
            discarded_weight=0.0,
            seed=derive_seed(self.spec.master_seed, index),
        )


def trace_samples(op: MpoOperator, spec: RmpsSpec, num_samples: int, workers: int = 1, first_index: int = 0) -> list[SampleRecord]:
    """Records with ``x_i = <psi_i|op|psi_i>`` for consecutive sample indices."""
    if op.num_sites != spec.num_sites:
        raise InvalidArgumentError("operator size does not match the spec")
    return _run_indexed(_TraceTask(spec, op), range(first_index, first_index + num_samples), workers)


def estimate_trace(
    op: MpoOperator,
    spec: RmpsSpec,
    num_samples: int,
    *,
    workers: int = 1,
    keep_records: bool = True,
) -> EstimateResult:
    """``Tr(op) ~ D * mean_i <psi_i|op|psi_i>`` with ``D = d**N`` kept as ``log2_scale``."""
    if num_samples < 1:
        raise InvalidArgumentError(f"num_samples must be positive, got {num_samples}")
    records = trace_samples(op, spec, num_samples, workers)
    x = np.array([r.x for r in records])
    mantissa = float(x.mean())
    err = jackknife_standard_error(x)
    log2_scale = spec.num_sites * math.log2(spec.phys_dim)
    return EstimateResult(
        mean=_scaled(mantissa, log2_scale),
        standard_error=_scaled(err, log2_scale),
        num_samples=num_samples,
        records=tuple(records) if keep_records else (),
        log2_scale=log2_scale,
        mantissa=mantissa,
        mantissa_error=err,
    )


# --------------------------------------------------------------------------
# variance studies
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ScanRow:
    chi: int
    num_samples: int
    relative_variance: float
    mean: float
    run_means: tuple[float, ...] = field(repr=False, default=())


def relative_variance_scan(
    op: MpoOperator,
    spec: RmpsSpec,
    chi_list: Sequence[int],
    m_list: Sequence[int],
    runs: int,
    *,
    workers: int = 1,
) -> list[ScanRow]:
    """Relative variance ``Var[xbar] / E[xbar]^2`` of the M-sample mean of ``<psi|op|psi>``.

    For each ``chi`` the same ``runs * max(m_list)`` samples are drawn once;
    run ``r`` at sample size ``M`` averages the first ``M`` samples of block
    ``r``. Sizes within a run are therefore nested, which keeps curves over
    ``M`` smooth and costs only the largest ``M``.
    """
    if runs < 2:
        raise InvalidArgumentError(f"runs must be >= 2, got {runs}")
    if not chi_list or not m_list:
        raise InvalidArgumentError("chi_list and m_list must be nonempty")
    if min(m_list) < 1:
        raise InvalidArgumentError("sample sizes must be positive")
    m_max = max(m_list)
    rows = []
    for chi in chi_list:
        sub = RmpsSpec(spec.num_sites, chi, spec.phys_dim, derive_seed(spec.master_seed, chi))
        records = trace_samples(op, sub, runs * m_max, workers)
        x = np.array([r.x for r in records]).reshape(runs, m_max)
        csum = np.cumsum(x, axis=1)
        for m in m_list:
            means = csum[:, m - 1] / m
            avg = float(means.mean())
            rv = float(means.var(ddof=1)) / avg**2
            rows.append(ScanRow(chi, m, rv, avg, tuple(float(v) for v in means)))
    return rows


@dataclass(frozen=True)
class VarianceDiagnostics:
    """Relative variances of the ratio estimator and its error-propagation estimate.

    ``propagated = rv_x + rv_y - 2 rcov_xy``. ``bound_ratio`` is ``rv_z * chi``,
    which stays bounded if the ``O(1/chi)`` variance bound holds.
    """

    num_samples: int
    rv_z: float
    rv_x: float
    rv_y: float
    rcov_xy: float
    propagated: float
    bound_ratio: float


def variance_diagnostics(records: Sequence[SampleRecord], chi: int | None = None) -> VarianceDiagnostics:
    """Per-sample relative variances of ``z``, ``x`` and ``y``.

    ``x`` and ``y`` are rescaled by a common factor from ``log_norm`` first,
    so relative quantities survive underflow of the raw values.
    """
    if len(records) < 2:
        raise InvalidArgumentError("need at least two records")
    z = np.array([r.z for r in records])
    logs = np.array([r.log_norm for r in records])
    y = np.exp(2 * (logs - logs.max()))
    x = z * y

    def rv(v: np.ndarray) -> float:
        m = v.mean()
        return float(v.var(ddof=1) / m**2) if m != 0 else 0.0

    cov = float(np.cov(x, y, ddof=1)[0, 1] / (x.mean() * y.mean())) if x.mean() != 0 else 0.0
    rv_x, rv_y = rv(x), rv(y)
    rv_z = rv(z)
    return VarianceDiagnostics(
        num_samples=len(records),
        rv_z=rv_z,
        rv_x=rv_x,
        rv_y=rv_y,
        rcov_xy=cov,
        propagated=rv_x + rv_y - 2 * cov,
        bound_ratio=rv_z * chi if chi is not None else float("nan"),
    )


# --------------------------------------------------------------------------
# dense references
# --------------------------------------------------------------------------


def dense_filtered_average(h: np.ndarray, b: np.ndarray, fs: FilterSpec) -> float:
    """``Tr(G^k B) / Tr(G^k)`` for dense ``h`` and ``b``."""
    energies, vecs = np.linalg.eigh(h)
    g = 1 - (energies - fs.target_energy) ** 2 / fs.half_width**2
    w = g ** fs.num_applications
    diag_b = np.einsum("ij,ik,kj->j", vecs.conj(), b, vecs).real
    return float(np.sum(w * diag_b) / np.sum(w))


def dense_canonical_average(h: np.ndarray, b: np.ndarray, beta: float) -> float:
    """``Tr(exp(-beta H) B) / Tr(exp(-beta H))`` for dense ``h`` and ``b``."""
    energies, vecs = np.linalg.eigh(h)
    w = np.exp(-beta * (energies - energies.min()))
    diag_b = np.einsum("ij,ik,kj->j", vecs.conj(), b, vecs).real
    return float(np.sum(w * diag_b) / np.sum(w))
