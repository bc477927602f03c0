"""Normalized random MPS built from sub-blocks of independent Haar unitaries.

Bond profile for N sites and maximal bond chi (d = 2):

* ramp, sites 1..log2(chi): site j takes the row blocks of a 2^j x 2^j
  unitary, so its tensor is 2^(j-1) x 2^j per physical value;
* bulk, sites log2(chi)+1..N-1: the chi x chi block picked by sigma from the
  first chi columns of a 2chi x 2chi unitary;
* terminal, site N: the first d columns of a chi x chi unitary divided by
  sqrt(d).

Every site is left-canonical by construction and the state has unit norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .linalg import haar_unitary
from .mps import MpsState


@dataclass(frozen=True)
class RmpsSpec:
    """Parameters of the random-MPS ensemble."""

    num_sites: int
    bond_dim: int
    phys_dim: int = 2
    master_seed: int = 0

    def __post_init__(self) -> None:
        n, chi, d = self.num_sites, self.bond_dim, self.phys_dim
        if d != 2:
            raise InvalidArgumentError(f"only qubits (d=2) are supported, got d={d}")
        if n < 2:
            raise InvalidArgumentError(f"num_sites must be >= 2, got {n}")
        if chi < 2 or chi & (chi - 1):
            raise InvalidArgumentError(f"bond_dim must be a power of two >= 2, got {chi}")
        if chi > 2 ** (n - 1):
            raise InvalidArgumentError(f"bond_dim {chi} exceeds 2**(N-1) = {2 ** (n - 1)}")
        if not 0 <= self.master_seed < 2**64:
            raise InvalidArgumentError("master_seed must fit in an unsigned 64-bit integer")

    @property
    def ramp_sites(self) -> int:
        """Sites whose unitary grows until it reaches chi x chi."""
        return self.bond_dim.bit_length() - 1

    @property
    def ramp_length(self) -> int:
        """Size of the leading block that carries one joint projector in the second moment."""
        return self.ramp_sites + 1

    @property
    def dimension(self) -> int:
        return self.phys_dim**self.num_sites

    @property
    def bond_profile(self) -> tuple[int, ...]:
        chi = self.bond_dim
        bonds = [1]
        for j in range(1, self.num_sites):
            bonds.append(min(2**j, chi))
        bonds.append(1)
        return tuple(bonds)

    def unitary_dims(self) -> tuple[int, ...]:
        """Dimension of the Haar unitary drawn at each site."""
        chi = self.bond_dim
        dims = [2**j for j in range(1, self.ramp_sites + 1)]
        dims += [2 * chi] * (self.num_sites - 1 - self.ramp_sites)
        dims.append(chi)
        return tuple(dims)


@dataclass(frozen=True)
class TruncationPair:
    """0/1 selectors with ``A^sigma = left[sigma] @ U @ right``."""

    left: tuple[np.ndarray, ...]
    right: np.ndarray


def truncation_pair(spec: RmpsSpec, site: int) -> TruncationPair:
    """Selectors for a ramp or bulk site (0-based, ``site < N - 1``)."""
    n = spec.num_sites
    if not 0 <= site < n - 1:
        raise InvalidArgumentError("truncation pairs are defined for sites 0..N-2")
    bonds = spec.bond_profile
    rows, cols = bonds[site], bonds[site + 1]
    dim = spec.unitary_dims()[site]
    d = spec.phys_dim
    left = []
    for s in range(d):
        sel = np.zeros((rows, dim))
        sel[np.arange(rows), s * rows + np.arange(rows)] = 1.0
        left.append(sel)
    right = np.zeros((dim, cols))
    right[np.arange(cols), np.arange(cols)] = 1.0
    return TruncationPair(tuple(left), right)


def _site_tensor(spec: RmpsSpec, site: int, u: np.ndarray) -> np.ndarray:
    """Cut the site tensor(s) out of unitaries ``u`` (shape (..., dim, dim))."""
    bonds = spec.bond_profile
    d = spec.phys_dim
    left, right = bonds[site], bonds[site + 1]
    if site == spec.num_sites - 1:
        # columns sigma of the terminal unitary, rescaled by 1/sqrt(d)
        block = u[..., :, :d] / np.sqrt(d)
        return block[..., :, :, None]
    # rows (sigma * left ... (sigma + 1) * left), first `right` columns
    block = u[..., :, :right].reshape(u.shape[:-2] + (d, left, right))
    return np.swapaxes(block, -3, -2)


def sample_rmps(spec: RmpsSpec, rng: np.random.Generator) -> MpsState:
    """Draw one normalized, left-canonical random MPS."""
    tensors = tuple(
        _site_tensor(spec, j, haar_unitary(dim, rng)) for j, dim in enumerate(spec.unitary_dims())
    )
    return MpsState(tensors, canonical_form="left")


def sample_rmps_batch(spec: RmpsSpec, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Site tensors of ``size`` independent samples, stacked on axis 0.

    Faster than repeated :func:`sample_rmps` for small chains; the random
    stream is consumed differently, so the samples are not the same ones.
    """
    return [
        _site_tensor(spec, j, haar_unitary(dim, rng, size=size))
        for j, dim in enumerate(spec.unitary_dims())
    ]


def batch_to_dense(site_tensors: list[np.ndarray]) -> np.ndarray:
    """Dense amplitude vectors ``(size, d**N)`` from :func:`sample_rmps_batch` output."""
    v = site_tensors[0][:, 0]  # (size, d, right)
    for t in site_tensors[1:]:
        v = np.einsum("npa,nasb->npsb", v, t).reshape(v.shape[0], -1, t.shape[-1])
    return v[:, :, 0]


def sample_seed_for(index: int, master_seed: int) -> np.random.Generator:
    """Independent stream for sample ``index``; depends only on (master_seed, index)."""
    if index < 0:
        raise InvalidArgumentError(f"index must be non-negative, got {index}")
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))
    return np.random.Generator(np.random.PCG64(seq))


def derive_seed(master_seed: int, *keys: int) -> int:
    """Deterministic 64-bit seed for a sub-experiment labelled by ``keys``."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def sample_indexed(spec: RmpsSpec, index: int) -> MpsState:
    """The ``index``-th sample of the ensemble seeded by ``spec.master_seed``."""
    return sample_rmps(spec, sample_seed_for(index, spec.master_seed))
