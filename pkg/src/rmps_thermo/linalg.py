"""Dense linear-algebra kernels: Haar unitaries and truncated SVD."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

UNITARITY_TOL = 1e-12
ORTHONORMALITY_TOL = 1e-10


def haar_unitary(dim: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw a Haar-distributed unitary of shape ``(dim, dim)``.

    A complex Ginibre matrix is QR-decomposed and the columns of Q are
    multiplied by the phases of diag(R). Without that correction the output
    is unitary but not Haar distributed.

    Args:
        dim: Matrix dimension, at least 1.
        rng: Source of randomness; consumed in a fixed order.
        size: If given, return a stack of ``size`` independent unitaries with
            shape ``(size, dim, dim)``.
    """
    if dim < 1:
        raise InvalidArgumentError(f"dim must be >= 1, got {dim}")
    shape = (dim, dim) if size is None else (size, dim, dim)
    z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    phases = diag / np.abs(diag)
    return q * phases[..., None, :]


@dataclass(frozen=True)
class SvdResult:
    """Truncated SVD ``m ~ u @ diag(s) @ vh``.

    ``discarded_weight`` is the sum of the squared singular values that were
    dropped, i.e. the squared Frobenius reconstruction error.
    """

    u: np.ndarray
    s: np.ndarray
    vh: np.ndarray
    discarded_weight: float

    @property
    def rank(self) -> int:
        return self.s.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.vh


def truncated_svd(m: np.ndarray, max_rank: int, cutoff: float = 0.0) -> SvdResult:
    """SVD keeping at most ``max_rank`` values with ``s**2 >= cutoff * sum(s**2)``.

    At least one singular value is always kept for a nonzero matrix so the
    result never has an empty bond.
    """
    if max_rank < 1:
        raise InvalidArgumentError(f"max_rank must be >= 1, got {max_rank}")
    if cutoff < 0:
        raise InvalidArgumentError(f"cutoff must be non-negative, got {cutoff}")
    if m.ndim != 2 or m.size == 0:
        raise InvalidArgumentError(f"expected a nonempty matrix, got shape {m.shape}")
    try:
        u, s, vh = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError:
        # gesdd occasionally fails to converge; gesvd is slower but robust
        import scipy.linalg

        u, s, vh = scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd")
    weights = s**2
    total = float(weights.sum())
    keep = min(max_rank, s.shape[0])
    if cutoff > 0 and total > 0:
        keep = min(keep, int(np.count_nonzero(weights >= cutoff * total)))
    keep = max(keep, 1)
    discarded = float(weights[keep:].sum())
    return SvdResult(u[:, :keep], s[:keep], vh[:keep, :], discarded)


def gram_truncated_svd(m: np.ndarray, max_rank: int, cutoff: float = 0.0) -> SvdResult:
    """Truncated SVD through the eigendecomposition of the smaller Gram matrix.

    Several times faster than :func:`truncated_svd` for small wide or tall
    matrices. Singular values below ``1e-6 * s_max`` are lost to rounding and
    dropped, so use it only where such weights are truncated anyway.
    """
    if max_rank < 1:
        raise InvalidArgumentError(f"max_rank must be >= 1, got {max_rank}")
    wide = m.shape[0] <= m.shape[1]
    gram = m @ m.conj().T if wide else m.conj().T @ m
    w, vecs = np.linalg.eigh(gram)
    w = np.clip(w[::-1], 0.0, None)
    vecs = vecs[:, ::-1]
    total = float(w.sum())
    if total == 0:
        return truncated_svd(m, max_rank, cutoff)
    floor = max(cutoff * total, 1e-12 * w[0])
    keep = max(1, min(max_rank, int(np.count_nonzero(w > floor))))
    s = np.sqrt(w[:keep])
    discarded = float(w[keep:].sum())
    if wide:
        u = vecs[:, :keep]
        vh = (u.conj().T @ m) / s[:, None]
    else:
        vh = vecs[:, :keep].conj().T
        u = (m @ vecs[:, :keep]) / s[None, :]
    return SvdResult(u, s, vh, discarded)


def positive_qr(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR with the diagonal of R made real and non-negative."""
    q, r = np.linalg.qr(m)
    diag = np.diagonal(r)
    mags = np.abs(diag)
    phases = np.where(mags > 0, diag / np.where(mags > 0, mags, 1.0), 1.0)
    return q * phases[None, :], r * phases.conj()[:, None]
