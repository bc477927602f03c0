"""Open-boundary matrix product states and operators.

Index conventions:
    MPS site tensor  ``(left_bond, phys, right_bond)``
    MPO site tensor  ``(left_bond, phys_out, phys_in, right_bond)``

Dense vectors use sigma_1 as the most significant digit, and physical index
0 is spin up (Z = +1).

An :class:`MpsState` represents the vector ``exp(log_norm_offset) * C`` where
``C`` is the plain contraction of its tensors. Operations that rescale a state
keep ``C`` at unit norm and move the removed factor into the offset.
``inner_product`` and ``to_dense`` work on ``C`` only.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericalFailureError, ResourceLimitError
from .linalg import gram_truncated_svd, positive_qr, truncated_svd

DENSE_LIMIT = 14
CANONICAL_FORMS = ("none", "left", "right")
SERIAL_FORMAT = "rmps-thermo"
SERIAL_VERSION = 1


def _freeze(arrays: Sequence[np.ndarray], rank: int, what: str) -> tuple[np.ndarray, ...]:
    out = []
    for j, t in enumerate(arrays):
        a = np.array(t, dtype=np.complex128)
        if a.ndim != rank:
            raise InvalidArgumentError(f"{what} tensor {j} has rank {a.ndim}, expected {rank}")
        if not np.all(np.isfinite(a)):
            raise InvalidArgumentError(f"{what} tensor {j} has non-finite entries")
        a.setflags(write=False)
        out.append(a)
    if not out:
        raise InvalidArgumentError(f"{what} needs at least one site")
    if out[0].shape[0] != 1 or out[-1].shape[-1] != 1:
        raise InvalidArgumentError(f"{what} boundary bonds must be 1")
    for j in range(len(out) - 1):
        if out[j].shape[-1] != out[j + 1].shape[0]:
            raise InvalidArgumentError(
                f"{what} bond mismatch between sites {j} and {j + 1}: "
                f"{out[j].shape[-1]} != {out[j + 1].shape[0]}"
            )
    return tuple(out)


@dataclass(frozen=True)
class MpsState:
    """Immutable open-boundary MPS.

    ``discarded_weight`` accumulates the truncation weight of every
    compression that produced this state.
    """

    tensors: tuple[np.ndarray, ...]
    canonical_form: str = "none"
    log_norm_offset: float = 0.0
    discarded_weight: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "tensors", _freeze(self.tensors, 3, "MPS"))
        if self.canonical_form not in CANONICAL_FORMS:
            raise InvalidArgumentError(f"unknown canonical form {self.canonical_form!r}")
        dims = {t.shape[1] for t in self.tensors}
        if len(dims) != 1:
            raise InvalidArgumentError(f"mixed physical dimensions {sorted(dims)}")

    @property
    def num_sites(self) -> int:
        return len(self.tensors)

    @property
    def phys_dim(self) -> int:
        return self.tensors[0].shape[1]

    @property
    def bond_dims(self) -> tuple[int, ...]:
        """Bond profile including the two trivial boundary bonds."""
        return (1,) + tuple(t.shape[-1] for t in self.tensors)

    @property
    def max_bond(self) -> int:
        return max(self.bond_dims)


@dataclass(frozen=True)
class MpoOperator:
    """Immutable open-boundary MPO."""

    tensors: tuple[np.ndarray, ...]
    discarded_weight: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "tensors", _freeze(self.tensors, 4, "MPO"))
        dims = {t.shape[1] for t in self.tensors} | {t.shape[2] for t in self.tensors}
        if len(dims) != 1:
            raise InvalidArgumentError(f"MPO physical dimensions differ: {sorted(dims)}")

    @property
    def num_sites(self) -> int:
        return len(self.tensors)

    @property
    def phys_dim(self) -> int:
        return self.tensors[0].shape[1]

    @property
    def bond_dims(self) -> tuple[int, ...]:
        return (1,) + tuple(t.shape[-1] for t in self.tensors)

    @property
    def max_bond(self) -> int:
        return max(self.bond_dims)


def _check_pair(a, b) -> None:
    if a.num_sites != b.num_sites or a.phys_dim != b.phys_dim:
        raise InvalidArgumentError(
            f"shape mismatch: N={a.num_sites}, d={a.phys_dim} vs N={b.num_sites}, d={b.phys_dim}"
        )


# --------------------------------------------------------------------------
# constructors
# --------------------------------------------------------------------------


def product_state(config: Sequence[int], phys_dim: int = 2) -> MpsState:
    """Computational-basis product state, e.g. ``product_state([0, 0, 1])``."""
    tensors = []
    for s in config:
        t = np.zeros((1, phys_dim, 1), dtype=complex)
        t[0, s, 0] = 1.0
        tensors.append(t)
    return MpsState(tuple(tensors), canonical_form="left")


def random_mps(num_sites: int, bond_dim: int, rng: np.random.Generator, phys_dim: int = 2) -> MpsState:
    """Unnormalized MPS with i.i.d. complex Gaussian entries (not canonical)."""
    tensors = []
    for j in range(num_sites):
        left = 1 if j == 0 else bond_dim
        right = 1 if j == num_sites - 1 else bond_dim
        shape = (left, phys_dim, right)
        tensors.append(rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return MpsState(tuple(tensors))


def from_dense(vector: np.ndarray, num_sites: int, phys_dim: int = 2) -> MpsState:
    """Exact left-canonical MPS of a dense vector (norm moved to the offset)."""
    vec = np.asarray(vector, dtype=complex).reshape(-1)
    if vec.size != phys_dim**num_sites:
        raise InvalidArgumentError(f"vector length {vec.size} != {phys_dim}**{num_sites}")
    norm = np.linalg.norm(vec)
    if norm == 0:
        raise InvalidArgumentError("cannot build an MPS from the zero vector")
    rest = (vec / norm).reshape(1, -1)
    tensors = []
    for _ in range(num_sites - 1):
        left = rest.shape[0]
        q, r = positive_qr(rest.reshape(left * phys_dim, -1))
        tensors.append(q.reshape(left, phys_dim, -1))
        rest = r
    tensors.append(rest.reshape(rest.shape[0], phys_dim, 1))
    return MpsState(tuple(tensors), canonical_form="left", log_norm_offset=float(np.log(norm)))


def identity_mpo(num_sites: int, phys_dim: int = 2) -> MpoOperator:
    eye = np.eye(phys_dim, dtype=complex).reshape(1, phys_dim, phys_dim, 1)
    return MpoOperator(tuple(eye for _ in range(num_sites)))


def local_operator_mpo(num_sites: int, site: int, local: np.ndarray) -> MpoOperator:
    """MPO for ``local`` acting on one site (0-based) and identity elsewhere."""
    local = np.asarray(local, dtype=complex)
    d = local.shape[0]
    if not 0 <= site < num_sites:
        raise InvalidArgumentError(f"site {site} outside chain of {num_sites}")
    eye = np.eye(d, dtype=complex)
    return MpoOperator(
        tuple((local if j == site else eye).reshape(1, d, d, 1) for j in range(num_sites))
    )


# --------------------------------------------------------------------------
# contractions
# --------------------------------------------------------------------------


def inner_product(bra: MpsState, ket: MpsState) -> complex:
    """``<bra|ket>`` of the plain contractions (offsets excluded)."""
    _check_pair(bra, ket)
    env = np.ones((1, 1), dtype=complex)
    for a, b in zip(bra.tensors, ket.tensors):
        # env[a, b] * conj(A)[a, s, c] * B[b, s, d] -> [c, d]
        tmp = np.tensordot(env, b, axes=(1, 0))
        env = np.tensordot(a.conj(), tmp, axes=([0, 1], [0, 1]))
    return complex(env[0, 0])


def norm(psi: MpsState) -> float:
    return math.sqrt(max(inner_product(psi, psi).real, 0.0))


def expectation_mpo(psi: MpsState, op: MpoOperator, bra: MpsState | None = None) -> complex:
    """``<psi|op|psi>`` (or ``<bra|op|psi>``) of the plain contractions."""
    _check_pair(psi, op)
    bra = psi if bra is None else bra
    _check_pair(bra, psi)
    env = np.ones((1, 1, 1), dtype=complex)
    for a, w, b in zip(bra.tensors, op.tensors, psi.tensors):
        # env[a, w, b] B[b, t, d] -> [a, w, t, d]
        tmp = np.tensordot(env, b, axes=(2, 0))
        # W[w, s, t, x]: contract (w, t) -> [a, d, s, x]
        tmp = np.tensordot(tmp, w, axes=([1, 2], [0, 2]))
        # conj(A)[a, s, c]: contract (a, s) -> [d, x, c]
        tmp = np.tensordot(tmp, a.conj(), axes=([0, 2], [0, 1]))
        env = tmp.transpose(2, 1, 0)
    return complex(env[0, 0, 0])


def mpo_trace(op: MpoOperator) -> complex:
    """``Tr(op)`` by contracting the traced site tensors; exact for any N."""
    env = np.ones((1,), dtype=complex)
    for w in op.tensors:
        env = env @ np.einsum("assb->ab", w)
    return complex(env[0])


def to_dense(psi: MpsState, max_sites: int = DENSE_LIMIT) -> np.ndarray:
    """Amplitude vector of length ``d**N`` (sigma_1 most significant)."""
    if psi.num_sites > max_sites:
        raise ResourceLimitError(f"to_dense limited to {max_sites} sites, got {psi.num_sites}")
    v = psi.tensors[0]
    for t in psi.tensors[1:]:
        v = np.tensordot(v, t, axes=(-1, 0))
    return v.reshape(-1)


def mpo_to_dense(op: MpoOperator, max_sites: int = DENSE_LIMIT) -> np.ndarray:
    """Dense ``(d**N, d**N)`` matrix of an MPO."""
    if op.num_sites > max_sites:
        raise ResourceLimitError(f"mpo_to_dense limited to {max_sites} sites, got {op.num_sites}")
    m = op.tensors[0][0]  # (s, t, x)
    d = op.phys_dim
    for w in op.tensors[1:]:
        # m[S, T, x] w[x, s, t, y] -> [S, s, T, t, y]
        m = np.tensordot(m, w, axes=(-1, 0)).transpose(0, 2, 1, 3, 4)
        dim = m.shape[0] * d
        m = m.reshape(dim, dim, -1)
    return m[:, :, 0]


# --------------------------------------------------------------------------
# gauge
# --------------------------------------------------------------------------


def left_canonicalize(psi: MpsState) -> MpsState:
    """QR sweep to left-canonical form; the norm moves into the offset."""
    tensors = list(psi.tensors)
    d = psi.phys_dim
    for j in range(len(tensors) - 1):
        left, _, right = tensors[j].shape
        q, r = positive_qr(tensors[j].reshape(left * d, right))
        tensors[j] = q.reshape(left, d, -1)
        tensors[j + 1] = np.tensordot(r, tensors[j + 1], axes=(1, 0))
    last = tensors[-1]
    nrm = np.linalg.norm(last)
    if nrm == 0:
        raise InvalidArgumentError("cannot canonicalize a zero-norm state")
    tensors[-1] = last / nrm
    return replace(
        psi,
        tensors=tuple(tensors),
        canonical_form="left",
        log_norm_offset=psi.log_norm_offset + float(np.log(nrm)),
    )


def right_canonicalize(psi: MpsState) -> MpsState:
    """Mirror image of :func:`left_canonicalize`."""
    tensors = list(psi.tensors)
    d = psi.phys_dim
    for j in range(len(tensors) - 1, 0, -1):
        left, _, right = tensors[j].shape
        q, r = positive_qr(tensors[j].reshape(left, d * right).T)
        tensors[j] = q.T.reshape(-1, d, right)
        tensors[j - 1] = np.tensordot(tensors[j - 1], r.T, axes=(2, 0))
    first = tensors[0]
    nrm = np.linalg.norm(first)
    if nrm == 0:
        raise InvalidArgumentError("cannot canonicalize a zero-norm state")
    tensors[0] = first / nrm
    return replace(
        psi,
        tensors=tuple(tensors),
        canonical_form="right",
        log_norm_offset=psi.log_norm_offset + float(np.log(nrm)),
    )


def left_canonical_residuals(psi: MpsState) -> list[float]:
    """Per-site ``max |sum_s A^s^dagger A^s - I|``."""
    out = []
    for t in psi.tensors:
        left, d, right = t.shape
        m = t.reshape(left * d, right)
        out.append(float(np.max(np.abs(m.conj().T @ m - np.eye(right)))))
    return out


def is_left_canonical(psi: MpsState, tol: float = 1e-10) -> bool:
    return max(left_canonical_residuals(psi)) <= tol


# --------------------------------------------------------------------------
# MPO application
# --------------------------------------------------------------------------


def _contract_exact(op: MpoOperator, psi: MpsState) -> list[np.ndarray]:
    out = []
    for w, a in zip(op.tensors, psi.tensors):
        # W[w, s, t, x] A[a, t, b] -> [w, s, x, a, b] -> (w a, s, x b)
        t = np.tensordot(w, a, axes=(2, 1)).transpose(0, 3, 1, 2, 4)
        lw, la, s, rx, rb = t.shape
        out.append(t.reshape(lw * la, s, rx * rb))
    return out


def _truncate_right_to_left(tensors: list[np.ndarray], chi_max: int, cutoff: float) -> float:
    """Truncate a unit-norm left-canonical chain in place; returns total discarded weight."""
    d = tensors[0].shape[1]
    discarded = 0.0
    for j in range(len(tensors) - 1, 0, -1):
        left, _, right = tensors[j].shape
        res = truncated_svd(tensors[j].reshape(left, d * right), chi_max, cutoff)
        tensors[j] = res.vh.reshape(-1, d, right)
        tensors[j - 1] = np.tensordot(tensors[j - 1], res.u * res.s, axes=(2, 0))
        discarded += res.discarded_weight
    return discarded


def apply_mpo_compress(
    op: MpoOperator,
    psi: MpsState,
    chi_max: int,
    cutoff: float = 0.0,
    method: str = "svd",
) -> MpsState:
    """Approximate ``op|psi>`` with bond dimension at most ``chi_max``.

    ``method="svd"`` contracts exactly, brings the product to left-canonical
    form by QR, normalizes, and truncates right to left so every cut is made
    in mixed canonical form. The fidelity of the renormalized result with the
    exact product is then ``1 - discarded`` with ``discarded`` the weight added
    to ``discarded_weight``.

    ``method="zipup"`` never forms the full product: it truncates to
    ``2 * chi_max`` while sweeping left to right over a right-canonical input
    and then does one canonical right-to-left sweep down to ``chi_max``. It is
    several times cheaper for large MPO bonds; its discarded weight is an
    estimate, not an exact fidelity deficit.

    The returned state has unit norm and is right-canonical. Its offset grows
    by the log of the pre-truncation norm of ``op|psi>``.
    """
    if chi_max < 1:
        raise InvalidArgumentError(f"chi_max must be >= 1, got {chi_max}")
    _check_pair(op, psi)
    if method == "svd":
        tensors, nrm, discarded = _product_left_canonical(op, psi)
    elif method == "zipup":
        tensors, nrm, discarded = _zipup(op, psi, 2 * chi_max, cutoff)
    else:
        raise InvalidArgumentError(f"unknown method {method!r}")
    discarded += _truncate_right_to_left(tensors, chi_max, cutoff)
    kept = float(np.linalg.norm(tensors[0]))
    tensors[0] = tensors[0] / kept
    return MpsState(
        tuple(tensors),
        canonical_form="right",
        log_norm_offset=psi.log_norm_offset + math.log(nrm),
        discarded_weight=psi.discarded_weight + discarded,
    )


def _product_left_canonical(op: MpoOperator, psi: MpsState) -> tuple[list[np.ndarray], float, float]:
    tensors = _contract_exact(op, psi)
    d = psi.phys_dim
    for j in range(len(tensors) - 1):
        left, _, right = tensors[j].shape
        q, r = positive_qr(tensors[j].reshape(left * d, right))
        tensors[j] = q.reshape(left, d, -1)
        tensors[j + 1] = np.tensordot(r, tensors[j + 1], axes=(1, 0))
    nrm = float(np.linalg.norm(tensors[-1]))
    if not np.isfinite(nrm) or nrm == 0:
        raise NumericalFailureError(f"op|psi> has unusable norm {nrm}")
    tensors[-1] = tensors[-1] / nrm
    return tensors, nrm, 0.0


def _zipup(
    op: MpoOperator, psi: MpsState, chi_zip: int, cutoff: float
) -> tuple[list[np.ndarray], float, float]:
    if psi.canonical_form != "right":
        psi = right_canonicalize(psi)
    d = psi.phys_dim
    carry = np.ones((1, 1, 1), dtype=complex)  # (new, mpo, psi)
    tensors = []
    discarded = 0.0
    n = psi.num_sites
    for j, (w, a) in enumerate(zip(op.tensors, psi.tensors)):
        # carry[n, w, b] A[b, t, c] -> [n, w, t, c]
        t = np.tensordot(carry, a, axes=(2, 0))
        # W[w, s, t, x]: contract (w, t) -> [n, c, s, x]
        t = np.tensordot(t, w, axes=([1, 2], [0, 2]))
        new, c, s, x = t.shape
        t = t.transpose(0, 2, 3, 1)  # [n, s, x, c]
        if j == n - 1:
            tensors.append(t.reshape(new, s, 1))
            break
        res = gram_truncated_svd(t.reshape(new * s, x * c), chi_zip, cutoff)
        tensors.append(res.u.reshape(new, s, -1))
        carry = (res.s[:, None] * res.vh).reshape(-1, x, c)
        total = float(np.sum(res.s**2)) + res.discarded_weight
        if total > 0:
            discarded += res.discarded_weight / total
    nrm = float(np.linalg.norm(tensors[-1]))
    if not np.isfinite(nrm) or nrm == 0:
        raise NumericalFailureError(f"op|psi> has unusable norm {nrm}")
    tensors[-1] = tensors[-1] / nrm
    return tensors, nrm, discarded


def compress(psi: MpsState, chi_max: int, cutoff: float = 0.0) -> MpsState:
    """Truncate a state's bonds; identical to applying the identity MPO."""
    return apply_mpo_compress(identity_mpo(psi.num_sites, psi.phys_dim), psi, chi_max, cutoff)


# --------------------------------------------------------------------------
# MPO algebra
# --------------------------------------------------------------------------


def mpo_product(a: MpoOperator, b: MpoOperator) -> MpoOperator:
    """MPO for the operator product ``a @ b`` (bond dims multiply)."""
    _check_pair(a, b)
    tensors = []
    for wa, wb in zip(a.tensors, b.tensors):
        # wa[p, s, u, q] wb[r, u, t, x] -> [p, s, q, r, t, x]
        t = np.tensordot(wa, wb, axes=(2, 1)).transpose(0, 3, 1, 4, 2, 5)
        p, r, s, tt, q, x = t.shape
        tensors.append(t.reshape(p * r, s, tt, q * x))
    return MpoOperator(tuple(tensors), discarded_weight=a.discarded_weight + b.discarded_weight)


def mpo_add(a: MpoOperator, b: MpoOperator) -> MpoOperator:
    """MPO for ``a + b`` via block-diagonal bonds."""
    _check_pair(a, b)
    n = a.num_sites
    if n == 1:
        return MpoOperator((a.tensors[0] + b.tensors[0],))
    tensors = []
    for j, (wa, wb) in enumerate(zip(a.tensors, b.tensors)):
        la, d, _, ra = wa.shape
        lb, _, _, rb = wb.shape
        if j == 0:
            t = np.concatenate([wa, wb], axis=3)
        elif j == n - 1:
            t = np.concatenate([wa, wb], axis=0)
        else:
            t = np.zeros((la + lb, d, d, ra + rb), dtype=complex)
            t[:la, :, :, :ra] = wa
            t[la:, :, :, ra:] = wb
        tensors.append(t)
    return MpoOperator(tuple(tensors), discarded_weight=a.discarded_weight + b.discarded_weight)


def mpo_scale(op: MpoOperator, factor: complex) -> MpoOperator:
    tensors = list(op.tensors)
    tensors[0] = tensors[0] * factor
    return MpoOperator(tuple(tensors), discarded_weight=op.discarded_weight)


def mpo_compress(op: MpoOperator, chi_w: int | None = None, cutoff: float = 1e-14) -> MpoOperator:
    """SVD-compress an MPO in the Frobenius (Hilbert-Schmidt) norm.

    ``discarded_weight`` on the result is relative to the squared Frobenius
    norm of the input. The overall scale is spread evenly over the sites.
    """
    n = op.num_sites
    d = op.phys_dim
    chi_w = chi_w or max(1, max(t.shape[0] * t.shape[1] ** 2 for t in op.tensors))
    tensors = [t.reshape(t.shape[0], d * d, t.shape[3]) for t in op.tensors]
    log_scale = 0.0
    for j in range(n - 1):
        left, _, right = tensors[j].shape
        q, r = positive_qr(tensors[j].reshape(left * d * d, right))
        s = np.linalg.norm(r)
        if s == 0:
            return MpoOperator(tuple(np.zeros((1, d, d, 1), dtype=complex) for _ in range(n)))
        log_scale += np.log(s)
        tensors[j] = q.reshape(left, d * d, -1)
        tensors[j + 1] = np.tensordot(r / s, tensors[j + 1], axes=(1, 0))
    s = np.linalg.norm(tensors[-1])
    if s == 0:
        return MpoOperator(tuple(np.zeros((1, d, d, 1), dtype=complex) for _ in range(n)))
    log_scale += np.log(s)
    tensors[-1] = tensors[-1] / s
    discarded = _truncate_right_to_left(tensors, chi_w, cutoff)
    kept = np.linalg.norm(tensors[0])
    log_scale += np.log(kept)
    tensors[0] = tensors[0] / kept
    per_site = np.exp(log_scale / n)
    out = tuple(
        (t * per_site).reshape(t.shape[0], d, d, t.shape[2]) for t in tensors
    )
    return MpoOperator(out, discarded_weight=op.discarded_weight + discarded)


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------


def _encode(t: np.ndarray) -> dict:
    data = np.ascontiguousarray(t, dtype="<c16").tobytes()
    return {"shape": list(t.shape), "data": base64.b64encode(data).decode("ascii")}


def _decode(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    return np.frombuffer(raw, dtype="<c16").reshape(entry["shape"]).astype(np.complex128)


def to_dict(obj: MpsState | MpoOperator) -> dict:
    """Self-describing JSON-compatible container (complex128, little endian)."""
    if isinstance(obj, MpsState):
        return {
            "format": SERIAL_FORMAT,
            "version": SERIAL_VERSION,
            "kind": "mps",
            "canonical_form": obj.canonical_form,
            "log_norm_offset": obj.log_norm_offset,
            "discarded_weight": obj.discarded_weight,
            "tensors": [_encode(t) for t in obj.tensors],
        }
    if isinstance(obj, MpoOperator):
        return {
            "format": SERIAL_FORMAT,
            "version": SERIAL_VERSION,
            "kind": "mpo",
            "discarded_weight": obj.discarded_weight,
            "tensors": [_encode(t) for t in obj.tensors],
        }
    raise InvalidArgumentError(f"cannot serialize {type(obj).__name__}")


def from_dict(payload: dict) -> MpsState | MpoOperator:
    if payload.get("format") != SERIAL_FORMAT:
        raise InvalidArgumentError(f"unknown container format {payload.get('format')!r}")
    if payload.get("version") != SERIAL_VERSION:
        raise InvalidArgumentError(f"unsupported container version {payload.get('version')!r}")
    tensors = tuple(_decode(e) for e in payload["tensors"])
    if payload["kind"] == "mps":
        return MpsState(
            tensors,
            canonical_form=payload["canonical_form"],
            log_norm_offset=payload["log_norm_offset"],
            discarded_weight=payload.get("discarded_weight", 0.0),
        )
    if payload["kind"] == "mpo":
        return MpoOperator(tensors, discarded_weight=payload.get("discarded_weight", 0.0))
    raise InvalidArgumentError(f"unknown container kind {payload['kind']!r}")


def save(obj: MpsState | MpoOperator, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_dict(obj)), encoding="utf-8")


def load(path: str | Path) -> MpsState | MpoOperator:
    return from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
