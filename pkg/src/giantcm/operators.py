"""Dense operator algebra on small composite Hilbert spaces.

Every operator in the package is a dense complex matrix tagged with the
local dimensions of its tensor factors.  Site 0 is the leftmost
(slowest-varying) Kronecker factor.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from .errors import InvalidArgumentError, InvalidStateError

DEFAULT_MAX_DIM = 4096


@dataclass(frozen=True)
class HilbertDims:
    """Ordered local dimensions of a composite space."""

    dims: tuple
    max_dim: int = DEFAULT_MAX_DIM

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if not dims:
            raise InvalidArgumentError("HilbertDims needs at least one factor")
        if any(d < 2 for d in dims):
            raise InvalidArgumentError(f"every local dimension must be >= 2, got {dims}")
        if self.total > self.max_dim:
            raise InvalidArgumentError(
                f"total dimension {self.total} exceeds cap {self.max_dim}"
            )

    @property
    def total(self) -> int:
        return int(np.prod(self.dims))

    def __len__(self):
        return len(self.dims)

    def __iter__(self):
        return iter(self.dims)

    def __getitem__(self, i):
        return self.dims[i]

    def __add__(self, other: "HilbertDims") -> "HilbertDims":
        return HilbertDims(self.dims + tuple(other), max(self.max_dim, getattr(other, "max_dim", 0)))

    def __eq__(self, other):
        if isinstance(other, HilbertDims):
            return self.dims == other.dims
        return NotImplemented

    def __hash__(self):
        return hash(self.dims)


def _as_dims(dims) -> HilbertDims:
    if isinstance(dims, HilbertDims):
        return dims
    return HilbertDims(tuple(dims))


class Operator:
    """Immutable dense operator on a composite space."""

    __slots__ = ("dims", "data")

    def __init__(self, data, dims=None):
        arr = np.array(data, dtype=complex)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise InvalidArgumentError(f"operator must be square, got shape {arr.shape}")
        dims = HilbertDims((arr.shape[0],)) if dims is None else _as_dims(dims)
        if dims.total != arr.shape[0]:
            raise InvalidArgumentError(
                f"matrix size {arr.shape[0]} does not match dims {dims.dims}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Operator is immutable")

    @classmethod
    def identity(cls, dims) -> "Operator":
        dims = _as_dims(dims)
        return cls(np.eye(dims.total), dims)

    @classmethod
    def zeros(cls, dims) -> "Operator":
        dims = _as_dims(dims)
        return cls(np.zeros((dims.total, dims.total)), dims)

    @property
    def shape(self):
        return self.data.shape

    def dag(self) -> "Operator":
        return Operator(self.data.conj().T, self.dims)

    def _check_same(self, other):
        if self.dims != other.dims:
            raise InvalidArgumentError(f"dims mismatch: {self.dims.dims} vs {other.dims.dims}")

    def __add__(self, other):
        if isinstance(other, Operator):
            self._check_same(other)
            return Operator(self.data + other.data, self.dims)
        if np.isscalar(other) and other == 0:
            return self
        return NotImplemented

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Operator):
            self._check_same(other)
            return Operator(self.data - other.data, self.dims)
        return NotImplemented

    def __neg__(self):
        return Operator(-self.data, self.dims)

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return Operator(self.data * scalar, self.dims)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if np.isscalar(scalar):
            return Operator(self.data / scalar, self.dims)
        return NotImplemented

    def __matmul__(self, other):
        if isinstance(other, Operator):
            self._check_same(other)
            return Operator(self.data @ other.data, self.dims)
        return self.data @ np.asarray(other)

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        scale = max(np.linalg.norm(self.data), 1.0)
        return bool(np.linalg.norm(self.data - self.data.conj().T) <= tol * scale)

    def norm(self, ord=2) -> float:
        """Operator norm (spectral by default)."""
        return float(np.linalg.norm(self.data, ord=ord))

    def allclose(self, other, atol=1e-12) -> bool:
        other = other.data if isinstance(other, Operator) else np.asarray(other)
        return bool(np.allclose(self.data, other, rtol=0.0, atol=atol))

    def __repr__(self):
        return f"Operator(dims={self.dims.dims})"


class StateDM:
    """Validated density matrix.

    Construction checks Hermiticity (relative Frobenius 1e-12), unit trace
    (1e-10) and positivity (eigenvalues >= -1e-10).  Pass ``check=False`` for
    outputs that are flagged rather than rejected (e.g. the second-order
    update at large steps).
    """

    __slots__ = ("dims", "data")

    HERMITIAN_TOL = 1e-12
    TRACE_TOL = 1e-10
    POSITIVITY_TOL = 1e-10

    def __init__(self, data, dims=None, check: bool = True):
        arr = np.array(data, dtype=complex)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise InvalidStateError(f"density matrix must be square, got {arr.shape}")
        dims = HilbertDims((arr.shape[0],)) if dims is None else _as_dims(dims)
        if dims.total != arr.shape[0]:
            raise InvalidStateError(f"matrix size {arr.shape[0]} does not match dims {dims.dims}")
        if check:
            self._validate(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("StateDM is immutable")

    @classmethod
    def _validate(cls, arr):
        if not np.all(np.isfinite(arr)):
            raise InvalidStateError("density matrix has non-finite entries")
        herm_err = np.linalg.norm(arr - arr.conj().T)
        if herm_err > cls.HERMITIAN_TOL * max(np.linalg.norm(arr), 1e-300):
            raise InvalidStateError(f"density matrix not Hermitian (error {herm_err:.3e})")
        tr = np.trace(arr)
        if abs(tr - 1.0) > cls.TRACE_TOL:
            raise InvalidStateError(f"trace {tr.real:.15g} differs from 1")
        lo = np.linalg.eigvalsh(0.5 * (arr + arr.conj().T))[0]
        if lo < -cls.POSITIVITY_TOL:
            raise InvalidStateError(f"negative eigenvalue {lo:.3e}")

    @classmethod
    def from_pure(cls, vec, dims=None) -> "StateDM":
        v = np.asarray(vec, dtype=complex).ravel()
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()), dims)

    @classmethod
    def from_array(cls, arr, dims=None, check=True) -> "StateDM":
        """Symmetrize away rounding-level anti-Hermitian parts before wrapping."""
        arr = np.asarray(arr, dtype=complex)
        return cls(0.5 * (arr + arr.conj().T), dims, check=check)

    def purity(self) -> float:
        return float(np.real(np.vdot(self.data, self.data)))

    def trace(self) -> complex:
        return complex(np.trace(self.data))

    def expect(self, op) -> complex:
        mat = op.data if isinstance(op, Operator) else np.asarray(op)
        return complex(np.trace(mat @ self.data))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.data + self.data.conj().T))[0])

    def __repr__(self):
        return f"StateDM(dims={self.dims.dims})"


def make_ladder(kind: str, cutoff: int | None = None) -> Operator:
    """Local annihilation operator: sigma-minus for ``qubit``, truncated b for ``boson``."""
    if kind == "qubit":
        cutoff = 2
    elif kind == "boson":
        if cutoff is None or int(cutoff) < 2:
            raise InvalidArgumentError(f"boson cutoff must be >= 2, got {cutoff}")
        cutoff = int(cutoff)
    else:
        raise InvalidArgumentError(f"unknown ladder kind {kind!r}")
    return Operator(np.diag(np.sqrt(np.arange(1, cutoff)), k=1))


def embed(op: Operator, site: int, dims) -> Operator:
    """Place a local operator on ``site`` with identities elsewhere."""
    dims = _as_dims(dims)
    if not 0 <= site < len(dims):
        raise InvalidArgumentError(f"site {site} out of range for {len(dims)} factors")
    local = op.data if isinstance(op, Operator) else np.asarray(op, dtype=complex)
    if local.shape != (dims[site], dims[site]):
        raise InvalidArgumentError(
            f"local operator of size {local.shape[0]} does not fit site {site} (dim {dims[site]})"
        )
    left = int(np.prod(dims.dims[:site], dtype=int))
    right = int(np.prod(dims.dims[site + 1:], dtype=int))
    data = np.kron(np.kron(np.eye(left), local), np.eye(right))
    return Operator(data, dims)


def tensor(*ops: Operator) -> Operator:
    """Kronecker product with concatenated dims."""
    data = reduce(np.kron, [o.data for o in ops])
    dims = reduce(lambda a, b: a + b, [o.dims for o in ops])
    return Operator(data, dims)


def commutator(a: Operator, b: Operator) -> Operator:
    return a @ b - b @ a


def anticommutator(a: Operator, b: Operator) -> Operator:
    return a @ b + b @ a


def expm(h: Operator, scale: complex = 1.0) -> Operator:
    """exp(scale * h) by scaling and squaring (Pade core, scipy)."""
    data = h.data if isinstance(h, Operator) else np.asarray(h, dtype=complex)
    if not np.all(np.isfinite(data)) or not np.isfinite(scale):
        raise InvalidArgumentError("expm input has non-finite entries")
    dims = h.dims if isinstance(h, Operator) else None
    return Operator(scipy.linalg.expm(complex(scale) * data), dims)


def partial_trace(s, keep: Iterable[int]):
    """Reduce a state to the factors in ``keep`` (returned in original order).

    Accepts a :class:`StateDM` (returns a StateDM) or a ``(matrix, dims)``
    pair given as ``StateDM(..., check=False)``.
    """
    keep = sorted(set(int(k) for k in keep))
    dims = s.dims
    n = len(dims)
    if not keep:
        raise InvalidArgumentError("keep set must be nonempty")
    if keep[0] < 0 or keep[-1] >= n:
        raise InvalidArgumentError(f"keep indices {keep} out of range for {n} factors")
    reduced = _partial_trace_array(s.data, dims.dims, keep)
    rdims = HilbertDims(tuple(dims[k] for k in keep), dims.max_dim)
    return StateDM(reduced, rdims, check=False)


def _partial_trace_array(mat, dims: Sequence[int], keep: Sequence[int]):
    n = len(dims)
    drop = [i for i in range(n) if i not in keep]
    if not drop:
        return np.array(mat)
    t = np.asarray(mat).reshape(tuple(dims) * 2)
    perm = list(keep) + drop
    t = t.transpose(perm + [p + n for p in perm])
    dk = int(np.prod([dims[k] for k in keep], dtype=int))
    dd = int(np.prod([dims[k] for k in drop], dtype=int))
    t = t.reshape(dk, dd, dk, dd)
    return np.einsum("aibi->ab", t)


def apply_super(L, rho) -> np.ndarray:
    """Evaluate the Kossakowski-form generator ``L`` on ``rho``.

    ``L`` needs ``H`` (Operator), ``basis_ops`` (sequence of Operator) and a
    square ``kossakowski`` matrix; the result is

        -i[H, rho] + sum_{mu,mu'} k[mu, mu'] (C_mu' rho C_mu^+ - 1/2 {C_mu^+ C_mu', rho}).
    """
    r = rho.data if hasattr(rho, "data") else np.asarray(rho, dtype=complex)
    if hasattr(rho, "dims") and rho.dims != L.H.dims:
        raise InvalidArgumentError(f"dims mismatch: {rho.dims.dims} vs {L.H.dims.dims}")
    if r.shape != L.H.shape:
        raise InvalidArgumentError(f"state shape {r.shape} does not match generator {L.H.shape}")
    H = L.H.data
    out = -1j * (H @ r - r @ H)
    ops = [c.data for c in L.basis_ops]
    kappa = np.asarray(L.kossakowski, dtype=complex)
    for mu, c_mu in enumerate(ops):
        c_mu_dag = c_mu.conj().T
        for mup, c_mup in enumerate(ops):
            k = kappa[mu, mup]
            if k == 0:
                continue
            prod = c_mu_dag @ c_mup
            out += k * (c_mup @ r @ c_mu_dag - 0.5 * (prod @ r + r @ prod))
    return out
