"""Initial states of the field: white-noise Gaussian moments and time-bin states.

Second moments ``N`` and ``M`` are moments of the fluctuation
``b - <b>``; a coherent bin therefore has ``N = M = 0`` whatever its
amplitude.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .errors import CutoffTooSmallError, InadmissibleMomentsError, InvalidArgumentError, InvalidStateError
from .operators import StateDM, make_ladder

log = logging.getLogger(__name__)

ADMISSIBILITY_RTOL = 1e-12
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


class ConstantAmplitude:
    """alpha_t = value for all t."""

    def __init__(self, value):
        self.value = complex(value)

    def __call__(self, t):
        return self.value

    def max_abs(self) -> float:
        return abs(self.value)

    def __eq__(self, other):
        return isinstance(other, ConstantAmplitude) and other.value == self.value

    def __repr__(self):
        return f"ConstantAmplitude({self.value!r})"


class TabulatedAmplitude:
    """Amplitude given on a time grid.

    ``kind="step"`` holds each value on ``[times[i], times[i+1])``;
    ``kind="linear"`` interpolates.  Outside the table the end values hold.
    """

    def __init__(self, times, values, kind: str = "linear"):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=complex)
        if self.times.ndim != 1 or self.times.shape != self.values.shape or len(self.times) == 0:
            raise InvalidArgumentError("tabulated amplitude needs equal-length 1-D times and values")
        if np.any(np.diff(self.times) <= 0):
            raise InvalidArgumentError("tabulated times must be strictly increasing")
        if kind not in ("linear", "step"):
            raise InvalidArgumentError(f"unknown interpolation kind {kind!r}")
        self.kind = kind

    def __call__(self, t):
        if self.kind == "linear":
            return complex(np.interp(t, self.times, self.values.real)
                           + 1j * np.interp(t, self.times, self.values.imag))
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return complex(self.values[min(max(i, 0), len(self.values) - 1)])

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __eq__(self, other):
        return (isinstance(other, TabulatedAmplitude) and self.kind == other.kind
                and np.array_equal(self.times, other.times) and np.array_equal(self.values, other.values))


def as_amplitude(a) -> Callable:
    if callable(a):
        return a
    return ConstantAmplitude(a)


def max_amplitude(a) -> float:
    if hasattr(a, "max_abs"):
        return a.max_abs()
    return abs(a(0.0))


def check_admissible(N: float, M: complex, label: str = "") -> None:
    """Reject moments violating N >= 0 and |M|^2 <= N(N+1)."""
    if not np.isfinite(N) or not np.isfinite(M):
        raise InadmissibleMomentsError(f"{label}moments must be finite")
    if N < 0:
        raise InadmissibleMomentsError(f"{label}N must be >= 0, got {N}")
    bound = N * (N + 1)
    if abs(M) ** 2 > bound * (1 + ADMISSIBILITY_RTOL) + 1e-300:
        raise InadmissibleMomentsError(
            f"{label}moments violate |M|² ≤ N(N+1): |M|²={abs(M) ** 2:.17g}, N(N+1)={bound:.17g}"
        )


@dataclass(frozen=True)
class GaussianInput:
    """White-noise Gaussian field: amplitude and fluctuation moments per direction."""

    alpha: Callable = ConstantAmplitude(0)
    N: float = 0.0
    M: complex = 0.0
    alpha_p: Callable = ConstantAmplitude(0)
    N_p: float = 0.0
    M_p: complex = 0.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", as_amplitude(self.alpha))
        object.__setattr__(self, "alpha_p", as_amplitude(self.alpha_p))
        object.__setattr__(self, "N", float(self.N))
        object.__setattr__(self, "M", complex(self.M))
        object.__setattr__(self, "N_p", float(self.N_p))
        object.__setattr__(self, "M_p", complex(self.M_p))
        check_admissible(self.N, self.M)
        check_admissible(self.N_p, self.M_p, "left-going ")

    @property
    def is_vacuum_leading(self) -> bool:
        """True when bins expand around the vacuum (coherent or vacuum input)."""
        return self.N == 0 and self.M == 0 and self.N_p == 0 and self.M_p == 0


@dataclass(frozen=True)
class BinMoments:
    mean: complex
    N: float
    M: complex


def bin_average(f: Callable, t_start: float, dt: float) -> complex:
    """(1/dt) * integral of f over [t_start, t_start + dt] (8-point Gauss-Legendre)."""
    ts = t_start + 0.5 * dt * (_GL_NODES + 1.0)
    vals = np.array([f(t) for t in ts], dtype=complex)
    return complex(0.5 * np.dot(_GL_WEIGHTS, vals))


def bin_moments(g: GaussianInput, t_n: float, dt: float, average: bool = True):
    """Moments of bin n covering [t_n - dt, t_n] for (right, left) modes.

    ``<b_n> = alpha_n sqrt(dt)`` with ``alpha_n`` the bin mean of alpha_t
    (``average=False`` samples alpha at t_n instead).
    """
    if dt <= 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    if average:
        a, ap = bin_average(g.alpha, t_n - dt, dt), bin_average(g.alpha_p, t_n - dt, dt)
    else:
        a, ap = complex(g.alpha(t_n)), complex(g.alpha_p(t_n))
    sq = math.sqrt(dt)
    return BinMoments(a * sq, g.N, g.M), BinMoments(ap * sq, g.N_p, g.M_p)


@dataclass(frozen=True)
class TimeBinState:
    """State of one single-mode time bin truncated at ``cutoff`` Fock levels.

    ``vector`` is set for pure states.  ``chi1``/``chi2`` hold the
    coefficients of the sqrt(dt)- and dt-order terms of a vacuum-leading
    pure state |0> + chi1 sqrt(dt) + chi2 dt.
    """

    cutoff: int
    state: StateDM
    vector: np.ndarray | None = None
    chi1: np.ndarray | None = None
    chi2: np.ndarray | None = None
    moment_error: float = 0.0

    def __post_init__(self):
        if self.state.data.shape != (self.cutoff, self.cutoff):
            raise InvalidStateError("bin state size does not match cutoff")
        if (self.chi1 is None) != (self.chi2 is None):
            raise InvalidStateError("expansion needs both chi1 and chi2")
        if self.chi1 is not None:
            c1 = np.asarray(self.chi1, dtype=complex)
            c2 = np.asarray(self.chi2, dtype=complex)
            if abs(c1[0].real) > 1e-10:
                raise InvalidStateError("expansion violates Re<0|chi1> = 0")
            if abs(np.vdot(c1, c1).real + 2 * c2[0].real) > 1e-10:
                raise InvalidStateError("expansion violates <chi1|chi1> + 2 Re<0|chi2> = 0")

    @classmethod
    def pure(cls, vec, cutoff=None, chi1=None, chi2=None, moment_error=0.0) -> "TimeBinState":
        v = np.asarray(vec, dtype=complex).ravel()
        cutoff = len(v) if cutoff is None else cutoff
        if len(v) != cutoff:
            raise InvalidStateError("vector length does not match cutoff")
        v = v / np.linalg.norm(v)
        v.setflags(write=False)
        return cls(cutoff, StateDM.from_pure(v), v, chi1, chi2, moment_error)

    @classmethod
    def fock(cls, k: int, cutoff: int) -> "TimeBinState":
        v = np.zeros(cutoff, dtype=complex)
        v[k] = 1.0
        return cls.pure(v)

    @classmethod
    def vacuum(cls, cutoff: int = 3) -> "TimeBinState":
        z = np.zeros(cutoff, dtype=complex)
        st = cls.fock(0, cutoff)
        return cls(cutoff, st.state, st.vector, z, z.copy())

    @classmethod
    def mixed(cls, rho) -> "TimeBinState":
        st = rho if isinstance(rho, StateDM) else StateDM(rho)
        return cls(st.data.shape[0], st)

    @property
    def is_pure(self) -> bool:
        return self.vector is not None

    @property
    def vacuum_leading(self) -> bool:
        return self.chi1 is not None

    def spectral(self, tol: float = 1e-15):
        """(weights, eigenvectors as columns) of the bin state, dropping weights below tol."""
        if self.vector is not None:
            return np.array([1.0]), self.vector.reshape(-1, 1)
        w, v = np.linalg.eigh(self.state.data)
        keep = w > tol
        return w[keep], v[:, keep]

    def moments(self):
        """(<b>, N, M) of the truncated state, N and M central."""
        b = make_ladder("boson", self.cutoff).data
        rho = self.state.data
        mean = np.trace(rho @ b)
        n = np.trace(rho @ b.conj().T @ b).real - abs(mean) ** 2
        m = np.trace(rho @ b @ b) - mean ** 2
        return complex(mean), float(n), complex(m)


def _coherent_vector(beta: complex, cutoff: int) -> np.ndarray:
    k = np.arange(cutoff)
    logfact = np.array([math.lgamma(i + 1) for i in k])
    mag = np.exp(-0.5 * abs(beta) ** 2 + k * np.log(abs(beta)) - 0.5 * logfact) if beta != 0 else (k == 0) * 1.0
    return mag * np.exp(1j * np.angle(beta) * k)


def gaussian_bin_state(moments: BinMoments, cutoff: int, *, max_moment_error: float = 1e-4,
                       work_margin: int = 60) -> TimeBinState:
    """Displaced squeezed thermal bin state with the given moments, truncated at ``cutoff``.

    The state is built in a larger working space, projected onto the first
    ``cutoff`` Fock levels and renormalized.  Moment errors above 1e-6 are
    logged; above ``max_moment_error`` a :class:`CutoffTooSmallError` is raised.
    """
    if cutoff < 2:
        raise InvalidArgumentError(f"bin cutoff must be >= 2, got {cutoff}")
    beta, N, M = complex(moments.mean), float(moments.N), complex(moments.M)
    check_admissible(N, M)
    if N == 0 and M == 0:
        vec = _coherent_vector(beta, cutoff)
        st = TimeBinState.pure(vec)
    else:
        W = cutoff + work_margin
        b = make_ladder("boson", W).data
        n_th = max(math.sqrt(max((N + 0.5) ** 2 - abs(M) ** 2, 0.25)) - 0.5, 0.0)
        rho = np.diag((n_th / (n_th + 1)) ** np.arange(W) / (n_th + 1)).astype(complex)
        if M != 0:
            r = 0.5 * math.acosh(max((N + 0.5) / (n_th + 0.5), 1.0))
            zeta = r * (-M / abs(M))
            S = scipy.linalg.expm(0.5 * (np.conj(zeta) * b @ b - zeta * b.conj().T @ b.conj().T))
            rho = S @ rho @ S.conj().T
        if beta != 0:
            D = scipy.linalg.expm(beta * b.conj().T - np.conj(beta) * b)
            rho = D @ rho @ D.conj().T
        rho = rho[:cutoff, :cutoff]
        rho = rho / np.trace(rho).real
        st = TimeBinState.mixed(StateDM.from_array(rho))
    m_mean, m_n, m_m = st.moments()
    err = max(abs(m_mean - beta), abs(m_n - N), abs(m_m - M))
    if err > max_moment_error:
        raise CutoffTooSmallError(
            f"cutoff {cutoff} reproduces bin moments only to {err:.2e} (limit {max_moment_error:.0e})"
        )
    if err > 1e-6:
        log.warning("bin cutoff %d reproduces moments only to %.2e", cutoff, err)
    return TimeBinState(st.cutoff, st.state, st.vector, None, None, err)


def coherent_bin(xi_n: complex, dt: float, cutoff: int = 3) -> TimeBinState:
    """Coherent bin of amplitude xi_n sqrt(dt) with its vacuum expansion."""
    chi1 = np.zeros(cutoff, dtype=complex)
    chi2 = np.zeros(cutoff, dtype=complex)
    chi1[1] = xi_n
    chi2[0] = -0.5 * abs(xi_n) ** 2
    if cutoff > 2:
        chi2[2] = xi_n ** 2 / math.sqrt(2)
    vec = _coherent_vector(xi_n * math.sqrt(dt), cutoff)
    st = TimeBinState.pure(vec)
    return TimeBinState(cutoff, st.state, st.vector, chi1, chi2)


def coherent_bins(xi, dt: float, n_bins: int, cutoff: int = 3, t0: float = 0.0) -> list:
    """Bins 1..n_bins of a coherent wavepacket; bin n averages xi over [t0+(n-1)dt, t0+n dt]."""
    if dt <= 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    xi = as_amplitude(xi)
    out = []
    for n in range(1, n_bins + 1):
        xi_n = bin_average(xi, t0 + (n - 1) * dt, dt)
        out.append(coherent_bin(xi_n, dt, cutoff))
    return out


def suggest_cutoff(moments: BinMoments, tol: float = 1e-6, max_cutoff: int = 64) -> int:
    """Smallest cutoff whose truncated Gaussian state matches the moments to ``tol``."""
    for c in range(2, max_cutoff + 1):
        try:
            st = gaussian_bin_state(moments, c, max_moment_error=np.inf)
        except CutoffTooSmallError:  # pragma: no cover
            continue
        if st.moment_error <= tol:
            return c
    raise CutoffTooSmallError(f"no cutoff up to {max_cutoff} reaches moment error {tol}")


def bin_source(states: Sequence[TimeBinState] | TimeBinState, n_steps: int):
    """Yield ``n_steps`` bin states from a list or by repeating a single state."""
    if isinstance(states, TimeBinState):
        for _ in range(n_steps):
            yield states
        return
    if len(states) < n_steps:
        raise InvalidArgumentError(f"bin source has {len(states)} bins, need {n_steps}")
    yield from states[:n_steps]
