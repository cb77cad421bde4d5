"""Gaussian white-noise master equation in Kossakowski form, its integration and coefficient tables."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidArgumentError, InvalidStateError
from .field import ConstantAmplitude, GaussianInput, max_amplitude
from .geometry import CollectiveOps, Layout, build_collective_ops, collective_weights, order_points
from .operators import Operator, StateDM, apply_super

log = logging.getLogger(__name__)

CPT_TOL = 1e-10
BASIS_NAMES = ("A", "A^+", "A'", "A'^+")


@dataclass(frozen=True)
class LindbladGenerator:
    """H plus a Kossakowski matrix over the basis (A, A^+, A', A'^+).

    The dissipator is sum_{mu,mu'} kappa[mu, mu'] (C_mu' rho C_mu^+ - {C_mu^+ C_mu', rho}/2).
    """

    H: Operator
    basis_ops: tuple
    kossakowski: np.ndarray
    rate_scale: float = 1.0

    def __post_init__(self):
        k = np.asarray(self.kossakowski, dtype=complex)
        if k.shape != (len(self.basis_ops),) * 2:
            raise InvalidArgumentError("Kossakowski matrix does not match the operator basis")
        if not np.allclose(k, k.conj().T, atol=1e-14):
            raise InvalidArgumentError("Kossakowski matrix must be Hermitian")
        if not self.H.is_hermitian(1e-12):
            raise InvalidArgumentError("generator Hamiltonian is not Hermitian")
        k.setflags(write=False)
        object.__setattr__(self, "kossakowski", k)

    @property
    def dims(self):
        return self.H.dims

    def jump_form(self, tol: float = 0.0):
        """(rates, jump operators) from diagonalizing kappa; negative rates kept if present."""
        w, v = np.linalg.eigh(self.kossakowski)
        ops = []
        rates = []
        for lam, vec in zip(w, v.T):
            if abs(lam) <= tol:
                continue
            L = sum(np.conj(c) * C.data for c, C in zip(vec, self.basis_ops))
            rates.append(float(lam))
            ops.append(L)
        return rates, ops

    def compile(self) -> "CompiledGenerator":
        return CompiledGenerator.from_generator(self)

    def rhs(self, rho) -> np.ndarray:
        return self.compile()(np.asarray(getattr(rho, "data", rho)))


@dataclass(frozen=True)
class CompiledGenerator:
    """d rho/dt = K rho + rho K^+ + sum_k r_k L_k rho L_k^+ with K = -iH - G/2."""

    K: np.ndarray
    rates: tuple
    jumps: tuple

    @classmethod
    def from_generator(cls, L: LindbladGenerator) -> "CompiledGenerator":
        rates, ops = L.jump_form(tol=1e-15)
        G = np.zeros(L.H.shape, dtype=complex)
        for r, J in zip(rates, ops):
            G += r * (J.conj().T @ J)
        return cls(-1j * L.H.data - 0.5 * G, tuple(rates), tuple(ops))

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        Kr = self.K @ rho
        out = Kr + Kr.conj().T if _is_herm(rho) else Kr + rho @ self.K.conj().T
        for r, J in zip(self.rates, self.jumps):
            out = out + r * (J @ rho @ J.conj().T)
        return out


def _is_herm(rho):
    return np.array_equal(rho, rho.conj().T)


def kossakowski_matrix(g: GaussianInput, gamma: float, gamma_prime: float) -> np.ndarray:
    """4x4 kappa for the basis (A, A^+, A', A'^+); primed and unprimed blocks do not mix."""
    k = np.zeros((4, 4), dtype=complex)
    for off, rate, N, M in ((0, gamma, g.N, g.M), (2, gamma_prime, g.N_p, g.M_p)):
        k[off, off] = rate * (N + 1)
        k[off + 1, off + 1] = rate * N
        k[off, off + 1] = rate * M  # A^+ rho A^+
        k[off + 1, off] = rate * np.conj(M)
    return k


def drive_hamiltonian(co: CollectiveOps, a: complex, ap: complex) -> np.ndarray:
    A, Ap = co.A.data, co.Ap.data
    X = math.sqrt(co.gamma) * np.conj(a) * A
    if co.gamma_prime > 0:
        X = X + math.sqrt(co.gamma_prime) * np.conj(ap) * Ap
    return X + X.conj().T


def _rate_scale(co: CollectiveOps, g: GaussianInput) -> float:
    return max(co.gamma, co.gamma_prime,
               math.sqrt(co.gamma) * max_amplitude(g.alpha),
               math.sqrt(co.gamma_prime) * max_amplitude(g.alpha_p))


def build_generator(layout: Layout | None, co: CollectiveOps | None, g: GaussianInput | None = None,
                    t: float = 0.0) -> LindbladGenerator:
    """Generator at time t: H = H_vac + drive, kappa from (N, M, N', M')."""
    if co is None:
        co = build_collective_ops(layout)
    g = GaussianInput() if g is None else g
    H = co.Hvac.data + drive_hamiltonian(co, g.alpha(t), g.alpha_p(t))
    basis = (co.A, co.A.dag(), co.Ap, co.Ap.dag())
    return LindbladGenerator(Operator(H, co.dims), basis, kossakowski_matrix(g, co.gamma, co.gamma_prime),
                             _rate_scale(co, g))


class MasterEquation:
    """Time-dependent family t -> generator; only the drive changes with t."""

    def __init__(self, co: CollectiveOps, g: GaussianInput | None = None):
        self.co = co
        self.g = GaussianInput() if g is None else g
        self.static = build_generator(None, co, self.g, 0.0)
        base = build_generator(None, co, GaussianInput(N=self.g.N, M=self.g.M, N_p=self.g.N_p, M_p=self.g.M_p))
        self._compiled = base.compile()
        self.constant = isinstance(self.g.alpha, ConstantAmplitude) and isinstance(self.g.alpha_p, ConstantAmplitude)
        self.rate_scale = self.static.rate_scale

    def generator(self, t: float) -> LindbladGenerator:
        return build_generator(None, self.co, self.g, t)

    def __call__(self, t: float, rho: np.ndarray) -> np.ndarray:
        Hd = drive_hamiltonian(self.co, self.g.alpha(t), self.g.alpha_p(t))
        out = self._compiled(rho)
        if np.any(Hd):
            out = out - 1j * (Hd @ rho - rho @ Hd)
        return out


def unidirectional_rhs(co: CollectiveOps, g: GaussianInput, t: float = 0.0) -> Callable:
    """Independent term-by-term evaluation of the gamma' = 0 master equation."""
    A = co.A.data
    Ad = A.conj().T
    gam = co.gamma
    a = complex(g.alpha(t))
    H = co.Hvac.data + math.sqrt(gam) * (np.conj(a) * A + a * Ad)

    def D(J, rho):
        Jd = J.conj().T
        return J @ rho @ Jd - 0.5 * (Jd @ J @ rho + rho @ Jd @ J)

    def rhs(rho):
        rho = np.asarray(rho)
        out = -1j * (H @ rho - rho @ H)
        out += gam * (g.N + 1) * D(A, rho) + gam * g.N * D(Ad, rho)
        out += gam * g.M * (Ad @ rho @ Ad - 0.5 * (Ad @ Ad @ rho + rho @ Ad @ Ad))
        out += gam * np.conj(g.M) * (A @ rho @ A - 0.5 * (A @ A @ rho + rho @ A @ A))
        return out

    return rhs


def is_cpt(L: LindbladGenerator | np.ndarray, tol: float = CPT_TOL):
    """(kappa >= -tol, min eigenvalue of kappa)."""
    k = L.kossakowski if isinstance(L, LindbladGenerator) else np.asarray(L)
    lam = float(np.linalg.eigvalsh(0.5 * (k + k.conj().T))[0])
    return lam >= -tol, lam


@dataclass
class MESeries:
    times: np.ndarray
    states: list
    trace_drift: float
    min_eigenvalue: float


def _rk4(f, t, rho, h):
    k1 = f(t, rho)
    k2 = f(t + 0.5 * h, rho + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, rho + 0.5 * h * k2)
    k4 = f(t + h, rho + h * k3)
    return rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(L, rho0: StateDM, T: float, dt_int: float, stride: int = 1,
              max_rate_dt: float = 0.01) -> MESeries:
    """Fixed-step RK4 from 0 to T.

    ``L`` is a LindbladGenerator, a MasterEquation or a callable
    ``(t, rho) -> drho/dt`` (which then needs a ``rate_scale`` attribute or
    bypasses the step-size check).
    """
    if T < 0 or dt_int <= 0:
        raise InvalidArgumentError("need T >= 0 and dt_int > 0")
    if isinstance(L, LindbladGenerator):
        comp = L.compile()
        f = lambda t, r: comp(r)  # noqa: E731
        scale = L.rate_scale
    else:
        f = L
        scale = getattr(L, "rate_scale", 0.0)
    if scale > 0 and dt_int > max_rate_dt / scale * (1 + 1e-12):
        raise InvalidArgumentError(
            f"dt_int={dt_int:.3g} exceeds {max_rate_dt}/rate_scale = {max_rate_dt / scale:.3g}"
        )
    n = int(round(T / dt_int))
    if abs(n * dt_int - T) > 1e-9 * max(T, 1.0):
        raise InvalidArgumentError("T must be an integer multiple of dt_int")
    rho = np.array(rho0.data, dtype=complex)
    tr0 = np.trace(rho).real
    times, states = [0.0], [rho0]
    drift, mineig = 0.0, float(np.linalg.eigvalsh(rho)[0])
    for i in range(1, n + 1):
        rho = _rk4(f, (i - 1) * dt_int, rho, dt_int)
        if i % stride == 0 or i == n:
            rho = 0.5 * (rho + rho.conj().T)
            drift = max(drift, abs(np.trace(rho).real - tr0))
            mineig = min(mineig, float(np.linalg.eigvalsh(rho)[0]))
            times.append(i * dt_int)
            states.append(StateDM(rho, rho0.dims, check=False))
    if mineig < -1e-7:
        log.warning("master-equation state lost positivity: min eigenvalue %.2e", mineig)
    if drift > 1e-9:
        raise InvalidStateError(f"trace drifted by {drift:.2e}")
    return MESeries(np.array(times), states, drift, mineig)


# -- coefficient tables -------------------------------------------------------

def hvac_coefficients(layout: Layout) -> np.ndarray:
    """h[i, j] with H_vac = sum_ij h[i, j] A_i^+ A_j."""
    order = order_points(layout)
    g, gp = layout.gamma, layout.gamma_prime
    phis = [p.phi for p in layout.points]
    n = len(layout.emitters)
    x = np.zeros((n, n), dtype=complex)
    for nu in range(len(phis)):
        for nup in range(nu):
            ph = np.exp(1j * (phis[nup] - phis[nu]))
            x[order.J[nup], order.J[nu]] += g * ph
            x[order.J[nu], order.J[nup]] += gp * ph
    return 0.5j * (x - x.conj().T)


def coefficient_arrays(layout: Layout, g: GaussianInput | None = None, t: float = 0.0) -> dict:
    """Per-pair coefficients of the generator in terms of the bare A_j.

    H[i, j]        on A_i^+ A_j (H_vac part; Hermitian matrix)
    drive[i]       on A_i^+ in H (plus h.c.)
    decay[i, j]    on A_i rho A_j^+ - {A_j^+ A_i, rho}/2
    heat[i, j]     on A_i^+ rho A_j - {A_j A_i^+, rho}/2
    squeeze[i, j]  on A_i^+ rho A_j^+ - {A_j^+ A_i^+, rho}/2 (plus h.c.)
    """
    g = GaussianInput() if g is None else g
    u, up = collective_weights(layout)
    gam, gp = layout.gamma, layout.gamma_prime
    decay = gam * (g.N + 1) * np.outer(u, u.conj()) + gp * (g.N_p + 1) * np.outer(up, up.conj())
    heat = gam * g.N * np.outer(u.conj(), u) + gp * g.N_p * np.outer(up.conj(), up)
    squeeze = gam * g.M * np.outer(u.conj(), u.conj()) + gp * g.M_p * np.outer(up.conj(), up.conj())
    drive = math.sqrt(gam) * complex(g.alpha(t)) * u.conj() + math.sqrt(gp) * complex(g.alpha_p(t)) * up.conj()
    return {"H": hvac_coefficients(layout), "drive": drive, "decay": decay, "heat": heat, "squeeze": squeeze}


def coefficient_table(layout: Layout, g: GaussianInput | None = None, t: float = 0.0) -> dict:
    """JSON-ready map "H[i][j]" -> [re, im] etc.; indices are 0-based emitter indices."""
    arrs = coefficient_arrays(layout, g, t)
    out = {}
    for name, a in arrs.items():
        if a.ndim == 1:
            for i, v in enumerate(a):
                out[f"{name}[{i}]"] = [float(v.real), float(v.imag)]
        else:
            for i in range(a.shape[0]):
                for j in range(a.shape[1]):
                    out[f"{name}[{i}][{j}]"] = [float(a[i, j].real), float(a[i, j].imag)]
    return out


def generator_from_table(layout: Layout, arrs: dict) -> Callable:
    """Rebuild d rho/dt from coefficient arrays (consistency check of the table)."""
    co = build_collective_ops(layout)
    loc = [a.data for a in co.local]
    n = len(loc)
    H = sum(arrs["H"][i, j] * loc[i].conj().T @ loc[j] for i in range(n) for j in range(n))
    X = sum(arrs["drive"][i] * loc[i].conj().T for i in range(n))
    H = H + X + X.conj().T

    def rhs(rho):
        out = -1j * (H @ rho - rho @ H)
        for i in range(n):
            Ai, Aid = loc[i], loc[i].conj().T
            for j in range(n):
                Aj, Ajd = loc[j], loc[j].conj().T
                c = arrs["decay"][i, j]
                out = out + c * (Ai @ rho @ Ajd - 0.5 * (Ajd @ Ai @ rho + rho @ Ajd @ Ai))
                c = arrs["heat"][i, j]
                out = out + c * (Aid @ rho @ Aj - 0.5 * (Aj @ Aid @ rho + rho @ Aj @ Aid))
                c = arrs["squeeze"][i, j]
                out = out + c * (Aid @ rho @ Ajd - 0.5 * (Ajd @ Aid @ rho + rho @ Ajd @ Aid))
                out = out + np.conj(c) * (Aj @ rho @ Ai - 0.5 * (Ai @ Aj @ rho + rho @ Ai @ Aj))
        return out

    return rhs


def superoperator_matrix(f: Callable, d: int) -> np.ndarray:
    """Matrix of a linear map on d x d matrices, columns indexed by matrix units."""
    S = np.zeros((d * d, d * d), dtype=complex)
    for k in range(d * d):
        E = np.zeros(d * d, dtype=complex)
        E[k] = 1.0
        S[:, k] = np.asarray(f(E.reshape(d, d))).ravel()
    return S


def generator_superoperator(L: LindbladGenerator) -> np.ndarray:
    """Superoperator of the reference double-loop evaluation."""
    d = L.H.shape[0]
    return superoperator_matrix(lambda E: apply_super(L, StateDM(E, L.dims, check=False)), d)


def fit_decay(times: np.ndarray, populations: np.ndarray) -> float:
    """Least-squares slope of -log(population) against time."""
    p = np.asarray(populations, dtype=float)
    keep = p > 1e-12
    slope = np.polyfit(np.asarray(times)[keep], np.log(p[keep]), 1)[0]
    return float(-slope)


def fit_frequency(times: np.ndarray, coherence: np.ndarray) -> float:
    """Angular frequency of a decaying coherence c(t) ~ exp((-i w - r/2) t) from its unwrapped phase."""
    ph = np.unwrap(np.angle(np.asarray(coherence)))
    return float(-np.polyfit(np.asarray(times), ph, 1)[0])
