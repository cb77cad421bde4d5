"""Collision-model propagation: system plus one fresh time bin (two when bidirectional) per step.

Joint-space ordering is ``emitters..., right-going bin[, left-going bin]``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .errors import InvalidArgumentError, InvalidStateError, NumericalError
from .field import ConstantAmplitude, GaussianInput, TimeBinState, bin_moments, gaussian_bin_state
from .geometry import CollectiveOps, Layout, build_dressed_ops, order_points
from .operators import HilbertDims, Operator, StateDM, _partial_trace_array, expm, make_ladder

log = logging.getLogger(__name__)

LEAKAGE_TOL = 1e-6


@dataclass(frozen=True)
class CollisionConfig:
    """Collision-run settings.

    ``mode=None`` picks bidirectional whenever gamma' > 0.
    """

    dt: float
    n_steps: int = 1
    bin_cutoff: int = 3
    mode: str | None = None
    update: str = "exact_unitary"
    stride: int = 1
    leakage_tol: float = LEAKAGE_TOL

    def __post_init__(self):
        if not np.isfinite(self.dt) or self.dt <= 0:
            raise InvalidArgumentError(f"dt must be positive, got {self.dt}")
        if int(self.n_steps) < 1:
            raise InvalidArgumentError(f"n_steps must be >= 1, got {self.n_steps}")
        if int(self.bin_cutoff) < 2:
            raise InvalidArgumentError(f"bin cutoff must be >= 2, got {self.bin_cutoff}")
        if self.mode not in (None, "unidirectional", "bidirectional"):
            raise InvalidArgumentError(f"unknown mode {self.mode!r}")
        if self.update not in ("exact_unitary", "second_order"):
            raise InvalidArgumentError(f"unknown update {self.update!r}")
        if int(self.stride) < 1:
            raise InvalidArgumentError(f"stride must be >= 1, got {self.stride}")

    def resolved_mode(self, co: CollectiveOps) -> str:
        if self.mode is not None:
            if self.mode == "unidirectional" and co.gamma_prime > 0:
                raise InvalidArgumentError("unidirectional mode with gamma_prime > 0")
            return self.mode
        return "bidirectional" if co.gamma_prime > 0 else "unidirectional"

    def check_regime(self, co: CollectiveOps, layout: Layout | None = None) -> None:
        """Enforce gamma*dt <= 0.1 (warn above 0.01) and warn if delays are not negligible."""
        g = max(co.gamma, co.gamma_prime)
        if g * self.dt > 0.1:
            raise InvalidArgumentError(f"gamma*dt = {g * self.dt:.3g} exceeds 0.1")
        if g * self.dt > 0.01:
            warnings.warn(f"gamma*dt = {g * self.dt:.3g} > 0.01; collision error may be visible",
                          stacklevel=3)
        if layout is not None and layout.spread / self.dt > 0.1:
            warnings.warn(
                f"coupling-point spread {layout.spread:.3g} is not small against dt={self.dt:.3g}",
                stacklevel=3,
            )


@dataclass(frozen=True)
class JointSpace:
    """System emitters followed by one or two bin modes."""

    sys_dims: HilbertDims
    cutoff: int
    n_bins: int

    @property
    def dims(self) -> HilbertDims:
        return self.sys_dims + HilbertDims((self.cutoff,) * self.n_bins)

    @property
    def d_sys(self) -> int:
        return self.sys_dims.total

    @property
    def d_bin(self) -> int:
        return self.cutoff ** self.n_bins

    def sys_op(self, op: Operator) -> np.ndarray:
        return np.kron(op.data, np.eye(self.d_bin))

    def bin_ladder(self, which: int) -> np.ndarray:
        b = make_ladder("boson", self.cutoff).data
        eye = np.eye(self.cutoff)
        local = [b if i == which else eye for i in range(self.n_bins)]
        out = local[0]
        for m in local[1:]:
            out = np.kron(out, m)
        return np.kron(np.eye(self.d_sys), out)


def joint_space(co: CollectiveOps, config: CollisionConfig) -> JointSpace:
    n_bins = 2 if config.resolved_mode(co) == "bidirectional" else 1
    return JointSpace(co.dims, int(config.bin_cutoff), n_bins)


def build_vn(co: CollectiveOps, dt: float, space: JointSpace) -> Operator:
    """V_n = (1/sqrt(dt)) (sqrt(g) A^+ b + sqrt(g') A'^+ b' + h.c.) on the joint space."""
    if dt <= 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    A = space.sys_op(co.A)
    X = math.sqrt(co.gamma) * A.conj().T @ space.bin_ladder(0)
    if space.n_bins == 2:
        Ap = space.sys_op(co.Ap)
        X = X + math.sqrt(co.gamma_prime) * Ap.conj().T @ space.bin_ladder(1)
    V = (X + X.conj().T) / math.sqrt(dt)
    return Operator(V, space.dims)


def joint_hamiltonian(co: CollectiveOps, config: CollisionConfig):
    """(H_vac on the joint space, V_n) as Operators."""
    space = joint_space(co, config)
    H = Operator(space.sys_op(co.Hvac), space.dims)
    return H, build_vn(co, config.dt, space)


def collision_unitary(co: CollectiveOps, config: CollisionConfig) -> Operator:
    """U = exp(-i (H_vac + V_n) dt); the same for every step."""
    H, V = joint_hamiltonian(co, config)
    return expm(H + V, -1j * config.dt)


@dataclass(frozen=True)
class StepResult:
    system: StateDM
    bin_out: StateDM | tuple
    leakage: float
    flagged: bool


def _as_bins(bins, n_bins: int) -> tuple:
    if isinstance(bins, TimeBinState):
        bins = (bins,)
    bins = tuple(bins)
    if len(bins) != n_bins:
        raise InvalidArgumentError(f"expected {n_bins} bin state(s), got {len(bins)}")
    return bins


def _bin_product(bins: tuple) -> np.ndarray:
    eta = bins[0].state.data
    for b in bins[1:]:
        eta = np.kron(eta, b.state.data)
    return eta


def top_level_population(rho: np.ndarray, dims: Sequence[int], sites: Sequence[int]) -> float:
    """Largest population of the highest Fock level among ``sites``."""
    worst = 0.0
    for s in sites:
        red = _partial_trace_array(rho, dims, [s])
        worst = max(worst, float(red[-1, -1].real))
    return worst


def _split(joint: np.ndarray, space: JointSpace):
    dims = list(space.dims)
    n_sys = len(space.sys_dims)
    d_s, d_b = space.d_sys, space.d_bin
    r = joint.reshape(d_s, d_b, d_s, d_b)
    sys = np.einsum("aibi->ab", r)
    binred = np.einsum("iaib->ab", r)
    if space.n_bins == 1:
        outs = binred
    else:
        outs = tuple(_partial_trace_array(binred, [space.cutoff] * 2, [k]) for k in range(2))
    return sys, outs, dims, n_sys


def _finish(joint: np.ndarray, space: JointSpace, config: CollisionConfig, boson_sites) -> StepResult:
    sys, outs, dims, n_sys = _split(joint, space)
    leak = top_level_population(joint, dims, list(range(n_sys, len(dims))) + list(boson_sites))
    flagged = leak > config.leakage_tol
    sys_dm = StateDM(0.5 * (sys + sys.conj().T), space.sys_dims, check=False)
    if isinstance(outs, tuple):
        bout = tuple(StateDM(0.5 * (o + o.conj().T), check=False) for o in outs)
    else:
        bout = StateDM(0.5 * (outs + outs.conj().T), check=False)
    return StepResult(sys_dm, bout, leak, flagged)


def step(rho_s: StateDM, bins, co: CollectiveOps, config: CollisionConfig, U: Operator | None = None,
         boson_sites: Sequence[int] = ()) -> StepResult:
    """One collision: Tr_bin[U (rho_S x eta) U^+] and the post-collision bin state(s)."""
    space = joint_space(co, config)
    if rho_s.data.shape[0] != space.d_sys:
        raise InvalidArgumentError("system state does not match the layout dimension")
    bins = _as_bins(bins, space.n_bins)
    if any(b.cutoff != space.cutoff for b in bins):
        raise InvalidArgumentError("bin cutoff does not match config.bin_cutoff")
    U = collision_unitary(co, config) if U is None else U
    joint = np.kron(rho_s.data, _bin_product(bins))
    joint = U.data @ joint @ U.data.conj().T
    res = _finish(joint, space, config, boson_sites)
    if res.flagged:
        log.warning("top Fock level population %.2e exceeds %.0e", res.leakage, config.leakage_tol)
    return res


def second_order_update(sigma: np.ndarray, H: np.ndarray, V: np.ndarray, dt: float) -> np.ndarray:
    """sigma + (-i dt [H+V, sigma] + dt^2 (V sigma V - {V^2, sigma}/2))."""
    K = H + V
    V2 = V @ V
    d = -1j * dt * (K @ sigma - sigma @ K) + dt * dt * (V @ sigma @ V - 0.5 * (V2 @ sigma + sigma @ V2))
    return sigma + d


def second_order_step(sigma: StateDM, co: CollectiveOps, config: CollisionConfig) -> StateDM:
    """Literal second-order collision update on a joint state; may lose positivity for large dt."""
    H, V = joint_hamiltonian(co, config)
    if sigma.data.shape != H.shape:
        raise InvalidArgumentError("joint state does not match the collision space")
    out = second_order_update(sigma.data, H.data, V.data, config.dt)
    out = 0.5 * (out + out.conj().T)
    mineig = float(np.linalg.eigvalsh(out)[0])
    if mineig < -1e-10:
        log.warning("second-order update produced eigenvalue %.2e", mineig)
    return StateDM(out, H.dims, check=False)


@dataclass
class ConveyorResult:
    times: np.ndarray
    states: list
    bin_out: list | None
    leakage: np.ndarray
    flagged: bool
    min_eigenvalue: float = 0.0
    info: dict = field(default_factory=dict)


def gaussian_bin_source(g: GaussianInput, dt: float, cutoff: int, bidirectional: bool,
                        max_moment_error: float = 1e-4) -> Callable:
    """Callable n -> bin state(s) for step n (n = 1, 2, ...), cached when alpha is constant."""
    constant = isinstance(g.alpha, ConstantAmplitude) and isinstance(g.alpha_p, ConstantAmplitude)
    cache = {}

    def make(n):
        r, l = bin_moments(g, n * dt, dt)
        right = gaussian_bin_state(r, cutoff, max_moment_error=max_moment_error)
        if not bidirectional:
            return right
        return right, gaussian_bin_state(l, cutoff, max_moment_error=max_moment_error)

    def source(n):
        if constant:
            if "b" not in cache:
                cache["b"] = make(1)
            return cache["b"]
        return make(n)

    return source


def _bin_getter(source, n_steps: int) -> Callable:
    if callable(source):
        return source
    if isinstance(source, TimeBinState):
        return lambda n: source
    if isinstance(source, tuple) and len(source) == 2 and all(isinstance(s, TimeBinState) for s in source):
        return lambda n: source
    seq = list(source)
    if len(seq) < n_steps:
        raise InvalidArgumentError(f"bin source has {len(seq)} entries, need {n_steps}")
    return lambda n: seq[n - 1]


def run_conveyor(rho0: StateDM, bins, co: CollectiveOps, config: CollisionConfig, *,
                 keep_bins: bool = False, boson_sites: Sequence[int] = ()) -> ConveyorResult:
    """Sequential collisions with fresh bins; records every ``stride``-th system state.

    ``bins`` is a TimeBinState (repeated), a (right, left) pair, a sequence
    indexed by step, or a callable ``n -> bins`` with n starting at 1.
    """
    space = joint_space(co, config)
    get = _bin_getter(bins, config.n_steps)
    U = collision_unitary(co, config).data
    Ud = U.conj().T
    if config.update == "second_order":
        Hj, Vj = joint_hamiltonian(co, config)
    rho = rho0.data
    times, states, outs, leaks = [0.0], [rho0], [] if keep_bins else None, []
    flagged = False
    mineig = float(np.linalg.eigvalsh(rho)[0])
    for n in range(1, config.n_steps + 1):
        b = _as_bins(get(n), space.n_bins)
        joint = np.kron(rho, _bin_product(b))
        if config.update == "exact_unitary":
            joint = U @ joint @ Ud
        else:
            joint = second_order_update(joint, Hj.data, Vj.data, config.dt)
        res = _finish(joint, space, config, boson_sites)
        rho = res.system.data
        leaks.append(res.leakage)
        flagged |= res.flagged
        if keep_bins:
            outs.append(res.bin_out)
        if n % config.stride == 0 or n == config.n_steps:
            mineig = min(mineig, float(np.linalg.eigvalsh(rho)[0]))
            times.append(n * config.dt)
            states.append(res.system)
    if flagged:
        log.warning("top Fock level population reached %.2e (limit %.0e)", max(leaks), config.leakage_tol)
    if config.update == "exact_unitary" and mineig < -1e-8:
        raise NumericalError(f"system state lost positivity (min eigenvalue {mineig:.2e})")
    return ConveyorResult(np.array(times), states, outs, np.array(leaks), flagged, mineig)


# -- delayed coupling -------------------------------------------------------

@dataclass(frozen=True)
class DelayTerm:
    """One coupling term of the delayed collision Hamiltonian at step n."""

    point: int
    emitter: int
    direction: str  # "right" or "left"
    bin: int
    op: Operator  # dressed operator A_nu (right) or A'_nu (left)
    coupling: float  # sqrt(rate / dt)


def delay_indices(layout: Layout, dt: float, rtol: float = 1e-9) -> list:
    """Integers m_nu with tau_nu - tau_1 = m_nu dt."""
    if dt <= 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    tau0 = layout.points[0].tau
    ms = []
    for p in layout.points:
        x = (p.tau - tau0) / dt
        m = round(x)
        if abs(x - m) > rtol * max(1.0, abs(x)):
            raise InvalidArgumentError(
                f"delay {p.tau - tau0!r} is not an integer multiple of dt={dt!r}"
            )
        ms.append(int(m))
    return ms


def delayed_coupling_h(layout: Layout, n: int, dt: float) -> list:
    """Terms of H_n^(0): right-going point nu couples to bin n - m_nu, left-going to n + m_nu."""
    ms = delay_indices(layout, dt)
    order = order_points(layout)
    A_nu, Ap_nu, _, _ = build_dressed_ops(layout)
    terms = []
    for nu, m in enumerate(ms):
        if layout.gamma > 0:
            terms.append(DelayTerm(nu, order.J[nu], "right", n - m, A_nu[nu], math.sqrt(layout.gamma / dt)))
        if layout.gamma_prime > 0:
            terms.append(DelayTerm(nu, order.J[nu], "left", n + m, Ap_nu[nu],
                                   math.sqrt(layout.gamma_prime / dt)))
    return terms


def delayed_term_operator(terms: Sequence[DelayTerm], n_emitter_dims: HilbertDims, bin_keys: Sequence,
                          cutoff: int = 2) -> Operator:
    """Dense H_n^(0) on emitters x the listed bins (small cases only)."""
    keys = list(bin_keys)
    dims = n_emitter_dims + HilbertDims((cutoff,) * len(keys))
    H = np.zeros((dims.total, dims.total), dtype=complex)
    b = make_ladder("boson", cutoff).data
    for t in terms:
        k = keys.index((t.direction, t.bin))
        local = [np.eye(cutoff)] * len(keys)
        local[k] = b
        bop = local[0]
        for m in local[1:]:
            bop = np.kron(bop, m)
        X = t.coupling * np.kron(t.op.data.conj().T, bop)
        H += X + X.conj().T
    return Operator(H, dims)


@dataclass
class DelayedResult:
    times: np.ndarray
    emitter_amplitudes: np.ndarray  # (n_steps + 1, n_emitters)
    norms: np.ndarray
    bins: dict  # (direction, bin index) -> amplitude
    active_bins: int


def propagate_single_excitation(layout: Layout, dt: float, n_steps: int, emitter_amps=None,
                                bin_amps: dict | None = None, max_active_bins: int = 12) -> DelayedResult:
    """State-vector propagation in the one-excitation sector with delayed couplings.

    Emitter j contributes amplitude c_j on A_j^+|0>; bin photons are keyed by
    ("right" | "left", bin index).  Step n applies exp(-i H_n^(0) dt) on the
    emitters and the bins active at that step.
    """
    n_em = len(layout.emitters)
    c = np.zeros(n_em, dtype=complex) if emitter_amps is None else np.asarray(emitter_amps, dtype=complex).copy()
    if c.shape != (n_em,):
        raise InvalidArgumentError("emitter_amps must have one entry per emitter")
    photons = {} if bin_amps is None else {k: complex(v) for k, v in bin_amps.items()}
    norm0 = math.sqrt(np.vdot(c, c).real + sum(abs(v) ** 2 for v in photons.values()))
    if norm0 == 0:
        raise InvalidStateError("single-excitation state has zero norm")
    c /= norm0
    photons = {k: v / norm0 for k, v in photons.items()}
    amps, norms = [c.copy()], [1.0]
    active = 0
    for n in range(1, n_steps + 1):
        terms = delayed_coupling_h(layout, n, dt)
        keys = sorted({(t.direction, t.bin) for t in terms})
        active = max(active, len(keys))
        if len(keys) > max_active_bins:
            raise InvalidArgumentError(f"{len(keys)} simultaneously active bins exceed {max_active_bins}")
        dim = n_em + len(keys)
        H = np.zeros((dim, dim), dtype=complex)
        for t in terms:
            k = n_em + keys.index((t.direction, t.bin))
            # <bin|H|e_j>: right-going A_nu carries exp(-i phi), left-going exp(+i phi)
            phase = np.exp(-1j * layout.points[t.point].phi) if t.direction == "right" \
                else np.exp(1j * layout.points[t.point].phi)
            amp = t.coupling * phase
            H[k, t.emitter] += amp
            H[t.emitter, k] += np.conj(amp)
        vec = np.concatenate([c, [photons.get(key, 0.0) for key in keys]])
        vec = scipy.linalg.expm(-1j * dt * H) @ vec
        c = vec[:n_em]
        for key, v in zip(keys, vec[n_em:]):
            photons[key] = v
        amps.append(c.copy())
        norms.append(math.sqrt(np.vdot(c, c).real + sum(abs(v) ** 2 for v in photons.values())))
    return DelayedResult(np.arange(n_steps + 1) * dt, np.array(amps), np.array(norms), photons, active)


# -- second-order Magnus kernels ---------------------------------------------

def magnus_kernel(k: int, kp: int, n_quad: int = 400, squeeze: bool = False) -> complex:
    """Midpoint quadrature of int_0^1 int_0^1 sgn(y - x) e^{2 pi i (s k x - k' y)} dx dy.

    ``s = +1`` for the thermal (b^+ b) kernel and ``s = -1`` for the squeeze
    (b b) kernel, i.e. exp(-2 pi i (k x + k' y)).
    """
    x = (np.arange(n_quad) + 0.5) / n_quad
    s = -1 if squeeze else 1
    sg = np.sign(x[None, :] - x[:, None])  # rows x, columns y
    ex = np.exp(2j * np.pi * s * k * x)
    ey = np.exp(-2j * np.pi * kp * x)
    return complex(ex @ sg @ ey) / n_quad ** 2


def magnus_kernel_exact(k: int, kp: int) -> complex:
    """Closed form of the thermal kernel."""
    if k == 0:
        return 0.0 if kp == 0 else 1j / (np.pi * kp)
    return -1j / (np.pi * k) * (float(k == kp) - float(kp == 0))


def magnus_vanishing_check(kmax: int = 3, n_quad: int = 400) -> dict:
    """Residuals showing the k=0 second-order Magnus terms vanish.

    Returns the max |S(k,k') + S(k',k)| of the squeeze kernel (only its
    symmetric part multiplies b_k b_k'), |I(0,0)| of the thermal kernel, and
    the max deviation of the quadrature from the closed form.
    """
    ks = range(-kmax, kmax + 1)
    sym = max(abs(magnus_kernel(a, b, n_quad, True) + magnus_kernel(b, a, n_quad, True)) for a in ks for b in ks)
    dev = max(abs(magnus_kernel(a, b, n_quad) - magnus_kernel_exact(a, b)) for a in ks for b in ks)
    return {"squeeze_symmetric": sym, "thermal_k0": abs(magnus_kernel(0, 0, n_quad)), "quadrature_error": dev}
