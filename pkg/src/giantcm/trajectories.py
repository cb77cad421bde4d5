"""Photodetection unravelings: Kraus operators, effective Hamiltonian and jumps, Monte Carlo trajectories.

Random numbers come from one Philox stream per trajectory, keyed by the
master seed and the trajectory index::

    np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))

Each trajectory draws ``n_steps`` uniforms up front, so results do not depend
on how trajectories are grouped or scheduled.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .collision import CollisionConfig, _bin_getter, collision_unitary, joint_space
from .errors import InvalidArgumentError, InvalidStateError, NonVacuumLeadingError, NumericalError
from .field import TimeBinState
from .geometry import CollectiveOps
from .operators import Operator, StateDM, make_ladder

PROB_TOL = 1e-8


@dataclass(frozen=True)
class DetectionScheme:
    """Measurement basis of a bin; columns of ``basis`` are the states |k>.

    For bidirectional fields the basis acts on right x left bin modes and
    ``labels`` holds (k, k') pairs.
    """

    basis: np.ndarray
    name: str = "custom"
    labels: tuple = ()
    cutoff: int = 0
    bidirectional: bool = False

    def __post_init__(self):
        B = np.asarray(self.basis, dtype=complex)
        if B.ndim != 2 or B.shape[0] != B.shape[1]:
            raise InvalidArgumentError("detection basis must be a square matrix")
        if not np.allclose(B.conj().T @ B, np.eye(B.shape[0]), atol=1e-10):
            raise InvalidArgumentError("detection basis is not unitary to 1e-10")
        n_modes = 2 if self.bidirectional else 1
        cutoff = self.cutoff or round(B.shape[0] ** (1.0 / n_modes))
        if cutoff ** n_modes != B.shape[0]:
            raise InvalidArgumentError("basis size does not match the bin cutoff")
        labels = self.labels or (tuple(divmod(i, cutoff) for i in range(B.shape[0])) if self.bidirectional
                                 else tuple(range(B.shape[0])))
        B.setflags(write=False)
        object.__setattr__(self, "basis", B)
        object.__setattr__(self, "cutoff", cutoff)
        object.__setattr__(self, "labels", tuple(labels))

    @classmethod
    def photon_counting(cls, cutoff: int, bidirectional: bool = False) -> "DetectionScheme":
        d = cutoff ** (2 if bidirectional else 1)
        return cls(np.eye(d), "photon-counting", cutoff=cutoff, bidirectional=bidirectional)

    @property
    def n_outcomes(self) -> int:
        return self.basis.shape[1]


@dataclass
class TrajectoryRecord:
    seed: int
    index: int
    events: list  # (step n, outcome label)
    times: np.ndarray
    states: np.ndarray  # (n_snapshots, d_sys), normalized
    weight: float  # sum of log outcome probabilities

    def click_times(self, dt: float) -> np.ndarray:
        return np.array([n * dt for n, _ in self.events])


def rng_for(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


# -- bins and Kraus operators --------------------------------------------------

def _bin_vector(bins) -> np.ndarray:
    if isinstance(bins, TimeBinState):
        bins = (bins,)
    vec = None
    for b in bins:
        if not b.is_pure:
            raise InvalidStateError("pure bin state required; use mixed_bin_kraus for mixed bins")
        vec = b.vector if vec is None else np.kron(vec, b.vector)
    return vec


def _u_blocks(U: Operator, d_bin: int) -> np.ndarray:
    d_s = U.shape[0] // d_bin
    if d_s * d_bin != U.shape[0]:
        raise InvalidArgumentError("unitary size is not a multiple of the bin dimension")
    return U.data.reshape(d_s, d_bin, d_s, d_bin)


def kraus(U: Operator, chi, scheme: DetectionScheme, k: int | None = None):
    """K_k = <k|U|chi> on the system; all outcomes when ``k`` is None."""
    vec = chi if isinstance(chi, np.ndarray) else _bin_vector(chi)
    d_bin = scheme.basis.shape[0]
    if len(vec) != d_bin:
        raise InvalidArgumentError("bin state size does not match the detection scheme")
    R = _u_blocks(U, d_bin)
    V = np.einsum("ajbl,l->ajb", R, vec)  # U|chi>, bin index in the middle
    Ks = np.einsum("jk,ajb->kab", scheme.basis.conj(), V)
    if k is not None:
        return Operator(Ks[k], None)
    return [Operator(K) for K in Ks]


def mixed_bin_kraus(U: Operator, eta: TimeBinState, scheme: DetectionScheme, tol: float = 1e-15) -> list:
    """[(k, kappa, q_kappa, K)] with K_{k,kappa} = sqrt(q_kappa) <k|U|chi_kappa>."""
    q, vecs = eta.spectral(tol)
    out = []
    for kap, (qk, v) in enumerate(zip(q, vecs.T)):
        for k, K in enumerate(kraus(U, v, scheme)):
            out.append((k, kap, float(qk), K * math.sqrt(qk)))
    return out


def completeness_error(Ks: Sequence[Operator]) -> float:
    d = Ks[0].shape[0]
    S = sum(K.data.conj().T @ K.data for K in Ks)
    return float(np.max(np.abs(S - np.eye(d))))


@dataclass(frozen=True)
class BinExpansion:
    """|chi> = |0> + chi1 sqrt(dt) + chi2 dt on the full (one- or two-mode) bin space."""

    chi1: np.ndarray
    chi2: np.ndarray
    modes: int
    cutoff: int


def bin_expansion(chi) -> BinExpansion:
    if isinstance(chi, BinExpansion):
        return chi
    if isinstance(chi, TimeBinState):
        chi = (chi,)
    chi = tuple(chi)
    for c in chi:
        if not c.vacuum_leading:
            raise NonVacuumLeadingError(
                "bin state has no vacuum-leading expansion (squeezed or thermal bins cannot be unravelled)"
            )
    c = chi[0].cutoff
    if len(chi) == 1:
        return BinExpansion(np.asarray(chi[0].chi1), np.asarray(chi[0].chi2), 1, c)
    if len(chi) != 2 or chi[1].cutoff != c:
        raise InvalidArgumentError("bidirectional expansion needs two bins of equal cutoff")
    z = np.zeros(c, dtype=complex)
    z[0] = 1.0
    a1, a2 = np.asarray(chi[0].chi1), np.asarray(chi[0].chi2)
    b1, b2 = np.asarray(chi[1].chi1), np.asarray(chi[1].chi2)
    chi1 = np.kron(a1, z) + np.kron(z, b1)
    chi2 = np.kron(a2, z) + np.kron(a1, b1) + np.kron(z, b2)
    return BinExpansion(chi1, chi2, 2, c)


def _bin_ladders(cutoff: int, modes: int):
    b = make_ladder("boson", cutoff).data
    if modes == 1:
        return [b]
    eye = np.eye(cutoff)
    return [np.kron(b, eye), np.kron(eye, b)]


def kraus_expansion(co: CollectiveOps, chi, scheme: DetectionScheme):
    """(K0, K1, K2) per outcome with K_k = K0 + K1 sqrt(dt) + K2 dt + O(dt^{3/2}).

    Obtained from U = 1 - i W sqrt(dt) - (i H_vac + W^2/2) dt with
    W = sqrt(g)(A b^+ + A^+ b) + sqrt(g')(A' b'^+ + A'^+ b'), keeping all
    bin matrix elements (including <k|W^2|0> on two-photon outcomes).
    """
    ex = bin_expansion(chi)
    d_bin = ex.cutoff ** ex.modes
    if scheme.basis.shape[0] != d_bin:
        raise InvalidArgumentError("detection scheme does not match the bin space")
    d_s = co.dims.total
    I_s = np.eye(d_s)
    sys_ops = [(math.sqrt(co.gamma), co.A.data)]
    if ex.modes == 2:
        sys_ops.append((math.sqrt(co.gamma_prime), co.Ap.data))
    W = np.zeros((d_s * d_bin,) * 2, dtype=complex)
    for (rate, A), b in zip(sys_ops, _bin_ladders(ex.cutoff, ex.modes)):
        X = rate * np.kron(A, b.conj().T)
        W += X + X.conj().T
    W2 = W @ W
    vac = np.zeros(d_bin, dtype=complex)
    vac[0] = 1.0

    def elem(op, ket):
        R = op.reshape(d_s, d_bin, d_s, d_bin)
        return np.einsum("jk,ajbl,l->kab", scheme.basis.conj(), R, ket)

    Bc = scheme.basis.conj().T  # row k = <k|
    K0 = np.einsum("k,ab->kab", Bc @ vac, I_s)
    K1 = np.einsum("k,ab->kab", Bc @ ex.chi1, I_s) - 1j * elem(W, vac)
    K2 = (np.einsum("k,ab->kab", Bc @ ex.chi2, I_s) - 1j * elem(W, ex.chi1)
          - 1j * np.einsum("k,ab->kab", Bc @ vac, co.Hvac.data) - 0.5 * elem(W2, vac))
    return K0, K1, K2


def kraus_expansion_closed_form(co: CollectiveOps, chi, scheme: DetectionScheme):
    """Closed-form expansion written in terms of <k|0>, <k|1>, <k|chi1>, <k|b|chi1>.

    Differs from :func:`kraus_expansion` only on two-photon outcomes, where
    the latter also carries the -(1/2)<k|W^2|0> contribution.
    """
    ex = bin_expansion(chi)
    c = ex.cutoff
    Bc = scheme.basis.conj().T
    b = make_ladder("boson", c).data
    A, Ad = co.A.data, co.A.data.conj().T
    Ap, Apd = co.Ap.data, co.Ap.data.conj().T
    g, gp = math.sqrt(co.gamma), math.sqrt(co.gamma_prime)
    HA = co.Hvac.data
    d_s = A.shape[0]
    I = np.eye(d_s)
    e0 = np.eye(c)[0]
    e1 = np.eye(c)[1]
    K0, K1, K2 = [], [], []
    if ex.modes == 1:
        x1, x2 = ex.chi1, ex.chi2
        for kv in Bc:
            k0, k1 = kv @ e0, kv @ e1
            K0.append(k0 * I)
            K1.append((kv @ x1) * I - 1j * g * k1 * A)
            K2.append((kv @ x2) * I - 1j * (g * ((kv @ b @ x1) * Ad + (kv @ b.conj().T @ x1) * A)
                                            + k0 * (HA - 0.5j * co.gamma * Ad @ A)))
        return np.array(K0), np.array(K1), np.array(K2)
    if not isinstance(chi, (tuple, list)):
        raise InvalidArgumentError("closed form needs the (right, left) bin pair")
    a1, a2 = np.asarray(chi[0].chi1), np.asarray(chi[0].chi2)
    p1, p2 = np.asarray(chi[1].chi1), np.asarray(chi[1].chi2)
    for kv in Bc:
        M = kv.reshape(c, c)  # <k,k'| as a c x c array: M[k, k']
        def ov(x, y):
            return x @ M @ y
        K0.append(ov(e0, e0) * I)
        K1.append((ov(e0, p1) + ov(a1, e0)) * I
                  - 1j * (g * ov(e1, e0) * A + gp * ov(e0, e1) * Ap))
        K2.append((ov(e0, p2) + ov(a2, e0) + ov(a1, p1)) * I
                  - 1j * (ov(e0, e0) * HA - 0.5j * (co.gamma * ov(e0, e0) * Ad @ A
                                                     + co.gamma_prime * ov(e0, e0) * Apd @ Ap
                                                     + 2 * g * gp * ov(e1, e1) * Ap @ A))
                  - 1j * (g * ((ov(e1, p1) + ov(b.conj().T @ a1, e0)) * A + ov(b @ a1, e0) * Ad)
                          + gp * ((ov(a1, e1) + ov(e0, b.conj().T @ p1)) * Ap + ov(e0, b @ p1) * Apd)))
    return np.array(K0), np.array(K1), np.array(K2)


def effective_ops(co: CollectiveOps, chi, scheme: DetectionScheme | None = None):
    """(H_eff, {outcome label: J}) for vacuum-leading bins; outcome 0 / (0, 0) omitted."""
    ex = bin_expansion(chi)
    A, Ap = co.A.data, co.Ap.data
    bs = _bin_ladders(ex.cutoff, ex.modes)
    vac = np.zeros(ex.cutoff ** ex.modes, dtype=complex)
    vac[0] = 1.0
    X = 0.5 * math.sqrt(co.gamma) * (vac @ bs[0] @ ex.chi1) * A.conj().T
    if ex.modes == 2:
        X = X + 0.5 * math.sqrt(co.gamma_prime) * (vac @ bs[1] @ ex.chi1) * Ap.conj().T
    H = co.Hvac.data + X + X.conj().T
    if scheme is None:
        scheme = DetectionScheme.photon_counting(ex.cutoff, ex.modes == 2)
    Bc = scheme.basis.conj().T
    I = np.eye(A.shape[0])
    jumps = {}
    for label, kv in zip(scheme.labels, Bc):
        J = (kv @ ex.chi1) * I - 1j * math.sqrt(co.gamma) * (kv @ bs[0].conj().T @ vac) * A
        if ex.modes == 2:
            J = J - 1j * math.sqrt(co.gamma_prime) * (kv @ bs[1].conj().T @ vac) * Ap
        if label in (0, (0, 0)):
            continue
        if np.any(J):
            jumps[label] = Operator(J, co.dims)
    return Operator(H, co.dims), jumps


def unraveled_rhs(H: Operator, jumps) -> Callable:
    """rho -> -i[H, rho] + sum_k D_{J_k}[rho]."""
    Hm = H.data
    Js = [J.data for J in (jumps.values() if isinstance(jumps, dict) else jumps)]

    def rhs(rho):
        out = -1j * (Hm @ rho - rho @ Hm)
        for J in Js:
            Jd = J.conj().T
            out = out + J @ rho @ Jd - 0.5 * (Jd @ J @ rho + rho @ Jd @ J)
        return out

    return rhs


def click_rate(rho, co: CollectiveOps, chi=None) -> float:
    """Probability rate of a single click: per-direction |chi1_1|^2 + interference + g<A^+A>."""
    r = rho.data if hasattr(rho, "data") else np.asarray(rho)
    if chi is None:
        chi = TimeBinState.vacuum(2)
    pairs = (chi,) if isinstance(chi, TimeBinState) else tuple(chi)
    ops = [(co.gamma, co.A.data), (co.gamma_prime, co.Ap.data)]
    total = 0.0
    for b, (rate, A) in zip(pairs, ops):
        if not b.vacuum_leading:
            raise NonVacuumLeadingError("click rate needs a vacuum-leading bin state")
        c1 = complex(b.chi1[1])
        Ad = A.conj().T
        eAd = np.trace(r @ Ad)
        term = 1j * math.sqrt(rate) * c1 * eAd
        total += abs(c1) ** 2 + 2 * term.real + rate * np.trace(r @ Ad @ A).real
    if len(pairs) == 1 and co.gamma_prime > 0:
        total += co.gamma_prime * np.trace(r @ co.Ap.data.conj().T @ co.Ap.data).real
    return float(total)


# -- Monte Carlo ----------------------------------------------------------------

class _KrausCache:
    """Kraus stacks (n_outcomes, d_s, d_s) per distinct bin object."""

    def __init__(self, U: Operator, scheme: DetectionScheme, bins, n_steps: int):
        self.U, self.scheme = U, scheme
        self.get = _bin_getter(bins, n_steps)
        self._cache = {}

    def __call__(self, n: int) -> np.ndarray:
        b = self.get(n)
        key = id(b) if not isinstance(b, tuple) else tuple(id(x) for x in b)
        hit = self._cache.get(key)
        if hit is None or hit[0] is not b:
            bins = b if isinstance(b, tuple) else (b,)
            for x in bins:
                if not x.vacuum_leading:
                    raise NonVacuumLeadingError("trajectories need vacuum-leading (vacuum or coherent) bins")
            Ks = np.array([K.data for K in kraus(self.U, _bin_vector(bins), self.scheme)])
            if len(self._cache) > 64:
                self._cache.clear()
            hit = (b, Ks)
            self._cache[key] = hit
        return hit[1]


def _run_batch(psi0, kraus_at, n_steps, stride, seed, indices):
    """Propagate trajectories ``indices`` together; returns per-trajectory data."""
    B = len(indices)
    u = np.stack([rng_for(seed, i).random(n_steps) for i in indices]) if B else np.zeros((0, n_steps))
    psi = np.tile(np.asarray(psi0, dtype=complex), (B, 1))
    n_snap = n_steps // stride + (1 if n_steps % stride else 0) + 1
    snaps = np.empty((n_snap, B, psi.shape[1]), dtype=complex)
    snaps[0] = psi
    events = [[] for _ in range(B)]
    logw = np.zeros(B)
    s = 1
    rows = np.arange(B)
    for n in range(1, n_steps + 1):
        Ks = kraus_at(n)
        phi = np.einsum("kij,bj->bki", Ks, psi)
        p = np.einsum("bki,bki->bk", phi.conj(), phi).real
        tot = p.sum(axis=1)
        bad = np.abs(tot - 1.0) > PROB_TOL
        if np.any(bad):
            raise NumericalError(
                f"outcome probabilities sum to {tot[bad][0]:.12f} at step {n}; raise the bin cutoff"
            )
        cum = np.cumsum(p, axis=1)
        k = np.minimum((cum < (u[:, n - 1] * tot)[:, None]).sum(axis=1), p.shape[1] - 1)
        # guard against selecting a zero-probability outcome through rounding
        zero = p[rows, k] <= 0
        if np.any(zero):
            k[zero] = np.argmax(p[zero], axis=1)
        pk = p[rows, k]
        psi = phi[rows, k] / np.sqrt(pk)[:, None]
        logw += np.log(pk)
        for bi in np.nonzero(k)[0]:
            events[bi].append((n, int(k[bi])))
        if n % stride == 0 or n == n_steps:
            snaps[s] = psi
            s += 1
    return snaps, events, logw


def _snapshot_times(n_steps: int, stride: int, dt: float) -> np.ndarray:
    steps = [0] + [n for n in range(1, n_steps + 1) if n % stride == 0 or n == n_steps]
    return np.array(steps) * dt


def _check_start(psi0, co: CollectiveOps) -> np.ndarray:
    psi = np.asarray(getattr(psi0, "data", psi0), dtype=complex)
    if psi.ndim != 1:
        raise InvalidStateError("trajectories start from a pure state vector")
    if len(psi) != co.dims.total:
        raise InvalidArgumentError("initial state does not match the layout dimension")
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1) > 1e-10:
        raise InvalidStateError(f"initial state norm {nrm} != 1")
    return psi


def _setup(co, config, scheme, bins):
    space = joint_space(co, config)
    if scheme is None:
        scheme = DetectionScheme.photon_counting(config.bin_cutoff, space.n_bins == 2)
    if scheme.basis.shape[0] != space.d_bin:
        raise InvalidArgumentError("detection scheme does not match the bin space")
    if bins is None:
        vac = TimeBinState.vacuum(config.bin_cutoff)
        bins = vac if space.n_bins == 1 else (vac, vac)
    U = collision_unitary(co, config)
    return scheme, _KrausCache(U, scheme, bins, config.n_steps)


def mc_run(psi0, co: CollectiveOps, config: CollisionConfig, seed: int, *, scheme: DetectionScheme | None = None,
           bins=None, index: int = 0) -> TrajectoryRecord:
    """One quantum trajectory sampled from exact Kraus operators at the bin cutoff."""
    psi = _check_start(psi0, co)
    scheme, kc = _setup(co, config, scheme, bins)
    snaps, events, logw = _run_batch(psi, kc, config.n_steps, config.stride, seed, [index])
    labels = scheme.labels
    ev = [(n, labels[k]) for n, k in events[0]]
    return TrajectoryRecord(int(seed), int(index), ev, _snapshot_times(config.n_steps, config.stride, config.dt),
                            snaps[:, 0, :], float(logw[0]))


@dataclass
class Accumulator:
    """Running (sum, sum of squares, count); merging is addition."""

    total: np.ndarray
    sumsq: np.ndarray
    count: int = 0

    @classmethod
    def empty(cls, shape) -> "Accumulator":
        return cls(np.zeros(shape), np.zeros(shape), 0)

    def add_samples(self, x: np.ndarray) -> None:
        """Add samples stacked along axis 0."""
        self.total = self.total + x.sum(axis=0)
        self.sumsq = self.sumsq + (x * x).sum(axis=0)
        self.count += x.shape[0]

    def merge(self, other: "Accumulator") -> "Accumulator":
        return Accumulator(self.total + other.total, self.sumsq + other.sumsq, self.count + other.count)

    @property
    def mean(self) -> np.ndarray:
        return self.total / self.count

    @property
    def stderr(self) -> np.ndarray:
        n = self.count
        if n < 2:
            return np.full_like(self.total, np.nan)
        var = np.maximum(self.sumsq / n - self.mean ** 2, 0.0) * n / (n - 1)
        return np.sqrt(var / n)


@dataclass
class EnsembleResult:
    times: np.ndarray
    rho: np.ndarray  # (n_snap, d, d) complex mean
    rho_stderr: np.ndarray  # (n_snap, d, d) complex: re/im standard errors in the real/imag parts
    observables: dict  # name -> (mean, stderr) arrays over snapshots
    clicks: np.ndarray  # clicks per trajectory
    n_traj: int
    records: list = field(default_factory=list)

    def states(self) -> list:
        return [StateDM(r, check=False) for r in self.rho]


def ensemble_average(psi0, co: CollectiveOps, config: CollisionConfig, n_traj: int, seed: int, *,
                     scheme: DetectionScheme | None = None, bins=None, observables: dict | None = None,
                     threads: int = 1, chunk: int = 256, keep_records: bool = False) -> EnsembleResult:
    """Average |psi><psi| snapshots over ``n_traj`` trajectories.

    Trajectories are processed in chunks (possibly on ``threads`` worker
    threads); chunk accumulators are merged in index order.
    """
    if n_traj < 1:
        raise InvalidArgumentError("n_traj must be >= 1")
    psi = _check_start(psi0, co)
    scheme, kc = _setup(co, config, scheme, bins)
    observables = observables or {}
    obs_mats = {name: np.asarray(getattr(o, "data", o)) for name, o in observables.items()}
    chunks = [list(range(s, min(s + chunk, n_traj))) for s in range(0, n_traj, chunk)]

    def work(idx):
        snaps, events, logw = _run_batch(psi, kc, config.n_steps, config.stride, seed, idx)
        dm = np.einsum("sbi,sbj->bsij", snaps, snaps.conj())
        acc_re = Accumulator.empty(dm.shape[1:])
        acc_im = Accumulator.empty(dm.shape[1:])
        acc_re.add_samples(dm.real)
        acc_im.add_samples(dm.imag)
        obs = {}
        for name, O in obs_mats.items():
            vals = np.einsum("sbi,ij,sbj->bs", snaps.conj(), O, snaps).real
            a = Accumulator.empty(vals.shape[1:])
            a.add_samples(vals)
            obs[name] = a
        clicks = np.array([len(e) for e in events])
        recs = []
        if keep_records:
            times = _snapshot_times(config.n_steps, config.stride, config.dt)
            recs = [TrajectoryRecord(int(seed), i, [(n, scheme.labels[k]) for n, k in ev], times, snaps[:, b, :],
                                     float(logw[b])) for b, (i, ev) in enumerate(zip(idx, events))]
        return acc_re, acc_im, obs, clicks, recs

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    acc_re, acc_im, obs, clicks, recs = parts[0]
    clicks = [clicks]
    for p in parts[1:]:
        acc_re = acc_re.merge(p[0])
        acc_im = acc_im.merge(p[1])
        obs = {k: obs[k].merge(p[2][k]) for k in obs}
        clicks.append(p[3])
        recs = recs + p[4]
    rho = acc_re.mean + 1j * acc_im.mean
    err = acc_re.stderr + 1j * acc_im.stderr
    return EnsembleResult(_snapshot_times(config.n_steps, config.stride, config.dt), rho, err,
                          {k: (v.mean, v.stderr) for k, v in obs.items()}, np.concatenate(clicks), n_traj, recs)


def coherent_bin_source(g, dt: float, cutoff: int, bidirectional: bool) -> Callable:
    """Callable n -> vacuum-leading coherent bin(s) for a drive-only GaussianInput."""
    from .field import ConstantAmplitude, bin_average, coherent_bin

    if not g.is_vacuum_leading:
        raise NonVacuumLeadingError("trajectories need vacuum or coherent input (N = M = 0)")
    constant = isinstance(g.alpha, ConstantAmplitude) and isinstance(g.alpha_p, ConstantAmplitude)
    cache = {}

    def make(n):
        r = coherent_bin(bin_average(g.alpha, (n - 1) * dt, dt), dt, cutoff)
        if not bidirectional:
            return r
        return r, coherent_bin(bin_average(g.alpha_p, (n - 1) * dt, dt), dt, cutoff)

    def source(n):
        if constant:
            if "b" not in cache:
                cache["b"] = make(1)
            return cache["b"]
        return make(n)

    return source
