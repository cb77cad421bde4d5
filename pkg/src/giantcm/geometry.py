"""Emitters, coupling points and the operators they induce.

Coupling points are relabelled left to right by a single index ``nu``.
Each carries a phase-dressed copy of its emitter's ladder operator, one for
right-going modes (phase ``exp(-i phi)``) and one for left-going modes
(phase ``exp(+i phi)``).  Indices are 0-based throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidLayoutError
from .operators import HilbertDims, Operator, embed, make_ladder


@dataclass(frozen=True)
class EmitterSpec:
    kind: str = "qubit"
    cutoff: int = 2
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("qubit", "boson"):
            raise InvalidLayoutError(f"unknown emitter kind {self.kind!r}")
        if self.kind == "qubit":
            object.__setattr__(self, "cutoff", 2)
        elif int(self.cutoff) < 2:
            raise InvalidLayoutError(f"boson cutoff must be >= 2, got {self.cutoff}")

    @property
    def dim(self) -> int:
        return self.cutoff

    def ladder(self) -> Operator:
        return make_ladder(self.kind, self.cutoff)


@dataclass(frozen=True)
class CouplingPoint:
    """Where leg ``leg`` of emitter ``emitter`` touches the waveguide.

    ``tau`` is the time coordinate (units of 1/gamma); ``phi`` the phase
    k0*x, kept independent of ``tau`` and never reduced mod 2pi.
    """

    emitter: int
    tau: float
    phi: float = 0.0
    leg: int | None = None

    def __post_init__(self):
        if not np.isfinite(self.tau) or self.tau < 0:
            raise InvalidLayoutError(f"tau must be finite and >= 0, got {self.tau}")
        if not np.isfinite(self.phi):
            raise InvalidLayoutError(f"phi must be finite, got {self.phi}")


@dataclass(frozen=True)
class Layout:
    emitters: tuple
    points: tuple
    gamma: float = 1.0
    gamma_prime: float = 0.0

    def __post_init__(self):
        emitters = tuple(self.emitters)
        if not emitters:
            raise InvalidLayoutError("layout needs at least one emitter")
        labels = [e.label or f"e{j}" for j, e in enumerate(emitters)]
        if len(set(labels)) != len(labels):
            raise InvalidLayoutError(f"emitter labels must be unique, got {labels}")
        emitters = tuple(
            e if e.label else EmitterSpec(e.kind, e.cutoff, lab) for e, lab in zip(emitters, labels)
        )
        points = sorted(self.points, key=lambda p: p.tau)
        for a, b in zip(points, points[1:]):
            if a.tau == b.tau:
                raise InvalidLayoutError(
                    f"coupling points share tau={a.tau}; colocated points are not allowed, "
                    "use distinct tau with equal phi"
                )
        for p in points:
            if not 0 <= p.emitter < len(emitters):
                raise InvalidLayoutError(f"coupling point references unknown emitter {p.emitter}")
        missing = set(range(len(emitters))) - {p.emitter for p in points}
        if missing:
            raise InvalidLayoutError(f"emitters {sorted(missing)} have no coupling point")
        # legs numbered left to right within each emitter unless given
        counters = [0] * len(emitters)
        numbered = []
        for p in points:
            leg = counters[p.emitter] if p.leg is None else int(p.leg)
            counters[p.emitter] += 1
            numbered.append(CouplingPoint(p.emitter, float(p.tau), float(p.phi), leg))
        keys = [(p.emitter, p.leg) for p in numbered]
        if len(set(keys)) != len(keys):
            raise InvalidLayoutError("duplicate (emitter, leg) pairs")
        if self.gamma < 0 or self.gamma_prime < 0 or self.gamma + self.gamma_prime <= 0:
            raise InvalidLayoutError(
                f"need gamma, gamma_prime >= 0 with positive sum, got {self.gamma}, {self.gamma_prime}"
            )
        object.__setattr__(self, "emitters", emitters)
        object.__setattr__(self, "points", tuple(numbered))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "gamma_prime", float(self.gamma_prime))

    @property
    def dims(self) -> HilbertDims:
        return HilbertDims(tuple(e.dim for e in self.emitters))

    @property
    def labels(self) -> list:
        return [e.label for e in self.emitters]

    @property
    def bidirectional(self) -> bool:
        return self.gamma_prime > 0

    @property
    def spread(self) -> float:
        """tau_N - tau_1."""
        return self.points[-1].tau - self.points[0].tau

    def with_phases(self, phis: Sequence[float]) -> "Layout":
        pts = [CouplingPoint(p.emitter, p.tau, float(phi), p.leg) for p, phi in zip(self.points, phis)]
        return Layout(self.emitters, tuple(pts), self.gamma, self.gamma_prime)


def make_layout(owners: Sequence[int], phis: Sequence[float] | None = None, *,
                gamma: float = 1.0, gamma_prime: float = 0.0, taus=None,
                kind: str = "qubit", cutoff: int = 2) -> Layout:
    """Convenience builder: point ``nu`` belongs to emitter ``owners[nu]``.

    Default taus are ``1e-6 * (nu + 1)``; ordering is all that matters in the
    negligible-delay regime.
    """
    n_em = max(owners) + 1
    phis = [0.0] * len(owners) if phis is None else list(phis)
    taus = [1e-6 * (nu + 1) for nu in range(len(owners))] if taus is None else list(taus)
    emitters = tuple(EmitterSpec(kind, cutoff, f"e{j}") for j in range(n_em))
    pts = tuple(CouplingPoint(j, t, p) for j, t, p in zip(owners, taus, phis))
    return Layout(emitters, pts, gamma, gamma_prime)


@dataclass(frozen=True)
class PointOrdering:
    J: tuple  # emitter of point nu
    L: tuple  # leg of point nu
    index: dict = field(compare=False)  # (j, l) -> nu

    @property
    def n_points(self) -> int:
        return len(self.J)

    def legs_per_emitter(self, n_emitters: int) -> list:
        return [self.J.count(j) for j in range(n_emitters)]


def order_points(layout: Layout) -> PointOrdering:
    """Left-to-right labelling nu and the maps nu -> (j, l) and back."""
    taus = [p.tau for p in layout.points]
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise InvalidLayoutError("coupling points must have strictly increasing tau")
    J = tuple(p.emitter for p in layout.points)
    L = tuple(p.leg for p in layout.points)
    index = {(j, l): nu for nu, (j, l) in enumerate(zip(J, L))}
    return PointOrdering(J, L, index)


def classify_topology(J: Sequence[int]) -> str | None:
    """Serial / nested / braided for two emitters with two legs each, else None."""
    relabel = {}
    seq = []
    for j in J:
        relabel.setdefault(j, len(relabel))
        seq.append(relabel[j])
    return {
        (0, 0, 1, 1): "serial",
        (0, 1, 1, 0): "nested",
        (0, 1, 0, 1): "braided",
    }.get(tuple(seq))


@dataclass(frozen=True)
class CollectiveOps:
    """Dressed point operators, collective operators and H_vac on the emitter space."""

    A_nu: tuple
    Ap_nu: tuple
    A: Operator
    Ap: Operator
    Hvac: Operator
    gamma: float
    gamma_prime: float
    local: tuple  # embedded bare ladder operator of every emitter

    @property
    def dims(self) -> HilbertDims:
        return self.A.dims


def _local_ladders(layout: Layout) -> tuple:
    dims = layout.dims
    return tuple(embed(e.ladder(), j, dims) for j, e in enumerate(layout.emitters))


def build_dressed_ops(layout: Layout):
    """(A_nu, Ap_nu, A, Ap) with A_nu = A_J exp(-i phi), Ap_nu = A_J exp(+i phi)."""
    order = order_points(layout)
    local = _local_ladders(layout)
    A_nu = tuple(local[j] * np.exp(-1j * p.phi) for j, p in zip(order.J, layout.points))
    Ap_nu = tuple(local[j] * np.exp(1j * p.phi) for j, p in zip(order.J, layout.points))
    return A_nu, Ap_nu, sum(A_nu[1:], A_nu[0]), sum(Ap_nu[1:], Ap_nu[0])


def build_hvac(layout: Layout, A_nu=None, Ap_nu=None) -> Operator:
    """Chirality-induced dipole-dipole Hamiltonian.

    H = (i/2) sum_{nu > nu'} (g A_nu'^+ A_nu + g' Ap_nu^+ Ap_nu' - h.c.)
    """
    if A_nu is None or Ap_nu is None:
        A_nu, Ap_nu, _, _ = build_dressed_ops(layout)
    g, gp = layout.gamma, layout.gamma_prime
    X = np.zeros(A_nu[0].shape, dtype=complex)
    for nu in range(len(A_nu)):
        for nup in range(nu):
            X += g * (A_nu[nup].data.conj().T @ A_nu[nu].data)
            if gp:
                X += gp * (Ap_nu[nu].data.conj().T @ Ap_nu[nup].data)
    H = 0.5j * (X - X.conj().T)
    return Operator(H, A_nu[0].dims)


def build_collective_ops(layout: Layout) -> CollectiveOps:
    A_nu, Ap_nu, A, Ap = build_dressed_ops(layout)
    return CollectiveOps(
        A_nu=A_nu,
        Ap_nu=Ap_nu,
        A=A,
        Ap=Ap,
        Hvac=build_hvac(layout, A_nu, Ap_nu),
        gamma=layout.gamma,
        gamma_prime=layout.gamma_prime,
        local=_local_ladders(layout),
    )


def collective_weights(layout: Layout):
    """Complex weights u, u' with A = sum_j u_j A_j and A' = sum_j u'_j A_j."""
    n = len(layout.emitters)
    u = np.zeros(n, dtype=complex)
    up = np.zeros(n, dtype=complex)
    for p in layout.points:
        u[p.emitter] += np.exp(-1j * p.phi)
        up[p.emitter] += np.exp(1j * p.phi)
    return u, up
