"""Decoherence-free configurations: vanishing collective operators and the surviving H_vac."""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, InvalidStateError
from .geometry import CollectiveOps, Layout, build_collective_ops

DF_TOL = 1e-10
HVAC_ZERO_TOL = 1e-10
MAX_FREE_PHASES = 3
MIN_POINTS_PER_2PI = 8


def _ladder_scale(co: CollectiveOps) -> float:
    return max(np.linalg.norm(a.data, 2) for a in co.local)


def is_decoherence_free(co: CollectiveOps, tol: float = DF_TOL):
    """(df, ||A||, ||A'||); the tolerance is relative to the largest ||A_j||.

    With gamma' = 0 only A is tested.
    """
    scale = _ladder_scale(co)
    na = float(np.linalg.norm(co.A.data, 2)) if co.gamma > 0 else 0.0
    nap = float(np.linalg.norm(co.Ap.data, 2)) if co.gamma_prime > 0 else 0.0
    df = bool(na <= tol * scale and nap <= tol * scale)
    return df, na, nap


def df_hamiltonian(co: CollectiveOps, tol: float = DF_TOL):
    """H_vac of a DF layout, or the string "zero" when it vanishes."""
    df, na, nap = is_decoherence_free(co, tol)
    if not df:
        raise InvalidStateError(f"layout is not decoherence-free (|A|={na:.3g}, |A'|={nap:.3g})")
    if np.linalg.norm(co.Hvac.data, 2) <= HVAC_ZERO_TOL * _ladder_scale(co) ** 2:
        return "zero"
    return co.Hvac


@dataclass(frozen=True)
class ScanPoint:
    phases: tuple
    df: bool
    hvac_norm: float
    a_norm: float
    ap_norm: float

    @property
    def hvac_zero(self) -> bool:
        return self.hvac_norm <= HVAC_ZERO_TOL

    def to_json(self) -> dict:
        return {"phases": list(self.phases), "df": self.df, "hvac_norm": self.hvac_norm,
                "hvac_zero": self.hvac_zero if self.df else None}


def _phase_map(layout: Layout, free: Sequence[Sequence[float]], values):
    """phi_nu = sum_f free[nu][f] * values[f]; rows of zeros keep the layout's phase."""
    base = np.array([p.phi for p in layout.points])
    coeff = np.asarray(free, dtype=float)
    scanned = np.any(coeff != 0, axis=1)
    return np.where(scanned, coeff @ np.asarray(values, dtype=float), base)


def phase_scan(layout: Layout, free, grid: int | Sequence = 64, tol: float = DF_TOL, threads: int = 1,
               only_df: bool = False) -> list:
    """Evaluate DF and ||H_vac|| on a grid of free phases.

    ``free`` is an (n_points, n_free) coefficient matrix: point nu gets
    phase sum_f free[nu, f] theta_f, or keeps its own phase if its row is zero.  ``grid`` is either the
    number of points per free phase on [0, 2pi) or an explicit list of
    values.  Returns every grid point (or only DF ones with ``only_df``).
    """
    free = np.atleast_2d(np.asarray(free, dtype=float))
    if free.shape[0] != len(layout.points):
        free = free.T
    if free.shape[0] != len(layout.points):
        raise InvalidArgumentError("free-phase matrix needs one row per coupling point")
    n_free = free.shape[1]
    if n_free > MAX_FREE_PHASES:
        raise InvalidArgumentError(f"at most {MAX_FREE_PHASES} free phases, got {n_free}")
    if isinstance(grid, (int, np.integer)):
        if grid < MIN_POINTS_PER_2PI:
            raise InvalidArgumentError(f"grid needs >= {MIN_POINTS_PER_2PI} points per 2pi")
        axis = 2 * np.pi * np.arange(grid) / grid
    else:
        axis = np.asarray(grid, dtype=float)
        if len(axis) < MIN_POINTS_PER_2PI:
            raise InvalidArgumentError(f"grid needs >= {MIN_POINTS_PER_2PI} points per 2pi")
    combos = list(itertools.product(axis, repeat=n_free))

    def evaluate(values):
        lay = layout.with_phases(_phase_map(layout, free, values))
        co = build_collective_ops(lay)
        df, na, nap = is_decoherence_free(co, tol)
        return ScanPoint(tuple(float(v) for v in values), df, float(np.linalg.norm(co.Hvac.data, 2)), na, nap)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            pts = list(ex.map(evaluate, combos))
    else:
        pts = [evaluate(c) for c in combos]
    return [p for p in pts if p.df] if only_df else pts


def uniform_phase_template(layout: Layout, offset: int = 0) -> np.ndarray:
    """Single free phase with phi_nu = (nu + offset) * theta."""
    return np.arange(len(layout.points), dtype=float).reshape(-1, 1) + offset
