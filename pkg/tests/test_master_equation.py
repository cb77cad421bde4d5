import math

import numpy as np
import pytest

from conftest import random_dm
from giantcm.errors import InadmissibleMomentsError, InvalidArgumentError
from giantcm.field import GaussianInput, TabulatedAmplitude
from giantcm.geometry import build_collective_ops, make_layout
from giantcm.master_equation import (
    LindbladGenerator,
    MasterEquation,
    build_generator,
    coefficient_arrays,
    coefficient_table,
    fit_decay,
    fit_frequency,
    generator_from_table,
    generator_superoperator,
    integrate,
    is_cpt,
    kossakowski_matrix,
    superoperator_matrix,
    unidirectional_rhs,
)
from giantcm.operators import StateDM

EXCITED = StateDM(np.diag([0.0, 1.0]))


def dissipator(J, rho):
    Jd = J.conj().T
    return J @ rho @ Jd - 0.5 * (Jd @ J @ rho + rho @ Jd @ J)


def lindblad_super(H, jumps, d):
    return superoperator_matrix(
        lambda r: -1j * (H @ r - r @ H) + sum(dissipator(J, r) for J in jumps), d)


def test_single_emitter_vacuum():
    g = 0.7
    co = build_collective_ops(make_layout([0], gamma=g))
    L = build_generator(None, co)
    np.testing.assert_allclose(L.H.data, np.zeros((2, 2)), atol=0)
    sm = np.array([[0, 1], [0, 0]], dtype=complex)
    expected = lindblad_super(np.zeros((2, 2)), [math.sqrt(g) * sm], 2)
    np.testing.assert_allclose(generator_superoperator(L), expected, atol=1e-14)
    np.testing.assert_allclose(superoperator_matrix(L.rhs, 2), expected, atol=1e-14)


@pytest.mark.parametrize("phi", [0.0, np.pi / 3, np.pi / 2, 2.0, np.pi])
def test_giant_atom_generator(phi):
    # gamma = gamma' = Gamma/2: rate 2 Gamma (1 + cos phi), frequency shift Gamma sin(phi)
    Gamma = 1.0
    lay = make_layout([0, 0], [0, phi], gamma=Gamma / 2, gamma_prime=Gamma / 2)
    L = build_generator(lay, None)
    sm = np.array([[0, 1], [0, 0]], dtype=complex)
    H = Gamma * math.sin(phi) * sm.conj().T @ sm
    J = math.sqrt(2 * Gamma * (1 + math.cos(phi))) * sm
    np.testing.assert_allclose(generator_superoperator(L), lindblad_super(H, [J], 2), atol=1e-12)
    arrs = coefficient_arrays(lay)
    assert arrs["decay"][0, 0].real == pytest.approx(2 * Gamma * (1 + math.cos(phi)), abs=1e-12)
    assert arrs["H"][0, 0].real == pytest.approx(Gamma * math.sin(phi), abs=1e-12)


def test_cascaded_pair_generator():
    g = 0.9
    lay = make_layout([0, 1], [0.4, 1.7], gamma=g)
    co = build_collective_ops(lay)
    a1, a2 = co.A_nu[0].data, co.A_nu[1].data
    H = 0.5j * g * (a1.conj().T @ a2 - a2.conj().T @ a1)
    expected = lindblad_super(H, [math.sqrt(g) * (a1 + a2)], 4)
    np.testing.assert_allclose(generator_superoperator(build_generator(lay, None)), expected, atol=1e-12)


def test_unidirectional_matches_independent_path(rng):
    lay = make_layout([0, 1, 0], rng.uniform(0, 6, 3), gamma=0.8)
    g = GaussianInput(alpha=0.3 - 0.2j, N=0.4, M=0.5 * np.exp(0.7j))
    co = build_collective_ops(lay)
    S1 = generator_superoperator(build_generator(None, co, g))
    S2 = superoperator_matrix(unidirectional_rhs(co, g), 4)
    np.testing.assert_allclose(S1, S2, atol=1e-12)


def test_compiled_matches_reference(rng):
    lay = make_layout([0, 1, 0, 1], rng.uniform(0, 6, 4), gamma=0.6, gamma_prime=0.3)
    g = GaussianInput(alpha=0.2, N=0.3, M=0.2j, alpha_p=-0.1, N_p=0.1, M_p=0.05)
    L = build_generator(lay, None, g)
    np.testing.assert_allclose(superoperator_matrix(L.rhs, 4), generator_superoperator(L), atol=1e-12)
    me = MasterEquation(build_collective_ops(lay), g)
    np.testing.assert_allclose(superoperator_matrix(lambda r: me(0.0, r), 4), generator_superoperator(L),
                               atol=1e-12)


def test_table_reconstructs_generator(rng):
    lay = make_layout([0, 1, 2, 1], rng.uniform(0, 6, 4), gamma=0.5, gamma_prime=0.4)
    g = GaussianInput(alpha=0.3j, N=0.2, M=0.3 * np.exp(1.1j), alpha_p=0.1, N_p=0.5, M_p=-0.4)
    S_table = superoperator_matrix(generator_from_table(lay, coefficient_arrays(lay, g)), 8)
    np.testing.assert_allclose(S_table, generator_superoperator(build_generator(lay, None, g)), atol=1e-12)


def test_braided_table_examples():
    Gamma = 1.0
    lay = make_layout([0, 1, 0, 1], [0, np.pi / 3, 2 * np.pi / 3, np.pi], gamma=0.5, gamma_prime=0.5)
    tab = coefficient_table(lay)
    assert tab["H[0][1]"][0] == pytest.approx(0.5 * Gamma * 3 * math.sqrt(3) / 2, abs=1e-12)
    lay = make_layout([0, 1, 0, 1], [0, np.pi / 2, np.pi, 3 * np.pi / 2], gamma=0.5, gamma_prime=0.5)
    arrs = coefficient_arrays(lay)
    np.testing.assert_allclose(arrs["decay"], np.zeros((2, 2)), atol=1e-12)
    assert arrs["H"][0, 1].real == pytest.approx(Gamma, abs=1e-12)


def test_dicke_limit():
    lay = make_layout([0, 1], [0.8, 0.8], gamma=0.5, gamma_prime=0.5)
    np.testing.assert_allclose(coefficient_arrays(lay)["decay"], np.ones((2, 2)), atol=1e-12)


def test_normal_emitter_table_random_positions(rng):
    Gamma = 1.0
    for _ in range(20):
        n = int(rng.integers(2, 4))
        x = np.sort(rng.uniform(0, 10, n))
        N = rng.uniform(0, 1)
        M = math.sqrt(N * (N + 1)) * rng.uniform() * np.exp(2j * np.pi * rng.uniform())
        lay = make_layout(list(range(n)), x, gamma=Gamma / 2, gamma_prime=Gamma / 2)
        arrs = coefficient_arrays(lay, GaussianInput(N=N, M=M, N_p=N, M_p=M))
        xm = np.subtract.outer(x, x)
        xp = np.add.outer(x, x)
        H = 0.5 * Gamma * np.sin(np.abs(xm))
        np.testing.assert_allclose(arrs["H"], H, atol=1e-12)
        np.testing.assert_allclose(arrs["decay"], Gamma * (N + 1) * np.cos(xm), atol=1e-12)
        np.testing.assert_allclose(arrs["heat"], Gamma * N * np.cos(xm), atol=1e-12)
        np.testing.assert_allclose(arrs["squeeze"], Gamma * M * np.cos(xp), atol=1e-12)


def test_kossakowski_vacuum_and_cpt():
    k = kossakowski_matrix(GaussianInput(), 0.7, 0.2)
    np.testing.assert_allclose(k, np.diag([0.7, 0, 0.2, 0]))
    ok, lam = is_cpt(k)
    assert ok and lam == pytest.approx(0.0, abs=1e-15)


def test_is_cpt_boundary():
    k = kossakowski_matrix(GaussianInput(N=1.0, M=math.sqrt(2)), 1.0, 0.0)
    ok, lam = is_cpt(k)
    assert ok and abs(lam) <= 1e-10
    k[0, 1] *= 1.01
    k[1, 0] *= 1.01
    ok, lam = is_cpt(k)
    assert not ok and lam < 0


@pytest.mark.parametrize("r", [0.2, 0.8, 1.5])
def test_squeezed_bath_boundary(r):
    g = GaussianInput(N=math.sinh(r) ** 2, M=np.exp(-0.4j) * math.sinh(r) * math.cosh(r))
    ok, lam = is_cpt(kossakowski_matrix(g, 1.0, 0.0))
    assert ok and lam <= 1e-10


def test_inadmissible_rejected():
    with pytest.raises(InadmissibleMomentsError):
        GaussianInput(N=1.0, M=1.01 * math.sqrt(2))


def test_integrate_decay():
    L = build_generator(make_layout([0]), None)
    res = integrate(L, EXCITED, 1.0, 1e-3, stride=100)
    assert res.states[-1].data[1, 1].real == pytest.approx(math.exp(-1), abs=1e-6)
    assert res.trace_drift <= 1e-9
    assert len(res.times) == 11


def test_integrate_zero_generator(rng):
    # serial giant atoms at pi: no dissipation and no H_vac
    lay = make_layout([0, 0, 1, 1], [0, np.pi, 0.2, 0.2 + np.pi])
    L = build_generator(lay, None)
    rho0 = StateDM(random_dm(rng, 4), (2, 2))
    np.testing.assert_allclose(integrate(L, rho0, 0.5, 1e-3).states[-1].data, rho0.data, atol=1e-12)


def test_integrate_giant_atom_fit():
    lay = make_layout([0, 0], [0, np.pi / 2], gamma=0.5, gamma_prime=0.5)
    res = integrate(build_generator(lay, None), EXCITED, 1.0, 1e-3, stride=10)
    pops = [s.data[1, 1].real for s in res.states]
    assert fit_decay(res.times, pops) == pytest.approx(2.0, rel=1e-3)
    assert np.all(np.diff(pops) < 0)


def test_fit_frequency():
    lay = make_layout([0, 0], [0, 1.0], gamma=0.5, gamma_prime=0.5)
    plus = StateDM.from_pure(np.array([1, 1]) / math.sqrt(2))
    res = integrate(build_generator(lay, None), plus, 1.0, 1e-3, stride=10)
    coh = [s.data[1, 0] for s in res.states]
    assert fit_frequency(res.times, coh) == pytest.approx(math.sin(1.0), rel=1e-6)


def test_integrate_rejects_large_step():
    L = build_generator(make_layout([0], gamma=2.0), None)
    with pytest.raises(InvalidArgumentError):
        integrate(L, EXCITED, 1.0, 0.01)
    with pytest.raises(InvalidArgumentError):
        integrate(L, EXCITED, 1.0, 3e-3)


def test_time_dependent_drive():
    # drive switched on at t = 0.5: nothing happens to the ground state before that
    amp = TabulatedAmplitude([0.0, 0.5, 1.0], [0.0, 1.0, 1.0], kind="step")
    me = MasterEquation(build_collective_ops(make_layout([0])), GaussianInput(alpha=amp))
    res = integrate(me, StateDM(np.diag([1.0, 0.0])), 1.0, 1e-3, stride=100)
    assert res.states[5].data[1, 1].real == pytest.approx(0.0, abs=1e-12)
    assert res.states[-1].data[1, 1].real > 0.05


def test_generator_validation():
    L = build_generator(make_layout([0]), None)
    with pytest.raises(InvalidArgumentError):
        LindbladGenerator(L.H, L.basis_ops, np.eye(3))
    with pytest.raises(InvalidArgumentError):
        LindbladGenerator(L.H, L.basis_ops, np.triu(np.ones((4, 4))))
