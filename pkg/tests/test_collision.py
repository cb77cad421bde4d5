import math

import numpy as np
import pytest

from conftest import random_dm, trace_norm
from giantcm.collision import (
    CollisionConfig,
    build_vn,
    collision_unitary,
    delay_indices,
    delayed_coupling_h,
    delayed_term_operator,
    joint_space,
    magnus_kernel,
    magnus_kernel_exact,
    magnus_vanishing_check,
    propagate_single_excitation,
    run_conveyor,
    second_order_step,
    step,
)
from giantcm.errors import InvalidArgumentError
from giantcm.field import BinMoments, TimeBinState, coherent_bin, gaussian_bin_state
from giantcm.geometry import build_collective_ops, make_layout
from giantcm.operators import HilbertDims, StateDM, make_ladder

EXCITED = StateDM(np.diag([0.0, 1.0]))
GROUND = StateDM(np.diag([1.0, 0.0]))


def braided_df(gamma=0.5, gamma_prime=0.5):
    phis = [0, np.pi / 2, np.pi, 3 * np.pi / 2]
    return make_layout([0, 1, 0, 1], phis, gamma=gamma, gamma_prime=gamma_prime)


def excited_index(layout, j):
    """Basis index of emitter j excited, others ground (qubits only)."""
    n = len(layout.emitters)
    return 1 << (n - 1 - j)


def test_build_vn_single_qubit():
    g, dt = 0.8, 0.01
    co = build_collective_ops(make_layout([0], gamma=g))
    space = joint_space(co, CollisionConfig(dt, bin_cutoff=3))
    sp = np.array([[0, 0], [1, 0]])
    b = make_ladder("boson", 3).data
    X = np.kron(sp, b)
    np.testing.assert_allclose(build_vn(co, dt, space).data, math.sqrt(g / dt) * (X + X.T), atol=1e-14)


def test_build_vn_df_zero():
    co = build_collective_ops(braided_df())
    space = joint_space(co, CollisionConfig(0.01))
    assert space.n_bins == 2
    assert np.max(np.abs(build_vn(co, 0.01, space).data)) <= 1e-13


def test_build_vn_scaling():
    co = build_collective_ops(make_layout([0, 1, 0], [0.2, 0.5, 1.3], gamma=0.6, gamma_prime=0.3))
    space = joint_space(co, CollisionConfig(0.01))
    np.testing.assert_allclose(build_vn(co, 0.0025, space).data, 2 * build_vn(co, 0.01, space).data, atol=1e-12)


def test_unitary_identity_when_decoupled():
    # serial giant atoms at phase difference pi: no coupling and no Hvac
    lay = make_layout([0, 0, 1, 1], [0, np.pi, 0.3, 0.3 + np.pi])
    co = build_collective_ops(lay)
    U = collision_unitary(co, CollisionConfig(0.01)).data
    np.testing.assert_allclose(U, np.eye(len(U)), atol=1e-14)


def test_unitary_vacuum_element():
    g, dt = 1.0, 0.01
    co = build_collective_ops(make_layout([0], gamma=g))
    U = collision_unitary(co, CollisionConfig(dt, bin_cutoff=3)).data
    # |e,0> sits at index 1*3 + 0
    assert U[3, 3] == pytest.approx(math.cos(math.sqrt(g * dt)), abs=1e-14)
    assert abs(U[3, 3] - (1 - g * dt / 2)) < 1e-4


def test_unitary_random_layout(rng):
    lay = make_layout([0, 1, 0], rng.uniform(0, 6, 3), gamma=0.7, gamma_prime=0.2)
    U = collision_unitary(build_collective_ops(lay), CollisionConfig(0.02)).data
    assert np.linalg.norm(U.conj().T @ U - np.eye(len(U))) <= 1e-10


def test_step_ground_vacuum_unchanged():
    co = build_collective_ops(make_layout([0]))
    res = step(GROUND, TimeBinState.vacuum(3), co, CollisionConfig(0.01))
    np.testing.assert_allclose(res.system.data, GROUND.data, atol=1e-15)
    np.testing.assert_allclose(res.bin_out.data, np.diag([1.0, 0, 0]), atol=1e-15)


def test_step_excited_jaynes_cummings_oracle():
    dt = 0.01
    co = build_collective_ops(make_layout([0]))
    res = step(EXCITED, TimeBinState.vacuum(3), co, CollisionConfig(dt))
    # resonant exchange in the {|e,0>, |g,1>} block with frequency sqrt(gamma/dt)
    p_exc = math.cos(math.sqrt(dt)) ** 2
    assert res.system.data[1, 1].real == pytest.approx(p_exc, abs=1e-12)
    n_bin = np.trace(res.bin_out.data @ np.diag([0, 1, 2])).real
    assert n_bin == pytest.approx(1 - p_exc, abs=1e-12)
    assert abs(np.trace(res.system.data) - 1) <= 1e-10


@pytest.mark.parametrize("bins", [
    lambda: (TimeBinState.vacuum(3), TimeBinState.vacuum(3)),
    lambda: (coherent_bin(0.5, 0.01, 3), coherent_bin(-0.2j, 0.01, 3)),
    lambda: (gaussian_bin_state(BinMoments(0, 0.3, 0), 3, max_moment_error=1),
             gaussian_bin_state(BinMoments(0, 0.3, 0), 3, max_moment_error=1)),
])
def test_step_df_bins_unchanged(bins, rng):
    co = build_collective_ops(braided_df())
    b = bins()
    res = step(StateDM(random_dm(rng, 4), (2, 2)), b, co, CollisionConfig(0.01))
    for bi, bo in zip(b, res.bin_out):
        np.testing.assert_allclose(bo.data, bi.state.data, atol=1e-10)


def test_conveyor_exponential_decay():
    co = build_collective_ops(make_layout([0]))
    res = run_conveyor(EXCITED, TimeBinState.vacuum(3), co, CollisionConfig(1e-3, n_steps=1000, stride=100))
    assert len(res.states) == 11
    assert res.states[-1].data[1, 1].real == pytest.approx(math.exp(-1), abs=1e-2)
    assert res.min_eigenvalue >= -1e-8


def test_conveyor_df_is_hvac_rotation(rng):
    lay = braided_df()
    co = build_collective_ops(lay)
    rho0 = StateDM(random_dm(rng, 4), (2, 2))
    cfg = CollisionConfig(0.01, n_steps=100, stride=25)
    res = run_conveyor(rho0, (TimeBinState.vacuum(3),) * 2, co, cfg)
    H = co.Hvac.data
    w, v = np.linalg.eigh(H)
    for t, s in zip(res.times, res.states):
        U = v @ np.diag(np.exp(-1j * w * t)) @ v.conj().T
        np.testing.assert_allclose(s.data, U @ rho0.data @ U.conj().T, atol=1e-6)


def test_conveyor_deterministic():
    co = build_collective_ops(make_layout([0, 0], [0, 1.0]))
    cfg = CollisionConfig(0.01, n_steps=20)
    a = run_conveyor(EXCITED, coherent_bin(0.3, 0.01), co, cfg)
    b = run_conveyor(EXCITED, coherent_bin(0.3, 0.01), co, cfg)
    for x, y in zip(a.states, b.states):
        np.testing.assert_array_equal(x.data, y.data)


def test_excitation_conservation():
    lay = make_layout([0, 1, 0, 1], [0, 0.7, 1.9, 2.3])
    co = build_collective_ops(lay)
    rho0 = StateDM(np.diag([0, 0, 0, 1.0]), (2, 2))
    cfg = CollisionConfig(0.01, n_steps=200, stride=200)
    res = run_conveyor(rho0, TimeBinState.vacuum(3), co, cfg, keep_bins=True)
    n_op = sum(a.data.conj().T @ a.data for a in co.local)
    emitted = sum(np.trace(bo.data @ np.diag([0, 1, 2])).real for bo in res.bin_out)
    total = np.trace(res.states[-1].data @ n_op).real + emitted
    assert total == pytest.approx(2.0, abs=1e-8)


def test_convergence_order_single_qubit():
    co = build_collective_ops(make_layout([0]))
    finals = []
    for dt in (4e-3, 2e-3, 1e-3):
        cfg = CollisionConfig(dt, n_steps=int(round(1 / dt)), stride=10 ** 6)
        finals.append(run_conveyor(EXCITED, TimeBinState.vacuum(3), co, cfg).states[-1].data)
    d1, d2 = trace_norm(finals[0] - finals[1]), trace_norm(finals[1] - finals[2])
    assert d1 / d2 >= 1.8


def test_second_order_identity_when_decoupled():
    lay = make_layout([0, 0], [0, np.pi])
    co = build_collective_ops(lay)
    cfg = CollisionConfig(0.01)
    sigma = StateDM(np.kron(np.diag([0.3, 0.7]), np.diag([1.0, 0, 0])), (2, 3))
    np.testing.assert_allclose(second_order_step(sigma, co, cfg).data, sigma.data, atol=1e-15)


def test_second_order_vs_exact():
    co = build_collective_ops(make_layout([0]))
    sigma0 = np.kron(EXCITED.data, np.diag([1.0, 0, 0]))
    errs = []
    for dt in (0.01, 0.005, 0.0025):
        cfg = CollisionConfig(dt)
        out = second_order_step(StateDM(sigma0, (2, 3)), co, cfg).data
        assert abs(np.trace(out) - 1) <= 1e-12
        U = collision_unitary(co, cfg).data
        exact = U @ sigma0 @ U.conj().T
        pop = out[3, 3].real
        assert pop - 1 == pytest.approx(-dt, rel=2 * dt)
        errs.append(trace_norm(out - exact))
    # error should be o(dt): at least the dt^{3/2} scaling of the next order
    assert errs[0] / errs[1] >= 2.5 and errs[1] / errs[2] >= 2.5


def test_delayed_terms_unidirectional():
    lay = make_layout([0, 0], [0, 0.4], taus=[0.0, 0.03])
    assert delay_indices(lay, 0.01) == [0, 3]
    terms = delayed_coupling_h(lay, 5, 0.01)
    assert [(t.direction, t.bin) for t in terms] == [("right", 5), ("right", 2)]


def test_delayed_terms_bidirectional():
    lay = make_layout([0, 0], [0, 0.4], taus=[0.0, 0.03], gamma=0.5, gamma_prime=0.5)
    terms = delayed_coupling_h(lay, 5, 0.01)
    assert {t.bin for t in terms if t.direction == "right"} == {5, 2}
    assert {t.bin for t in terms if t.direction == "left"} == {5, 8}


def test_delayed_single_point_reduces_to_vn():
    lay = make_layout([0], taus=[0.0])
    dt = 0.01
    terms = delayed_coupling_h(lay, 7, dt)
    assert [(t.direction, t.bin) for t in terms] == [("right", 7)]
    H = delayed_term_operator(terms, HilbertDims((2,)), [("right", 7)], cutoff=3)
    co = build_collective_ops(lay)
    V = build_vn(co, dt, joint_space(co, CollisionConfig(dt)))
    np.testing.assert_allclose(H.data, V.data, atol=1e-14)


def test_delayed_noncommensurate():
    lay = make_layout([0, 0], taus=[0.0, 0.0301])
    with pytest.raises(InvalidArgumentError):
        delayed_coupling_h(lay, 1, 0.01)


def test_delayed_norm_conservation():
    lay = make_layout([0, 0], [0, 1.0], taus=[0.0, 0.03], gamma=0.5, gamma_prime=0.5)
    res = propagate_single_excitation(lay, 0.01, 50, emitter_amps=[1.0])
    np.testing.assert_allclose(res.norms, 1.0, atol=1e-10)
    assert abs(res.emitter_amplitudes[-1, 0]) < 1


def test_delayed_matches_conveyor_without_delay():
    # with all m = 0, the delayed propagation is the ordinary collision model
    lay = make_layout([0], taus=[0.0])
    dt = 0.01
    res = propagate_single_excitation(lay, dt, 100, emitter_amps=[1.0])
    conv = run_conveyor(EXCITED, TimeBinState.vacuum(3), build_collective_ops(lay), CollisionConfig(dt, n_steps=100))
    assert abs(res.emitter_amplitudes[-1, 0]) ** 2 == pytest.approx(conv.states[-1].data[1, 1].real, abs=1e-12)


def test_magnus_k0_terms_vanish():
    out = magnus_vanishing_check()
    assert out["squeeze_symmetric"] <= 1e-12
    assert out["thermal_k0"] <= 1e-12
    assert out["quadrature_error"] <= 1e-3


def test_magnus_quadrature_converges():
    e1 = abs(magnus_kernel(1, 1, 200) - magnus_kernel_exact(1, 1))
    e2 = abs(magnus_kernel(1, 1, 400) - magnus_kernel_exact(1, 1))
    assert e2 < e1


def test_regime_checks():
    co = build_collective_ops(make_layout([0]))
    with pytest.raises(InvalidArgumentError):
        CollisionConfig(0.2).check_regime(co)
    with pytest.warns(UserWarning):
        CollisionConfig(0.05).check_regime(co)
    lay = make_layout([0, 0], taus=[0.0, 0.01])
    with pytest.warns(UserWarning):
        CollisionConfig(0.01).check_regime(build_collective_ops(lay), lay)
    with pytest.raises(InvalidArgumentError):
        CollisionConfig(0.0)


def test_leakage_flag():
    co = build_collective_ops(make_layout([0]))
    res = step(GROUND, coherent_bin(3.0, 0.01, 2), co, CollisionConfig(0.01, bin_cutoff=2))
    assert res.flagged and res.leakage > 1e-6
