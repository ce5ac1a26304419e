import numpy as np
import pytest

from etconnect.gains import (GainSet, SynthesisError, assemble_bar_system,
                             assemble_error_system, coupling_gain,
                             local_observer_gain, obs_decompose,
                             observer_gain_global, place_poles, synthesize_gains)
from etconnect.graphs import CommGraph, full_config, induced_config, spectral_split
from etconnect.linalg import kron

from conftest import small_gains, small_graph, small_plant
from test_plant import water_plant

CHAIN = CommGraph(adjacency=np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]]))


def water_gains(eta=1e5):
    return synthesize_gains(water_plant(), [-1.5] * 3, [-100.0] * 3,
                            [[-15.0]] * 3, eta=eta)


def test_place_poles_water_controller():
    plant = water_plant()
    k = place_poles(plant.a, plant.b, [-1.5, -1.5, -1.5])
    # closed form for invertible B, cross-checked by eigendecomposition
    expected = np.linalg.solve(plant.b, -1.5 * np.eye(3) - plant.a)
    assert np.allclose(k, expected)
    assert np.allclose(np.linalg.eigvals(plant.a + plant.b @ k).real, -1.5)


def test_place_poles_scalar():
    gain = place_poles(np.array([[0.0]]), np.array([[1.0]]), [-2.0])
    assert gain == pytest.approx(-2.0)


def test_place_poles_already_at_target():
    a = np.diag([-1.0, -2.0])
    gain = place_poles(a, np.eye(2), [-1.0, -2.0])
    assert np.allclose(np.sort(np.linalg.eigvals(a + gain).real), [-2.0, -1.0])


def test_place_poles_single_input_ackermann():
    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    b = np.array([[0.0], [1.0]])
    gain = place_poles(a, b, [-2.0, -2.0])
    assert np.allclose(np.sort(np.linalg.eigvals(a + b @ gain).real), [-2.0, -2.0],
                       atol=1e-8)


def test_place_poles_uncontrollable():
    a = np.diag([1.0, 2.0])
    b = np.array([[1.0], [0.0]])
    with pytest.raises(SynthesisError):
        place_poles(a, b, [-1.0, -2.0])


def test_observer_gain_global_water():
    plant = water_plant()
    l_gain = observer_gain_global(plant.a, plant.c, [-100.0] * 3)
    # with C = I the gain must be A + 100 I
    assert np.allclose(l_gain, plant.a + 100.0 * np.eye(3))
    assert np.allclose(np.linalg.eigvals(plant.a - l_gain @ plant.c).real, -100.0)


def test_observer_gain_scalar_and_duality():
    assert observer_gain_global(np.array([[1.0]]), np.array([[1.0]]),
                                [-1.0]) == pytest.approx(2.0)
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 3))
    c = rng.standard_normal((1, 3))
    poles = [-1.0, -2.0, -3.0]
    l_gain = observer_gain_global(a, c, poles)
    dual = -place_poles(a.T, c.T, poles).T
    assert np.allclose(np.sort(np.linalg.eigvals(a - l_gain @ c).real),
                       np.sort(np.linalg.eigvals(a - dual @ c).real), atol=1e-6)


def test_obs_decompose_water_agent1():
    plant = water_plant()
    decomp = obs_decompose(plant.a, plant.c_block(0))
    assert decomp.obs_dim == 1
    assert decomp.a_o == pytest.approx(np.array([[-8.367e-4]]), abs=1e-12)
    assert abs(abs(decomp.c_o[0, 0]) - 1.0) <= 1e-12
    t = decomp.t_i
    assert np.allclose(t.T @ t, np.eye(3), atol=1e-12)
    at = np.linalg.solve(t, plant.a @ t)
    assert np.abs(at[:1, 1:]).max() <= 1e-8
    assert np.abs((plant.c_block(0) @ t)[:, 1:]).max() <= 1e-8


def test_obs_decompose_full_and_zero_rank():
    a = np.diag([-1.0, -2.0])
    full = obs_decompose(a, np.eye(2))
    assert full.obs_dim == 2
    none = obs_decompose(a, np.zeros((1, 2)))
    assert none.obs_dim == 0
    with pytest.raises(SynthesisError):
        local_observer_gain(none, [-1.0])


def test_local_observer_gain_water():
    plant = water_plant()
    decomp = obs_decompose(plant.a, plant.c_block(0))
    l_hat = local_observer_gain(decomp, [-15.0])
    # scalar observable block: gain 15 + a11, padded with zeros
    assert abs(abs(l_hat[0, 0]) - (15.0 - 8.367e-4)) <= 1e-9
    assert np.abs(l_hat[1:, 0]).max() <= 1e-12
    assert l_hat.shape == (3, 1)
    a_cl = decomp.a_o - (decomp.t_i[:, :1].T @ l_hat) @ decomp.c_o
    assert np.allclose(np.linalg.eigvals(a_cl).real, -15.0)


def test_local_observer_gain_fully_observable_matches_global():
    a = np.diag([-1.0, -2.0])
    decomp = obs_decompose(a, np.eye(2))
    l_hat = local_observer_gain(decomp, [-4.0, -5.0])
    assert np.allclose(np.sort(np.linalg.eigvals(a - l_hat @ np.eye(2)).real),
                       [-5.0, -4.0], atol=1e-8)


def test_gain_set_properties():
    plant = water_plant()
    gains = water_gains()
    a_bk = gains.a_bk(plant)
    assert np.linalg.eigvals(a_bk).real.max() < 0
    assert np.linalg.eigvals(plant.a - gains.l_global @ plant.c).real.max() < 0
    assert np.allclose(gains.k, np.vstack(gains.k_blocks))
    # gain switch: isolated agents run the local gain, linked agents N L_i
    assert np.array_equal(gains.observer_gain(plant, 0, 0), gains.l_local[0])
    assert np.allclose(gains.observer_gain(plant, 0, 2),
                       3.0 * gains.l_block(plant, 0))
    with pytest.raises(SynthesisError):
        GainSet(k_blocks=gains.k_blocks, l_global=gains.l_global,
                l_local=gains.l_local, eta=-1.0)


def test_error_system_blocks():
    plant = water_plant()
    gains = water_gains()
    err = assemble_error_system(plant, gains)
    zero = induced_config(CHAIN, ())
    full = full_config(CHAIN)
    j_zero = err.j_matrix(zero)
    for i in range(3):
        assert np.allclose(j_zero[3 * i:3 * i + 3, i:i + 1], gains.l_local[i])
    j_full = err.j_matrix(full)
    for i in range(3):
        assert np.allclose(j_full[3 * i:3 * i + 3, i:i + 1],
                           3.0 * gains.l_block(plant, i))
    f_full = err.f_matrix(full)
    a_bk = gains.a_bk(plant)
    blk01 = -plant.b_block(1) @ gains.k_blocks[1]
    assert np.allclose(f_full[0:3, 3:6], blk01)
    diag0 = a_bk - 3.0 * gains.l_block(plant, 0) @ plant.c_block(0) \
        - plant.b_block(0) @ gains.k_blocks[0]
    assert np.allclose(f_full[0:3, 0:3], diag0)
    assert np.allclose(err.a_e_matrix(zero), err.f_matrix(zero))
    a_e_full = err.a_e_matrix(full)
    assert np.allclose(a_e_full, f_full - gains.eta * kron(full.laplacian, np.eye(3)))


def test_a_e_depends_only_on_laplacian():
    plant = water_plant()
    err = assemble_error_system(plant, water_gains())
    a = induced_config(CHAIN, {0, 2})
    b = induced_config(CHAIN, set())
    assert np.array_equal(a.laplacian, b.laplacian)
    assert np.array_equal(err.a_e_matrix(a), err.a_e_matrix(b))


def test_bar_system_blocks():
    plant = water_plant()
    gains = water_gains()
    split = spectral_split(CHAIN)
    bar = assemble_bar_system(plant, gains, split)
    a_bk = gains.a_bk(plant)
    for i in range(3):
        expected = a_bk / 3.0 - plant.b_block(i) @ gains.k_blocks[i] \
            - gains.l_block(plant, i) @ plant.c_block(i)
        assert np.allclose(bar.h[:, 3 * i:3 * i + 3], expected)
    assert np.allclose(bar.a_bar[:3, :3], plant.a - gains.l_global @ plant.c)
    # J-bar is N blkdiag(L_i)
    for i in range(3):
        assert np.allclose(bar.j_bar[3 * i:3 * i + 3, i:i + 1],
                           3.0 * gains.l_block(plant, i))


def test_bar_system_needs_coupling():
    # unstable plant with zero gains: only the coupling can stabilize the
    # disagreement block, so eta = 0 must be rejected
    from etconnect.plant import PlantModel
    plant = PlantModel(a=np.array([[1.0]]), b=np.array([[1.0, 1.0]]),
                       c=np.array([[1.0], [1.0]]), input_partition=(1, 1),
                       output_partition=(1, 1), q=np.eye(1), r=np.eye(2))
    raw = GainSet(k_blocks=(np.zeros((1, 1)), np.zeros((1, 1))),
                  l_global=np.zeros((1, 2)),
                  l_local=(np.zeros((1, 1)), np.zeros((1, 1))), eta=0.0)
    two = CommGraph(adjacency=np.array([[0, 1], [1, 0]]))
    split2 = spectral_split(two)
    with pytest.raises(SynthesisError, match="coupling_gain"):
        assemble_bar_system(plant, raw, split2)
    coupled = GainSet(k_blocks=raw.k_blocks, l_global=raw.l_global,
                      l_local=raw.l_local, eta=10.0)
    bar = assemble_bar_system(plant, coupled, split2)
    assert bar.a_bar.shape == (2, 2)


def test_representation_equivalence_full_connection():
    # the stacked error dynamics and their averaged/disagreement form must agree
    plant = water_plant()
    gains = water_gains()
    split = spectral_split(CHAIN)
    err = assemble_error_system(plant, gains)
    bar = assemble_bar_system(plant, gains, split)
    full = full_config(CHAIN)
    a_e = err.a_e_matrix(full)
    j = err.j_matrix(full)
    s_i = kron(split.s, np.eye(3))
    rng = np.random.default_rng(7)
    for _ in range(100):
        e = rng.standard_normal(9)
        w = rng.standard_normal(3)
        v = rng.standard_normal(3)
        edot = a_e @ e + err.i_stack @ w - j @ v
        ehat = np.concatenate([err.i_stack.T @ e / 3.0, s_i.T @ e])
        ehatdot = bar.a_bar @ ehat + bar.w_bar @ w - bar.v_bar @ v
        scale = max(1.0, np.linalg.norm(edot))
        assert np.linalg.norm(edot - bar.e_bar_basis @ ehatdot) <= 1e-6 * scale


def test_coupling_gain_search():
    plant = small_plant()
    underlying = small_graph()
    split = spectral_split(underlying)
    base = small_gains(eta=0.0)
    eta = coupling_gain(plant, base, split, floor_margin=0.5)
    gains = GainSet(k_blocks=base.k_blocks, l_global=base.l_global,
                    l_local=base.l_local, eta=eta)
    err = assemble_error_system(plant, gains)
    full = full_config(underlying)
    s_i = kron(split.s, np.eye(2))
    block = s_i.T @ err.f_matrix(full) @ s_i \
        - eta * kron(np.diag(split.lambda_plus), np.eye(2))
    top = np.linalg.eigvals(block).real.max()
    assert top <= -0.5
    # pushing eta further never raises the certified level
    gains2 = GainSet(k_blocks=base.k_blocks, l_global=base.l_global,
                     l_local=base.l_local, eta=2 * eta if eta else 1.0)
    block2 = s_i.T @ err.f_matrix(full) @ s_i \
        - gains2.eta * kron(np.diag(split.lambda_plus), np.eye(2))
    assert np.linalg.eigvals(block2).real.max() <= top + 1e-9


def test_coupling_gain_zero_when_stable():
    # a plant whose disagreement block is already decaying needs no coupling
    plant = small_plant()
    underlying = small_graph()
    split = spectral_split(underlying)
    base = synthesize_gains(plant, [-1.0, -1.0], [-5.0, -5.0],
                            [[-3.0], [-3.0]], eta=0.0)
    eta = coupling_gain(plant, base, split, floor_margin=1e-6)
    err = assemble_error_system(plant, base)
    s_i = kron(split.s, np.eye(2))
    block = s_i.T @ err.f_matrix(full_config(underlying)) @ s_i
    if np.linalg.eigvals(block).real.max() <= -1e-6:
        assert eta == 0.0
    else:
        assert eta > 0.0
