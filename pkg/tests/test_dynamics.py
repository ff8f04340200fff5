"""Propagator, time evolution, Green's functions, energy."""

import numpy as np
import pytest

from crystalstat import (
    FieldState,
    build_nn_kernel,
    dispersion_grid,
    evolve,
    evolve_ensemble,
    green_function,
    hamiltonian,
    propagator_blocks,
    random_finite_range_kernel,
    reference_evolve_ode,
    spectral_point,
    truncated_green,
)


def random_state(rng, L, d, n, t=0.0):
    shape = (L,) * d + (n,)
    return FieldState(rng.standard_normal(shape), rng.standard_normal(shape), t)


def test_propagator_blocks_oscillator_form(nn1):
    pt = spectral_point(nn1, [0.9])
    w = float(pt.omega[0])
    t = 3.7
    blocks = propagator_blocks(pt, t)
    np.testing.assert_allclose(blocks.cos_block, [[np.cos(w * t)]], atol=1e-13)
    np.testing.assert_allclose(blocks.sinc_block, [[np.sin(w * t) / w]], atol=1e-13)
    np.testing.assert_allclose(blocks.neg_sin_block, [[-w * np.sin(w * t)]], atol=1e-13)
    M = blocks.matrix()
    assert M.shape == (2, 2)
    assert abs(np.linalg.det(M) - 1.0) < 1e-12


def test_propagator_zero_frequency_is_free_motion():
    k = build_nn_kernel(1, 1, 0.0)
    pt = spectral_point(k, [0.0])
    M = propagator_blocks(pt, 2.5).matrix()
    np.testing.assert_allclose(M, [[1.0, 2.5], [0.0, 1.0]], atol=1e-13)


def test_propagator_group_law():
    k = random_finite_range_kernel(1, 2, 2, seed=8)
    pt = spectral_point(k, [1.3])
    a = propagator_blocks(pt, 1.1).matrix()
    b = propagator_blocks(pt, 2.6).matrix()
    ab = propagator_blocks(pt, 3.7).matrix()
    np.testing.assert_allclose(a @ b, ab, atol=1e-12)
    np.testing.assert_allclose(b @ a, ab, atol=1e-12)


def test_evolve_matches_rk4(nn1, rng):
    st = random_state(rng, 16, 1, 1)
    spectral = evolve(st, nn1, 2.0)
    ode = reference_evolve_ode(st, nn1, 2.0, dt=0.005)
    np.testing.assert_allclose(spectral.u, ode.u, atol=1e-7)
    np.testing.assert_allclose(spectral.v, ode.v, atol=1e-7)
    assert spectral.t == 2.0


def test_evolve_matches_rk4_two_component(rng):
    k = random_finite_range_kernel(1, 2, 1, seed=2)
    st = random_state(rng, 16, 1, 2)
    g = dispersion_grid(k, 16)
    dt = 0.05 / g.omega_max
    spectral = evolve(st, k, 1.5)
    ode = reference_evolve_ode(st, k, 1.5, dt=dt)
    np.testing.assert_allclose(spectral.u, ode.u, atol=1e-6)
    np.testing.assert_allclose(spectral.v, ode.v, atol=1e-6)


def test_evolve_identity_and_additivity(nn1, rng):
    st = random_state(rng, 32, 1, 1, t=1.0)
    same = evolve(st, nn1, 0.0)
    np.testing.assert_allclose(same.u, st.u, atol=1e-14)
    assert same.t == 1.0
    one = evolve(evolve(st, nn1, 2.0), nn1, 3.0)
    both = evolve(st, nn1, 5.0)
    np.testing.assert_allclose(one.u, both.u, atol=1e-10)
    np.testing.assert_allclose(one.v, both.v, atol=1e-10)
    assert one.t == both.t == 6.0


def test_evolve_backwards_inverts(nn1, rng):
    st = random_state(rng, 32, 1, 1)
    back = evolve(evolve(st, nn1, 4.0), nn1, -4.0)
    np.testing.assert_allclose(back.u, st.u, atol=1e-10)
    np.testing.assert_allclose(back.v, st.v, atol=1e-10)


def test_energy_conserved_along_orbit(rng):
    kernels = [
        build_nn_kernel(1, 1, 1.0),
        build_nn_kernel(1, 1, 0.0),
        random_finite_range_kernel(1, 2, 2, seed=6),
    ]
    for k in kernels:
        st = random_state(rng, 32, 1, k.n)
        H0 = hamiltonian(st, k)
        for t in (1.0, 17.3, 100.0):
            Ht = hamiltonian(evolve(st, k, t), k)
            assert abs(Ht - H0) <= 1e-10 * (1.0 + abs(H0))


def test_delta_energy_value(nn1):
    st = FieldState(np.zeros((32, 1)), np.zeros((32, 1)))
    st.u[0, 0] = 1.0
    assert abs(hamiltonian(st, nn1) - 1.5) < 1e-14


def test_finite_propagation_speed(nn1):
    # the tail bound is a stationary-phase estimate: the slack 0.5 t must cover
    # a few decay lengths, so look at a moderately late time
    L, t = 256, 14.0
    st = FieldState(np.zeros((L, 1)), np.zeros((L, 1)))
    st.u[0, 0] = 1.0
    out = evolve(st, nn1, t)
    g = dispersion_grid(nn1, L)
    radius = (g.max_group_velocity() + 0.5) * t
    x = np.minimum(np.arange(L), L - np.arange(L))
    outside = x > radius
    total = float(np.sum(out.u**2 + out.v**2))
    mass = float(np.sum(out.u[outside] ** 2 + out.v[outside] ** 2))
    assert mass < 1e-6 * total


def test_green_function_columns_are_delta_responses(nn1):
    L, t = 64, 4.0
    G = green_function(nn1, t, L)
    assert G.shape == (L, 2, 2)
    st = FieldState(np.zeros((L, 1)), np.zeros((L, 1)))
    st.u[0, 0] = 1.0
    out = evolve(st, nn1, t)
    np.testing.assert_allclose(G[:, 0, 0], out.u[:, 0], atol=1e-12)
    np.testing.assert_allclose(G[:, 1, 0], out.v[:, 0], atol=1e-12)


def test_green_function_against_rk4_massless():
    k = build_nn_kernel(1, 1, 0.0)
    L, t = 256, 10.0
    G = green_function(k, t, L)
    st = FieldState(np.zeros((L, 1)), np.zeros((L, 1)))
    st.v[0, 0] = 1.0
    ode = reference_evolve_ode(st, k, t, dt=0.005)
    np.testing.assert_allclose(G[:, 0, 1], ode.u[:, 0], atol=1e-5)
    np.testing.assert_allclose(G[:, 1, 1], ode.v[:, 0], atol=1e-5)


def test_green_function_wraparound_guard(nn1):
    with pytest.raises(ValueError, match="periodic boundary"):
        green_function(nn1, 30.0, 32)


def test_truncated_green_removes_caustic_peak(nn1):
    # at late times the sup norm lives on the caustic; cutting the flat-
    # curvature neighbourhood must lower it
    L, t = 1024, 80.0
    plain = np.abs(green_function(nn1, t, L)).max()
    cut = np.abs(truncated_green(nn1, t, L, eps=0.3)).max()
    assert cut < plain


def test_truncated_green_ramp_options(nn1):
    a = truncated_green(nn1, 10.0, 256, eps=0.3, ramp="smooth")
    b = truncated_green(nn1, 10.0, 256, eps=0.3, ramp="quintic")
    assert a.shape == b.shape == (256, 2, 2)
    assert np.abs(a - b).max() > 0
    with pytest.raises(ValueError):
        truncated_green(nn1, 10.0, 256, eps=0.3, ramp="boxcar")


def test_truncated_green_zero_eps_is_plain(nn1):
    a = truncated_green(nn1, 5.0, 128, eps=0.0)
    b = green_function(nn1, 5.0, 128)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_evolve_ensemble_matches_single(nn1, rng):
    states = [random_state(rng, 32, 1, 1) for _ in range(3)]
    batch = evolve_ensemble(states, nn1, 6.0)
    for st, out in zip(states, batch):
        single = evolve(st, nn1, 6.0)
        np.testing.assert_allclose(out.u, single.u, atol=1e-12)
        np.testing.assert_allclose(out.v, single.v, atol=1e-12)


def test_state_shape_validation():
    with pytest.raises(ValueError):
        FieldState(np.zeros((8, 1)), np.zeros((4, 1)))
