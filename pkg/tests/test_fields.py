"""Spectral densities, Gaussian sampling, covariance assembly, JSON forms."""

import numpy as np
import pytest

from crystalstat import (
    FieldState,
    covariance_from_density,
    density_from_covariance,
    density_from_jsonable,
    density_to_jsonable,
    empirical_covariance,
    empirical_mixing_support,
    gaussian_ensemble,
    gaussian_sample,
    gibbs_density,
    limit_density,
    nonlinear_transform_sample,
    triangular_density,
    white_noise_density,
)
from crystalstat.fields import SpectralDensity


def test_triangular_covariance_is_a_hat():
    dens = triangular_density(2, 1, 0.5, 2.0, 64)
    table = covariance_from_density(dens, [(0,), (1,), (2,), (3,)])
    np.testing.assert_allclose(table.matrix((0,)), np.diag([1.0, 4.0]), atol=1e-12)
    np.testing.assert_allclose(table.matrix((1,)), np.diag([0.5, 2.0]), atol=1e-12)
    np.testing.assert_allclose(table.matrix((2,)), np.zeros((2, 2)), atol=1e-12)
    np.testing.assert_allclose(table.matrix((3,)), np.zeros((2, 2)), atol=1e-12)


def test_triangular_density_psd_and_resample():
    dens = triangular_density(2, 1, 1.0, 1.0, 64)
    w = np.linalg.eigvalsh(dens.matrix)
    assert w.min() > -1e-12
    finer = dens.resample(128)
    assert finer.L == 128
    table = covariance_from_density(finer, [(0,), (1,)])
    np.testing.assert_allclose(table.matrix((0,)), 2.0 * np.eye(2), atol=1e-12)


def test_white_noise_covariance_is_delta():
    dens = white_noise_density(0.7, 1.3, 1, 1, 32)
    table = covariance_from_density(dens, [(0,), (1,), (5,)])
    np.testing.assert_allclose(table.matrix((0,)), np.diag([0.7, 1.3]), atol=1e-12)
    np.testing.assert_allclose(table.matrix((1,)), np.zeros((2, 2)), atol=1e-12)
    np.testing.assert_allclose(table.matrix((5,)), np.zeros((2, 2)), atol=1e-12)


def test_gaussian_sampler_reproducible():
    dens = triangular_density(2, 1, 1.0, 1.0, 32)
    a = gaussian_sample(dens, seed=5)
    b = gaussian_sample(dens, seed=5)
    c = gaussian_sample(dens, seed=6)
    np.testing.assert_array_equal(a.u, b.u)
    np.testing.assert_array_equal(a.v, b.v)
    assert np.abs(a.u - c.u).max() > 1e-3


def test_gaussian_sampler_order_independent():
    dens = white_noise_density(1.0, 1.0, 1, 1, 32)
    batch = gaussian_ensemble(dens, 4, seed=9)
    tail = gaussian_ensemble(dens, 2, seed=9, start_index=2)
    np.testing.assert_array_equal(batch[2].u, tail[0].u)
    np.testing.assert_array_equal(batch[3].v, tail[1].v)


def test_gaussian_sampler_moments_match_density():
    dens = triangular_density(2, 1, 1.0, 1.0, 64)
    ens = gaussian_ensemble(dens, 3000, seed=1)
    assert all(s.u.dtype == np.float64 for s in ens[:3])
    summary = empirical_covariance(ens, [(0,), (1,), (2,)])
    exact = covariance_from_density(dens, [(0,), (1,), (2,)])
    for z in [(0,), (1,), (2,)]:
        gap = np.abs(summary.mean[z] - exact.matrix(z))
        assert np.all(gap <= 4.0 * summary.se[z] + 1e-12)


def test_gaussian_sample_zero_mean():
    dens = white_noise_density(1.0, 1.0, 1, 1, 64)
    ens = gaussian_ensemble(dens, 2000, seed=3)
    mean_u = np.mean([s.u.mean() for s in ens])
    assert abs(mean_u) < 4.0 / np.sqrt(2000 * 64)


def test_transform_bounds_and_oddness():
    st = FieldState(np.linspace(-5, 5, 16).reshape(16, 1),
                    np.linspace(5, -5, 16).reshape(16, 1), t=2.0)
    out = nonlinear_transform_sample(st, 0.8, 1.5)
    assert np.abs(out.u).max() < 0.8
    assert np.abs(out.v).max() < 1.5
    assert out.t == 2.0
    flipped = nonlinear_transform_sample(FieldState(-st.u, -st.v, 2.0), 0.8, 1.5)
    np.testing.assert_allclose(flipped.u, -out.u, atol=1e-15)
    with pytest.raises(ValueError):
        nonlinear_transform_sample(st, 0.0, 1.0)


def test_mixing_support_radius():
    white = gaussian_ensemble(white_noise_density(1.0, 1.0, 1, 1, 32), 400, seed=2)
    assert empirical_mixing_support(white, 3)["radius"] == 0
    tri = gaussian_ensemble(triangular_density(2, 1, 1.0, 1.0, 32), 400, seed=2)
    rep = empirical_mixing_support(tri, 3)
    assert rep["radius"] == 1
    assert rep["per_radius_significant"][1] is True
    assert rep["per_radius_significant"][3] is False
    with pytest.raises(ValueError, match="100 samples"):
        empirical_mixing_support(white[:50], 2)


def test_density_from_covariance_roundtrip():
    dens = triangular_density(2, 1, 1.0, 2.0, 64)
    offsets = [(z,) for z in range(-2, 3)]
    table = covariance_from_density(dens, offsets)
    rebuilt = density_from_covariance(
        {z: table.matrix(z) for z in table.offsets}, 64
    )
    np.testing.assert_allclose(rebuilt.matrix, dens.matrix, atol=1e-10)


def test_density_from_covariance_mirror_completion():
    dens = triangular_density(2, 1, 1.0, 2.0, 32)
    full_offsets = [(z,) for z in range(-1, 2)]
    table = covariance_from_density(dens, full_offsets)
    full = density_from_covariance({z: table.matrix(z) for z in full_offsets}, 32)
    half = density_from_covariance(
        {(0,): table.matrix((0,)), (1,): table.matrix((1,))}, 32
    )
    np.testing.assert_allclose(half.matrix, full.matrix, atol=1e-12)


def test_density_from_covariance_rejects_aliased_duplicates():
    with pytest.raises(ValueError, match="duplicate"):
        density_from_covariance({(1,): np.eye(2), (-31,): np.eye(2)}, 32)
    with pytest.raises(ValueError, match="duplicate"):
        density_from_covariance({(1,): np.eye(2), (33,): np.eye(2)}, 32)


def test_density_from_covariance_clips_indefinite_input():
    # a lone off-site correlation with no on-site mass is not a valid
    # covariance; the eigenvalue clip must restore positivity
    built = density_from_covariance({(0,): np.eye(2) * 0.1, (1,): np.eye(2)}, 32)
    w = np.linalg.eigvalsh(built.matrix)
    assert w.min() > -1e-12


def test_density_json_roundtrip():
    dens = triangular_density(2, 1, 1.0, 1.0, 32)
    doc = density_to_jsonable(dens)
    back = density_from_jsonable(doc)
    np.testing.assert_allclose(back.matrix, dens.matrix, atol=0)
    assert (back.L, back.d, back.n) == (32, 1, 1)


def test_limit_density_json_roundtrip_keeps_flags(grid64):
    dens = triangular_density(2, 1, 1.0, 1.0, 64)
    lim = limit_density(dens, grid64)
    doc = density_to_jsonable(lim)
    back = density_from_jsonable(doc)
    np.testing.assert_allclose(back.matrix, lim.matrix, atol=0)
    np.testing.assert_array_equal(back.excluded, lim.excluded)
    np.testing.assert_array_equal(back.cluster_id, lim.cluster_id)


def test_density_json_rejects_unknown_keys():
    doc = density_to_jsonable(white_noise_density(1.0, 1.0, 1, 1, 32))
    doc["surprise"] = True
    with pytest.raises(ValueError, match="unknown"):
        density_from_jsonable(doc)


def test_density_validates_hermitian_and_reality():
    mat = np.zeros((32, 2, 2), dtype=complex)
    mat[:, 0, 1] = 1.0  # not Hermitian
    with pytest.raises(ValueError, match="Hermitian"):
        SpectralDensity(L=32, d=1, n=1, matrix=mat)
    theta = 2.0 * np.pi * np.arange(32) / 32
    mat2 = np.zeros((32, 2, 2), dtype=complex)
    mat2[:, 0, 0] = 2.0 + np.sin(theta)  # Hermitian nodewise, not even in theta
    mat2[:, 1, 1] = 1.0
    with pytest.raises(ValueError, match="reality"):
        SpectralDensity(L=32, d=1, n=1, matrix=mat2)


def test_gibbs_density_blocks(grid64):
    lim = gibbs_density(2.0, grid64)
    # velocity block T1/2 everywhere, displacement block (T1/2) / omega^2
    np.testing.assert_allclose(lim.matrix[:, 1, 1], 1.0, atol=1e-12)
    np.testing.assert_allclose(
        lim.matrix[:, 0, 0], 1.0 / grid64.omega[:, 0] ** 2, atol=1e-12
    )
    np.testing.assert_allclose(lim.matrix[:, 0, 1], 0.0, atol=1e-12)
