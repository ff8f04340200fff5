"""Ensemble estimators, characteristic functionals, moment diagnostics."""

import numpy as np
import pytest

from crystalstat import (
    FieldState,
    TestField,
    characteristic_functional,
    empirical_covariance,
    gaussian_ensemble,
    gaussianity_report,
    limit_density,
    linear_functional_samples,
    triangular_density,
    weighted_norm,
    white_noise_density,
)


def test_empirical_covariance_against_inline_oracle(rng):
    # tiny random states, every number checked by hand-rolled averaging
    S, L = 120, 4
    ens = [
        FieldState(rng.standard_normal((L, 1)), rng.standard_normal((L, 1)))
        for _ in range(S)
    ]
    summary = empirical_covariance(ens, [(0,), (1,), (-1,)])

    Y = np.stack([np.concatenate([s.u, s.v], axis=-1) for s in ens])
    for z in [(0,), (1,), (-1,)]:
        per = np.empty((S, 2, 2))
        for s in range(S):
            shifted = np.roll(Y[s], -z[0], axis=0)
            per[s] = sum(np.outer(shifted[x], Y[s][x]) for x in range(L)) / L
        mean = per.mean(axis=0)
        se = np.sqrt(np.sum((per - mean) ** 2, axis=0) / (S * (S - 1)))
        np.testing.assert_allclose(summary.mean[z], mean, atol=1e-13)
        np.testing.assert_allclose(summary.se[z], se, atol=1e-13)
    assert summary.count == S


def test_empirical_covariance_needs_samples():
    ens = [FieldState(np.zeros((8, 1)), np.zeros((8, 1))) for _ in range(5)]
    with pytest.raises(ValueError, match="100"):
        empirical_covariance(ens, [(0,)])


def test_empirical_covariance_consistent(nn1):
    dens = triangular_density(2, 1, 1.0, 1.0, 64)
    ens = gaussian_ensemble(dens, 1500, seed=7)
    summary = empirical_covariance(ens, [(0,), (1,), (2,)])
    from crystalstat import covariance_from_density

    exact = covariance_from_density(dens, [(0,), (1,), (2,)])
    for z in summary.offsets:
        gap = np.abs(summary.mean[z] - exact.matrix(z))
        assert np.all(gap < 4.0 * summary.se[z] + 1e-12)


def test_jackknife_se_shrinks_like_root_n():
    dens = white_noise_density(1.0, 1.0, 1, 1, 32)
    small = empirical_covariance(gaussian_ensemble(dens, 500, seed=1), [(0,)])
    large = empirical_covariance(gaussian_ensemble(dens, 2000, seed=1), [(0,)])
    ratio = small.se[(0,)][0, 0] / large.se[(0,)][0, 0]
    assert 2.0 * 0.7 < ratio < 2.0 * 1.3


def test_ensemble_validation():
    a = FieldState(np.zeros((8, 1)), np.zeros((8, 1)), t=0.0)
    b = FieldState(np.zeros((8, 1)), np.zeros((8, 1)), t=1.0)
    with pytest.raises(ValueError, match="time stamps"):
        empirical_covariance([a, b], [(0,)])
    c = FieldState(np.zeros((16, 1)), np.zeros((16, 1)))
    with pytest.raises(ValueError, match="lattice shapes"):
        empirical_covariance([a, c], [(0,)])
    with pytest.raises(ValueError, match="empty"):
        empirical_covariance([], [(0,)])


def test_linear_functional_linearity():
    dens = triangular_density(2, 1, 1.0, 1.0, 32)
    ens = gaussian_ensemble(dens, 50, seed=13)
    one = TestField.delta(1, 1, component=0, site=(2,))
    other = TestField.delta(1, 1, component=1, site=(5,))
    both = TestField(sites=[(2,), (5,)], values=[[1.0, 0.0], [0.0, 1.0]])
    s = linear_functional_samples(ens, both)
    np.testing.assert_allclose(
        s,
        linear_functional_samples(ens, one) + linear_functional_samples(ens, other),
        atol=1e-12,
    )


def test_linear_functional_window_check():
    dens = white_noise_density(1.0, 1.0, 1, 1, 32)
    ens = gaussian_ensemble(dens, 10, seed=0)
    inside = TestField.delta(1, 1, component=0, site=(-16,))
    linear_functional_samples(ens, inside)
    outside = TestField.delta(1, 1, component=0, site=(40,))
    with pytest.raises(ValueError, match="window"):
        linear_functional_samples(ens, outside)


def test_characteristic_functional_gaussian_case():
    # compare the t = 0 ensemble against its own density, where the
    # Gaussian prediction is exact up to Monte Carlo noise
    dens = white_noise_density(1.0, 1.0, 1, 1, 64)
    ens = gaussian_ensemble(dens, 8000, seed=21)
    psi = TestField.delta(1, 1, component=1)
    samples = linear_functional_samples(ens, psi)
    rep = characteristic_functional(samples, dens, psi)
    assert rep["count"] == 8000
    for row in rep["sweep"]:
        assert row["gap"] < 4.0 * row["se"] + 1e-3
    assert rep["sweep"][0]["lam"] == 0.25
    assert abs(rep["theory_at_1"] - np.exp(-0.5 * rep["Q"])) < 1e-12


def test_characteristic_functional_needs_samples(grid64):
    lim = limit_density(white_noise_density(1.0, 1.0, 1, 1, 64), grid64)
    psi = TestField.delta(1, 1)
    with pytest.raises(ValueError, match="1000"):
        characteristic_functional(np.zeros(100), lim, psi)


def test_gaussianity_report_calibration(rng):
    normal = rng.standard_normal(20000)
    rep = gaussianity_report(normal)
    assert abs(rep["z_skewness"]) < 4 and abs(rep["z_kurtosis"]) < 4
    assert not rep["degenerate"]
    flat = rng.uniform(-1, 1, 20000)
    rep2 = gaussianity_report(flat)
    assert rep2["z_kurtosis"] < -20  # uniform is strongly platykurtic
    rep3 = gaussianity_report(np.full(2000, 3.14))
    assert rep3["degenerate"]
    with pytest.raises(ValueError):
        gaussianity_report(np.zeros(10))


def test_weighted_norm_values():
    st = FieldState(np.zeros((8, 1)), np.zeros((8, 1)))
    st.u[1, 0] = 1.0
    assert weighted_norm(st, -1.0) == pytest.approx(0.5)
    assert weighted_norm(st, 0.0) == pytest.approx(1.0)
    st.v[7, 0] = 2.0  # minimal image of site 7 on L=8 is -1
    assert weighted_norm(st, -1.0) == pytest.approx(0.5 + 4.0 * 0.5)


def test_weighted_norm_monotone_in_alpha(rng):
    st = FieldState(rng.standard_normal((16, 1)), rng.standard_normal((16, 1)))
    assert weighted_norm(st, -2.0) < weighted_norm(st, -1.0) < weighted_norm(st, 0.0)
