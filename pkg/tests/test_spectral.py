"""Dispersion grids, branch calculus, critical-set surrogates, E4/E5/ES."""

import io

import numpy as np
import pytest

from crystalstat import (
    InteractionKernel,
    build_nn_kernel,
    branch_derivatives,
    check_E4_E5,
    check_ES,
    critical_set_scan,
    dispersion_grid,
    spectral_point,
    triangular_density,
    white_noise_density,
    write_dispersion_csv,
)

# nearest-neighbour chain with unit mass: omega^2 = 3 - 2 cos(theta),
# max group speed sqrt((3 - sqrt 5)/2), attained where cos(theta) = (3 - sqrt 5)/2
VMAX_CHAIN = float(np.sqrt((3.0 - np.sqrt(5.0)) / 2.0))
THETA_INFLECTION = float(np.arccos((3.0 - np.sqrt(5.0)) / 2.0))


def chain_omega(theta, m=1.0):
    return np.sqrt(m * m + 2.0 - 2.0 * np.cos(theta))


def crossing_kernel():
    """Dispersive branch crossing a flat one at omega = 2."""
    return InteractionKernel(
        1,
        2,
        {
            (0,): np.diag([3.0, 4.0]),
            (1,): np.diag([-1.0, 0.0]),
            (-1,): np.diag([-1.0, 0.0]),
        },
    )


def test_grid_frequencies_match_closed_form(grid256):
    theta = 2.0 * np.pi * np.arange(256) / 256
    np.testing.assert_allclose(grid256.omega[:, 0], chain_omega(theta), atol=1e-12)
    assert abs(grid256.omega_max - np.sqrt(5.0)) < 1e-12


def test_spectral_point_matches_grid_node(nn1, grid256):
    node = (37,)
    pt = spectral_point(nn1, grid256.point(node).theta)
    np.testing.assert_allclose(pt.omega, grid256.omega[node], atol=1e-12)
    assert pt.n == 1 and not pt.crossing


def test_spectral_point_eigendata(rng):
    from crystalstat import fourier_symbol, random_finite_range_kernel

    k = random_finite_range_kernel(1, 2, 2, seed=17)
    theta = rng.uniform(-np.pi, np.pi, size=1)
    pt = spectral_point(k, theta)
    assert np.all(np.diff(pt.omega) >= 0)
    np.testing.assert_allclose(pt.basis.conj().T @ pt.basis, np.eye(2), atol=1e-12)
    V = fourier_symbol(k, theta)
    np.testing.assert_allclose(
        pt.basis.conj().T @ V @ pt.basis, np.diag(pt.omega**2), atol=1e-10
    )


def test_gradient_peak_approaches_continuum_speed(nn1):
    g = dispersion_grid(nn1, 1024)
    scan = critical_set_scan(g)
    vmax = float(scan.grad_norm.max())
    assert 0.0 < VMAX_CHAIN - vmax < 1e-4
    peak = int(np.argmax(scan.grad_norm[:, 0]))
    theta_peak = 2.0 * np.pi * min(peak, 1024 - peak) / 1024
    assert abs(theta_peak - THETA_INFLECTION) < 0.01


def test_branch_derivatives_against_analytic(grid256):
    node, h = (17,), 2.0 * np.pi / 256
    theta = 2.0 * np.pi * 17 / 256
    grad, hess, det = branch_derivatives(grid256, node, 0)
    dw = np.sin(theta) / chain_omega(theta)
    d2w = (np.cos(theta) - dw * dw) / chain_omega(theta)
    assert abs(grad[0] - dw) < h * h
    assert abs(hess[0, 0] - d2w) < h * h * 10
    assert abs(det - d2w) < h * h * 10


def test_branch_index_validation(grid256):
    with pytest.raises(ValueError, match="out of range"):
        branch_derivatives(grid256, (3,), 1)


def test_crossing_kernel_flags_and_guard():
    # the default gap threshold is deliberately conservative; widen it so the
    # nodes straddling the crossing fall inside the suspicious band
    g = dispersion_grid(crossing_kernel(), 256, delta_cross=1e-2)
    scan = critical_set_scan(g)
    assert scan.fractions()["Cstar"] > 0
    np.testing.assert_array_equal(scan.cstar, g.crossing)
    # the flat branch has identically degenerate curvature, so the union of
    # flags covers everything (crossing nodes count toward Cstar, not Ck)
    assert scan.fractions()["combined"] == 1.0
    # crossings sit where the dispersive branch passes omega = 2
    flagged = np.nonzero(scan.cstar)[0]
    theta_cross = 2.0 * np.pi / 3.0
    angles = 2.0 * np.pi * flagged / 256
    angles = np.minimum(angles, 2.0 * np.pi - angles)
    assert np.all(np.abs(angles - theta_cross) < 0.2)
    with pytest.raises(ValueError, match="crossing"):
        branch_derivatives(g, (int(flagged[0]),), 0)
    grad, _, _ = branch_derivatives(g, (10,), 0)
    assert grad.shape == (1,)


def test_exact_degeneracy_is_not_a_crossing():
    # two identical chains: branches coincide everywhere by symmetry
    twin = InteractionKernel(
        1,
        2,
        {
            (0,): np.eye(2) * 3.0,
            (1,): -np.eye(2),
            (-1,): -np.eye(2),
        },
    )
    g = dispersion_grid(twin, 128)
    assert not g.crossing.any()
    assert np.all(g.cluster_id[:, 0] == g.cluster_id[:, 1])


def test_massless_chain_degenerate_node():
    g = dispersion_grid(build_nn_kernel(1, 1, 0.0), 256)
    scan = critical_set_scan(g)
    assert scan.fractions()["C0"] == 1.0 / 256
    assert scan.c0[0] and not scan.c0[1:].any()


def test_curvature_flags_sit_at_inflection(grid256):
    scan = critical_set_scan(grid256)
    flagged = np.nonzero(scan.ck)[0]
    assert len(flagged) == 4
    angles = 2.0 * np.pi * flagged / 256
    angles = np.minimum(angles, 2.0 * np.pi - angles)
    assert np.all(np.abs(angles - THETA_INFLECTION) < 0.05)


def test_E4_E5_pass_on_chain(grid256):
    verdicts = {r.condition: r.verdict for r in check_E4_E5(grid256)}
    assert verdicts == {"E4": "pass", "E5": "pass"}


def test_E4_fails_on_flat_branch_with_witnesses():
    flat = InteractionKernel(1, 2, {(0,): np.eye(2) * 4.0})
    g = dispersion_grid(flat, 256)
    reports = {r.condition: r for r in check_E4_E5(g)}
    assert reports["E4"].verdict == "fail"
    assert reports["E4"].witnesses


def test_E5_pass_on_disjoint_band_pair():
    # two chains with different masses: bands [1, sqrt 5] and [2, sqrt 8]
    pair = InteractionKernel(
        1,
        2,
        {
            (0,): np.diag([3.0, 6.0]),
            (1,): -np.eye(2),
            (-1,): -np.eye(2),
        },
    )
    g = dispersion_grid(pair, 256)
    verdicts = {r.condition: r.verdict for r in check_E4_E5(g)}
    assert verdicts["E4"] == "pass" and verdicts["E5"] == "pass"
    assert not g.crossing.any()


def test_ES_skipped_when_no_degenerate_nodes(grid256):
    dens = white_noise_density(1.0, 1.0, 1, 1, 256)
    rep = check_ES(grid256, dens)
    assert rep.verdict == "pass"
    assert "skip" in rep.note


def test_ES_fails_for_massless_chain():
    g = dispersion_grid(build_nn_kernel(1, 1, 0.0), 256)
    dens = triangular_density(2, 1, 1.0, 1.0, 256)
    rep = check_ES(g, dens)
    assert rep.verdict == "fail"
    assert rep.witnesses[0]["value"] >= 1.8


def test_ES_passes_for_massless_3d():
    g = dispersion_grid(build_nn_kernel(3, 1, 0.0), 32)
    dens = white_noise_density(1.0, 1.0, 1, 3, 32)
    rep = check_ES(g, dens)
    assert rep.verdict == "pass"


def test_dispersion_csv_layout(grid64):
    scan = critical_set_scan(grid64)
    buf = io.StringIO()
    write_dispersion_csv(grid64, scan, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "theta_1,k,omega_k,grad_norm,D_k,flags"
    assert len(lines) == 1 + 64
    buf2 = io.StringIO()
    write_dispersion_csv(grid64, scan, buf2)
    assert buf.getvalue() == buf2.getvalue()


def test_grid_requires_even_resolution(nn1):
    with pytest.raises(ValueError):
        dispersion_grid(nn1, 63)
