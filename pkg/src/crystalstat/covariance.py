"""Covariance transport, its long-time limit, and equilibrium diagnostics.

The evolved spectral density is the exact conjugation qhat_t = Ghat qhat_0 Ghat*.
Its weak long-time limit averages out the oscillatory cross terms: in the
eigenbasis of the symbol only entries coupling equal-frequency clusters
survive, which is the nodewise projection formula implemented here.  Matching
velocity and displacement temperatures (white noise with T0 = 0) reproduce the
Gibbs density (T1/2) diag(Vhat^-1, I) as the limit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._lattice import phase_grid, real_part_checked, theta_axis
from .dynamics import _propagator_grid_matrix
from .fields import SpectralDensity
from .kernel import ConditionReport
from .spectral import DELTA_NULL, DispersionGrid, check_ES

__all__ = [
    "TestField",
    "LimitDensity",
    "CovarianceTable",
    "evolve_density",
    "limit_density",
    "gibbs_density",
    "covariance_from_density",
    "quadratic_form",
    "mixing_integral",
]


@dataclass(eq=False)
class TestField:
    """Finitely supported 2n-component test field.

    sites is an integer array (k, d); values is (k, 2n), row r being the
    (u-part, v-part) coefficients attached to site r.
    """

    __test__ = False  # not a test case despite the class name

    sites: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.sites = np.atleast_2d(np.asarray(self.sites, dtype=int))
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.sites.shape[0] != self.values.shape[0]:
            raise ValueError("one value row per site required")

    @property
    def d(self) -> int:
        return self.sites.shape[1]

    @classmethod
    def delta(cls, d: int, n: int, component: int = 0, site=None) -> "TestField":
        """Unit mass on one site and one of the 2n components (u block first)."""
        if site is None:
            site = (0,) * d
        values = np.zeros((1, 2 * n))
        values[0, component] = 1.0
        return cls(sites=np.asarray([site]), values=values)

    def fourier(self, L: int) -> np.ndarray:
        """Psihat(theta) = sum_x Psi(x) e^{i x.theta} on the grid, (*grid, 2n)."""
        d = self.d
        out = np.zeros((L,) * d + (self.values.shape[1],), dtype=complex)
        for x, val in zip(self.sites, self.values):
            out += phase_grid(x, L, +1)[..., None] * val
        return out

    def pair(self, state) -> float:
        """<Y, Psi> = sum_x u(x).Psi^0(x) + v(x).Psi^1(x)."""
        n = state.n
        total = 0.0
        for x, val in zip(self.sites, self.values):
            idx = tuple(int(c) % state.L for c in x)
            total += float(state.u[idx] @ val[:n] + state.v[idx] @ val[n:])
        return total


@dataclass(eq=False)
class LimitDensity(SpectralDensity):
    """Long-time covariance density plus quadrature exclusions.

    excluded marks nodes where the limit needed an inverse frequency that the
    degenerate symbol does not provide; they are skipped (with their measure
    fraction) wherever the density is integrated.  cluster_id records, per node
    and branch, the equal-frequency grouping the projection kept.
    """

    excluded: np.ndarray = None
    cluster_id: np.ndarray = None

    def __post_init__(self):
        super().__post_init__()
        if self.excluded is None:
            self.excluded = np.zeros((self.L,) * self.d, dtype=bool)
        if self.cluster_id is None:
            self.cluster_id = np.zeros((self.L,) * self.d + (self.n,), dtype=int)

    @property
    def excluded_fraction(self) -> float:
        return float(self.excluded.mean())


def evolve_density(q0: SpectralDensity, grid: DispersionGrid, t: float) -> SpectralDensity:
    """Transport a spectral density through time t: qhat_t = Ghat qhat_0 Ghat*."""
    _require_match(q0, grid)
    G = _propagator_grid_matrix(grid, float(t))
    qt = np.einsum("...ij,...jk,...lk->...il", G, q0.matrix, G.conj())
    qt = 0.5 * (qt + np.conj(np.swapaxes(qt, -1, -2)))
    return SpectralDensity(
        L=q0.L, d=q0.d, n=q0.n, matrix=qt,
        provenance=f"evolved(t={t}):{q0.provenance}",
    )


def _require_match(density: SpectralDensity, grid: DispersionGrid) -> None:
    if density.L != grid.L or density.d != grid.d or density.n != grid.n:
        raise ValueError(
            f"density (L={density.L}, d={density.d}, n={density.n}) does not match "
            f"grid (L={grid.L}, d={grid.d}, n={grid.n})"
        )


def _eigenbasis_blocks(grid: DispersionGrid, matrix: np.ndarray):
    """Transform the four blocks into the symbol eigenbasis per node."""
    n = grid.n
    B = grid.basis
    Bh = np.conj(np.swapaxes(B, -1, -2))
    blocks = {}
    for i in (0, 1):
        for j in (0, 1):
            blk = matrix[..., i * n:(i + 1) * n, j * n:(j + 1) * n]
            blocks[i, j] = Bh @ blk @ B
    return blocks


def limit_density(q0: SpectralDensity, grid: DispersionGrid,
                  es_report: Optional[ConditionReport] = None,
                  delta_null: float = DELTA_NULL) -> LimitDensity:
    """Long-time limit of the transported density.

    In the symbol eigenbasis the four blocks are averaged into

        M00 = (A00 + W^-1 A11 W^-1) / 2      M01 = (A01 - W^-1 A10 W) / 2
        M10 = (A10 - W A01 W^-1) / 2         M11 = (A11 + W A00 W) / 2

    with W = diag(omega), and only entries coupling equal-frequency clusters
    are kept.  Inverse frequencies are pseudoinverses with threshold
    delta_null; nodes that genuinely need an unavailable inverse are marked
    excluded.  When degenerate nodes exist the summability check (ES) must not
    have failed; it is evaluated here if no report is supplied.
    """
    _require_match(q0, grid)
    omega = grid.omega
    c0 = omega.min(axis=-1) <= delta_null
    if np.any(c0):
        report = es_report if es_report is not None else check_ES(grid, q0, delta_null)
        if report.verdict == "fail":
            raise ValueError(
                "summability condition ES fails while the symbol degenerates; "
                "the covariance limit does not exist"
            )
    A = _eigenbasis_blocks(grid, q0.matrix)
    w_ok = omega > delta_null
    winv = np.where(w_ok, 1.0 / np.where(w_ok, omega, 1.0), 0.0)
    wl = omega[..., :, None]   # left factor index k
    wr = omega[..., None, :]   # right factor index l
    wil = winv[..., :, None]
    wir = winv[..., None, :]
    M = {
        (0, 0): 0.5 * (A[0, 0] + wil * A[1, 1] * wir),
        (0, 1): 0.5 * (A[0, 1] - wil * A[1, 0] * wr),
        (1, 0): 0.5 * (A[1, 0] - wl * A[0, 1] * wir),
        (1, 1): 0.5 * (A[1, 1] + wl * A[0, 0] * wr),
    }
    same_cluster = grid.cluster_id[..., :, None] == grid.cluster_id[..., None, :]
    n = grid.n
    B = grid.basis
    Bh = np.conj(np.swapaxes(B, -1, -2))
    out = np.empty((grid.L,) * grid.d + (2 * n, 2 * n), dtype=complex)
    for (i, j), blk in M.items():
        masked = np.where(same_cluster, blk, 0.0)
        out[..., i * n:(i + 1) * n, j * n:(j + 1) * n] = B @ masked @ Bh
    out = 0.5 * (out + np.conj(np.swapaxes(out, -1, -2)))

    # a degenerate node is excluded if any inverse-weighted source block is
    # live there: the pseudoinverse silently dropped part of the measure
    tol = 1e-14 * (1.0 + float(np.max(np.abs(q0.matrix))))
    needs_inverse = (
        np.max(np.abs(q0.block(0, 1)), axis=(-2, -1)) > tol
    ) | (
        np.max(np.abs(q0.block(1, 0)), axis=(-2, -1)) > tol
    ) | (
        np.max(np.abs(q0.block(1, 1)), axis=(-2, -1)) > tol
    )
    excluded = c0 & needs_inverse
    return LimitDensity(
        L=q0.L, d=q0.d, n=q0.n, matrix=out,
        provenance=f"limit:{q0.provenance}",
        excluded=excluded,
        cluster_id=grid.cluster_id.copy(),
    )


def gibbs_density(T1: float, grid: DispersionGrid,
                  delta_null: float = DELTA_NULL) -> LimitDensity:
    """Equilibrium density (T1/2) diag(Vhat^-1, I) at temperature T1.

    Nodes with a degenerate symbol have no inverse and are excluded.
    """
    if T1 < 0:
        raise ValueError("temperature must be nonnegative")
    omega = grid.omega
    w_ok = omega > delta_null
    winv2 = np.where(w_ok, 1.0 / np.where(w_ok, omega**2, 1.0), 0.0)
    B = grid.basis
    Vinv = np.einsum("...ik,...k,...jk->...ij", B, winv2, B.conj())
    n = grid.n
    out = np.zeros((grid.L,) * grid.d + (2 * n, 2 * n), dtype=complex)
    out[..., :n, :n] = 0.5 * T1 * Vinv
    idx = np.arange(n)
    out[..., n + idx, n + idx] = 0.5 * T1
    return LimitDensity(
        L=grid.L, d=grid.d, n=grid.n, matrix=out,
        provenance=f"gibbs(T1={T1})",
        excluded=~np.all(w_ok, axis=-1),
        cluster_id=grid.cluster_id.copy(),
    )


@dataclass(eq=False)
class CovarianceTable:
    """Real-space covariance matrices at requested offsets."""

    offsets: list
    matrices: dict
    excluded_fraction: float

    def matrix(self, z) -> np.ndarray:
        return self.matrices[tuple(int(c) for c in z)]


def covariance_from_density(density: SpectralDensity, offsets) -> CovarianceTable:
    """Inverse Fourier evaluation q(z) = L^-d sum_theta e^{-i z.theta} qhat(theta).

    Excluded nodes of a limit density contribute nothing; their measure
    fraction is reported so callers can fold it into error budgets.
    """
    L, d = density.L, density.d
    excluded = getattr(density, "excluded", None)
    matrix = density.matrix
    if excluded is not None and np.any(excluded):
        matrix = np.where(excluded[..., None, None], 0.0, matrix)
        frac = float(excluded.mean())
    else:
        frac = 0.0
    scale = 1.0 + float(np.max(np.abs(matrix)))
    out = {}
    for z in offsets:
        z = tuple(int(c) for c in z)
        if len(z) != d:
            raise ValueError(f"offset {z} has wrong dimension")
        phase = phase_grid(z, L, -1)
        q = np.sum(phase[..., None, None] * matrix,
                   axis=tuple(range(d))) / float(L) ** d
        out[z] = real_part_checked(q, 1e-8 * scale, f"covariance at offset {z}")
    return CovarianceTable(offsets=[tuple(int(c) for c in z) for z in offsets],
                           matrices=out, excluded_fraction=frac)


def quadratic_form(density: SpectralDensity, psi: TestField) -> float:
    """Variance <q Psi, Psi> of the linear functional <Y, Psi>.

    Computed along two independent routes, nodewise in Fourier space and from
    real-space covariance values at pairwise site differences, which must agree
    to 1e-8; any worse means broken conventions somewhere upstream.
    """
    L, d = density.L, density.d
    psihat = psi.fourier(L)
    excluded = getattr(density, "excluded", None)
    matrix = density.matrix
    if excluded is not None and np.any(excluded):
        matrix = np.where(excluded[..., None, None], 0.0, matrix)
    nodewise = np.einsum("...i,...ij,...j->...", np.conj(psihat), matrix, psihat)
    q_spectral = float(np.real(nodewise.sum()) / float(L) ** d)

    diffs = {
        tuple(int(c) for c in (xa - xb))
        for xa in psi.sites
        for xb in psi.sites
    }
    table = covariance_from_density(density, sorted(diffs))
    q_real = 0.0
    for xa, va in zip(psi.sites, psi.values):
        for xb, vb in zip(psi.sites, psi.values):
            q_real += float(va @ table.matrix(tuple(xa - xb)) @ vb)

    gap = abs(q_spectral - q_real)
    if gap > 1e-8 * (1.0 + abs(q_spectral)):
        raise AssertionError(
            f"spectral and real-space quadratic forms disagree by {gap:.3e}"
        )
    if q_spectral < -1e-8:
        raise ValueError(f"quadratic form is negative ({q_spectral:.3e}); density not PSD")
    return max(q_spectral, 0.0)


def mixing_integral(limit: LimitDensity, grid: DispersionGrid, psi1: TestField,
                    psi2: TestField, t: float) -> float:
    """Equilibrium cross-correlation E <Y(t), Psi1> <Y(0), Psi2>.

    Evaluated as the Riemann sum of Psihat1* Ghat(t) qhat_inf Psihat2 over
    unexcluded nodes; decays to zero as t grows, which is the mixing property
    of the limit measure.
    """
    _require_match(limit, grid)
    G = _propagator_grid_matrix(grid, float(t))
    p1 = psi1.fourier(grid.L)
    p2 = psi2.fourier(grid.L)
    matrix = limit.matrix
    if np.any(limit.excluded):
        matrix = np.where(limit.excluded[..., None, None], 0.0, matrix)
    integrand = np.einsum("...i,...ij,...jk,...k->...", np.conj(p1), G, matrix, p2)
    total = complex(integrand.sum() / float(grid.L) ** grid.d)
    if abs(total.imag) > 1e-8 * (1.0 + abs(total.real)):
        raise ValueError(f"mixing integral has imaginary residue {total.imag:.3e}")
    return float(total.real)
