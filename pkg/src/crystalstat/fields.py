"""Translation-invariant random initial measures and their samplers.

A measure is described by its spectral density: per grid angle a Hermitian PSD
2n x 2n matrix qhat(theta) whose blocks are the Fourier transforms of the
displacement/velocity correlation functions.  Gaussian fields with that
covariance are drawn by colouring iid real white noise in Fourier space with
the nodewise Hermitian square root; reality of the samples is automatic since
white noise drawn in real space carries the exact conjugate pairing
What(-theta) = conj(What(theta)), including the self-conjugate nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._lattice import forward_fft, inverse_fft, phase_grid, real_part_checked, theta_axis
from .dynamics import FieldState

__all__ = [
    "SpectralDensity",
    "triangular_density",
    "white_noise_density",
    "density_from_covariance",
    "density_to_jsonable",
    "density_from_jsonable",
    "gaussian_sample",
    "gaussian_ensemble",
    "nonlinear_transform_sample",
    "empirical_mixing_support",
]

@dataclass(eq=False)
class SpectralDensity:
    """Spectral density of a translation-invariant measure on the L^d lattice.

    matrix has shape (L,)*d + (2n, 2n); the (i, j) block (i, j in {0, 1}) is
    the density of the (u, v) cross-covariance.  resample, when set, rebuilds
    the same analytic density at another resolution (used by refinement checks).
    """

    L: int
    d: int
    n: int
    matrix: np.ndarray
    provenance: str = "analytic"
    resample: Optional[Callable[[int], "SpectralDensity"]] = None
    _sqrt_cache: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        expected = (self.L,) * self.d + (2 * self.n, 2 * self.n)
        if self.matrix.shape != expected:
            raise ValueError(f"density matrix must have shape {expected}")
        herm_gap = float(np.max(np.abs(self.matrix - np.conj(np.swapaxes(self.matrix, -1, -2)))))
        scale = 1.0 + float(np.max(np.abs(self.matrix)))
        if herm_gap > 1e-8 * scale:
            raise ValueError(f"density is not Hermitian (gap {herm_gap:.3e})")
        # reality of the underlying field: qhat(-theta) = conj(qhat(theta))
        rev = self.matrix
        for axis in range(self.d):
            rev = np.flip(np.roll(rev, -1, axis=axis), axis=axis)
        reality_gap = float(np.max(np.abs(rev - np.conj(self.matrix))))
        if reality_gap > 1e-8 * scale:
            raise ValueError(f"density violates reality symmetry (gap {reality_gap:.3e})")

    def block(self, i: int, j: int) -> np.ndarray:
        n = self.n
        return self.matrix[..., i * n:(i + 1) * n, j * n:(j + 1) * n]

    def hermitian_sqrt(self) -> np.ndarray:
        """Nodewise PSD square root, cached; raises if any node is significantly
        indefinite (eigenvalues below -1e-10 * scale)."""
        if self._sqrt_cache is None:
            w, U = np.linalg.eigh(self.matrix)
            scale = 1.0 + float(np.abs(w).max())
            if float(w.min()) < -1e-10 * scale:
                flat = int(np.argmin(w.min(axis=-1)))
                node = np.unravel_index(flat, (self.L,) * self.d)
                raise ValueError(
                    f"density is not positive semidefinite at node {node} "
                    f"(eigenvalue {float(w.min()):.3e})"
                )
            w = np.clip(w, 0.0, None)
            self._sqrt_cache = np.einsum(
                "...ik,...k,...jk->...ij", U, np.sqrt(w), U.conj()
            )
        return self._sqrt_cache


def triangular_density(nu0: int, d: int, T0: float, T1: float, L: int) -> SpectralDensity:
    """Scalar (n = 1) density with hat-function correlations.

    Per axis the correlation spectrum is (1 - cos(nu0 theta)) / (1 - cos theta),
    the Fourier transform of the triangular hat max(nu0 - |z|, 0); the value at
    theta = 0 is the removable limit nu0^2.  Displacements and velocities are
    uncorrelated with temperatures T0 and T1.
    """
    if nu0 < 1 or int(nu0) != nu0:
        raise ValueError("nu0 must be a positive integer")
    if T0 < 0 or T1 < 0:
        raise ValueError("temperatures must be nonnegative")
    th = theta_axis(L)
    denom = 1.0 - np.cos(th)
    numer = 1.0 - np.cos(nu0 * th)
    axis_profile = np.where(denom > 1e-12, numer / np.where(denom > 1e-12, denom, 1.0),
                            float(nu0) ** 2)
    profile = np.ones((L,) * d)
    for axis in range(d):
        shape = [1] * d
        shape[axis] = L
        profile = profile * axis_profile.reshape(shape)
    matrix = np.zeros((L,) * d + (2, 2), dtype=complex)
    matrix[..., 0, 0] = T0 * profile
    matrix[..., 1, 1] = T1 * profile
    return SpectralDensity(
        L=L, d=d, n=1, matrix=matrix,
        provenance=f"analytic:triangular(nu0={nu0},T0={T0},T1={T1})",
        resample=lambda L2: triangular_density(nu0, d, T0, T1, L2),
    )


def white_noise_density(T0: float, T1: float, n: int, d: int, L: int) -> SpectralDensity:
    """Site-uncorrelated measure: constant density diag(T0 I, T1 I)."""
    if T0 < 0 or T1 < 0:
        raise ValueError("temperatures must be nonnegative")
    matrix = np.zeros((L,) * d + (2 * n, 2 * n), dtype=complex)
    for k in range(n):
        matrix[..., k, k] = T0
        matrix[..., n + k, n + k] = T1
    return SpectralDensity(
        L=L, d=d, n=n, matrix=matrix,
        provenance=f"analytic:white(T0={T0},T1={T1})",
        resample=lambda L2: white_noise_density(T0, T1, n, d, L2),
    )


def _white_noise_draws(L: int, d: int, n: int, seed: int, indices) -> np.ndarray:
    """Stacked standard-normal fields, one generator per (seed, sample index)."""
    out = np.empty((len(indices),) + (L,) * d + (2 * n,))
    for row, index in enumerate(indices):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))
        out[row] = rng.standard_normal((L,) * d + (2 * n,))
    return out


def gaussian_sample(density: SpectralDensity, seed: int, index: int = 0) -> FieldState:
    """One Gaussian field with the given spectral density, at time 0.

    Deterministic per (seed, index) and independent of generation order, so
    ensembles may be produced in any order or in parallel.
    """
    return gaussian_ensemble(density, 1, seed, start_index=index)[0]


def gaussian_ensemble(density: SpectralDensity, count: int, seed: int,
                      start_index: int = 0) -> list:
    """count iid Gaussian samples drawn at sample indices start_index, ..."""
    if count < 1:
        raise ValueError("count must be positive")
    L, d, n = density.L, density.d, density.n
    R = density.hermitian_sqrt()
    W = _white_noise_draws(L, d, n, seed, range(start_index, start_index + count))
    axes = tuple(range(1, d + 1))
    scale = float(L) ** d
    what = np.fft.ifftn(W, axes=axes) * scale
    yhat = np.einsum("...ij,s...j->s...i", R, what)
    Y = np.fft.fftn(yhat, axes=axes) / scale
    Y = real_part_checked(Y, 1e-6, "gaussian_sample")
    return [FieldState(Y[s][..., :n], Y[s][..., n:], 0.0) for s in range(count)]


def nonlinear_transform_sample(state: FieldState, a0: float, a1: float) -> FieldState:
    """Apply the bounded odd map y -> a tanh(y / a) componentwise.

    Displacements use amplitude a0, velocities a1.  The transform preserves
    translation invariance and zero mean while destroying gaussianity.
    """
    if a0 <= 0 or a1 <= 0:
        raise ValueError("transform amplitudes must be positive")
    return FieldState(
        a0 * np.tanh(state.u / a0),
        a1 * np.tanh(state.v / a1),
        state.t,
    )


def empirical_mixing_support(ensemble, r_max: int) -> dict:
    """Estimate the correlation support radius from an ensemble.

    Returns the largest Chebyshev offset radius |z| <= r_max at which any
    covariance block differs from zero by more than three standard errors,
    together with the per-radius significance table.  Needs at least 100
    samples for the error bars to mean anything.
    """
    ensemble = list(ensemble)
    if len(ensemble) < 100:
        raise ValueError("need at least 100 samples to resolve the support")
    if r_max < 1:
        raise ValueError("r_max must be >= 1")
    from .stats import empirical_covariance

    d = ensemble[0].d
    offsets = [
        z
        for z in np.ndindex(*([2 * r_max + 1] * d))
        if any(c != 0 for c in (np.asarray(z) - r_max))
    ]
    offsets = [tuple(int(c) for c in (np.asarray(z) - r_max)) for z in offsets]
    summary = empirical_covariance(ensemble, offsets)
    radius = 0
    table = {}
    for z in offsets:
        r = max(abs(c) for c in z)
        mean = summary.mean[z]
        se = summary.se[z]
        significant = bool(np.any(np.abs(mean) > 3.0 * np.maximum(se, 1e-300)))
        table.setdefault(r, False)
        table[r] = table[r] or significant
        if significant:
            radius = max(radius, r)
    return {
        "radius": radius,
        "per_radius_significant": {int(k): bool(v) for k, v in sorted(table.items())},
        "samples": len(ensemble),
    }


def density_from_covariance(cov: dict, L: int, clip_negative: bool = True,
                            provenance: str = "empirical") -> SpectralDensity:
    """Assemble a density from finitely many real-space covariance matrices.

    cov maps offsets z (length-d integer tuples) to real (2n, 2n) matrices;
    qhat(theta) = sum_z q(z) e^{i z.theta}.  The input is symmetrized with its
    mirror q(-z) = q(z)^T, so supplying either half or both is fine, and the
    result is Hermitized.  With clip_negative, nodewise negative eigenvalues
    (estimation noise) are projected to zero; otherwise an indefinite result
    raises in the density validator downstream.
    """
    if not cov:
        raise ValueError("empty covariance table")
    half = L // 2

    def reduce_offset(z):
        return tuple(((int(c) + half) % L) - half for c in z)

    table = {}
    for z, mat in cov.items():
        key = reduce_offset(z)
        if key in table:
            raise ValueError(f"duplicate offset {key} (offsets are periodic modulo L)")
        table[key] = np.asarray(mat, dtype=float)
    d = len(next(iter(table)))
    two_n = next(iter(table.values())).shape[0]
    if two_n % 2:
        raise ValueError("covariance matrices must be (2n, 2n)")
    n = two_n // 2
    for z, mat in table.items():
        if mat.shape != (two_n, two_n):
            raise ValueError(f"covariance at {z} has wrong shape {mat.shape}")
    # mirror completion: pairs present on both sides are averaged, lone
    # entries induce q(-z) = q(z)^T, z = 0 is symmetrized
    merged = {}
    for z, mat in table.items():
        if z in merged:
            continue
        mz = reduce_offset(tuple(-c for c in z))
        if mz == z:
            merged[z] = 0.5 * (mat + mat.T)
        elif mz in table:
            avg = 0.5 * (mat + table[mz].T)
            merged[z] = avg
            merged[mz] = avg.T
        else:
            merged[z] = mat
            merged[mz] = mat.T
    out = np.zeros((L,) * d + (two_n, two_n), dtype=complex)
    for z, mat in merged.items():
        out += phase_grid(z, L, +1)[..., None, None] * mat
    out = 0.5 * (out + np.conj(np.swapaxes(out, -1, -2)))
    if clip_negative:
        w, U = np.linalg.eigh(out)
        out = np.einsum("...ik,...k,...jk->...ij", U, np.clip(w, 0.0, None), U.conj())
    return SpectralDensity(L=L, d=d, n=n, matrix=out, provenance=provenance)


def density_to_jsonable(density: SpectralDensity) -> dict:
    """Binary-free JSON form: nested lists of node arrays, split re/im."""
    doc = {
        "L": density.L,
        "d": density.d,
        "n": density.n,
        "provenance": density.provenance,
        "matrix_re": density.matrix.real.tolist(),
        "matrix_im": density.matrix.imag.tolist(),
    }
    excluded = getattr(density, "excluded", None)
    if excluded is not None:
        doc["excluded"] = excluded.tolist()
    cluster_id = getattr(density, "cluster_id", None)
    if cluster_id is not None:
        doc["cluster_id"] = cluster_id.tolist()
    return doc


def density_from_jsonable(doc: dict) -> SpectralDensity:
    known = {"L", "d", "n", "provenance", "matrix_re", "matrix_im",
             "excluded", "cluster_id"}
    extra = set(doc) - known
    if extra:
        raise ValueError(f"unknown density fields: {sorted(extra)}")
    matrix = np.asarray(doc["matrix_re"], dtype=float) + 1j * np.asarray(
        doc["matrix_im"], dtype=float
    )
    base = dict(
        L=int(doc["L"]), d=int(doc["d"]), n=int(doc["n"]),
        matrix=matrix, provenance=str(doc.get("provenance", "file")),
    )
    if "excluded" in doc or "cluster_id" in doc:
        from .covariance import LimitDensity

        extras = {}
        if "excluded" in doc:
            extras["excluded"] = np.asarray(doc["excluded"], dtype=bool)
        if "cluster_id" in doc:
            extras["cluster_id"] = np.asarray(doc["cluster_id"], dtype=int)
        return LimitDensity(**base, **extras)
    return SpectralDensity(**base)
