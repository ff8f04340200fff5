"""Shared conventions for fields on the periodic lattice (Z/L)^d.

Fourier convention used throughout the package:

    ahat(theta_k) = sum_x a(x) exp(+i x . theta_k),   theta_k = 2 pi k / L,
    a(x) = L^-d sum_k ahat(theta_k) exp(-i x . theta_k).

With this convention a lattice convolution (K * a)(x) = sum_y K(x - y) a(y)
becomes nodewise multiplication by the symbol Khat(theta) = sum_z K(z) e^{i z.theta}.
Arrays carry the d grid axes first; component axes trail.
"""

from __future__ import annotations

import numpy as np


def theta_axis(L: int) -> np.ndarray:
    """Grid angles 2 pi k / L for one axis."""
    return 2.0 * np.pi * np.arange(L) / L


def forward_fft(a: np.ndarray, d: int) -> np.ndarray:
    """Lattice Fourier transform over the first d axes (e^{+i x.theta} convention)."""
    axes = tuple(range(d))
    L = a.shape[0]
    return np.fft.ifftn(a, axes=axes) * float(L) ** d


def inverse_fft(ahat: np.ndarray, d: int) -> np.ndarray:
    """Inverse of :func:`forward_fft`."""
    axes = tuple(range(d))
    L = ahat.shape[0]
    return np.fft.fftn(ahat, axes=axes) / float(L) ** d


def phase_grid(z, L: int, sign: int) -> np.ndarray:
    """exp(sign * i * z.theta) evaluated on the full theta grid, shape (L,)*d."""
    z = np.asarray(z, dtype=int)
    d = z.size
    out = np.ones((L,) * d, dtype=complex)
    th = theta_axis(L)
    for axis in range(d):
        factor = np.exp(sign * 1j * z[axis] * th)
        shape = [1] * d
        shape[axis] = L
        out = out * factor.reshape(shape)
    return out


def minimal_image(L: int, d: int) -> np.ndarray:
    """Signed minimal-image coordinate per site, shape (L,)*d + (d,).

    Index x in 0..L-1 maps to the representative in [-L/2, L/2).
    """
    coords = np.arange(L)
    signed = (coords + L // 2) % L - L // 2
    grids = np.meshgrid(*([signed] * d), indexing="ij")
    return np.stack(grids, axis=-1)


def real_part_checked(a: np.ndarray, tol: float, what: str) -> np.ndarray:
    """Drop an imaginary residue after verifying it is below tol (absolute)."""
    resid = float(np.max(np.abs(a.imag))) if np.iscomplexobj(a) else 0.0
    if resid > tol:
        raise ValueError(
            f"{what}: imaginary residue {resid:.3e} exceeds {tol:.1e}; "
            "input violates the reality symmetry"
        )
    return np.ascontiguousarray(a.real) if np.iscomplexobj(a) else a
