"""Time evolution of lattice displacement/velocity fields.

The second-order dynamics u'' = -V * u is solved exactly in Fourier space: at
each grid angle the state (uhat, vhat) rotates under the matrix exponential

    Ghat(t) = [[cos(Omega t),        Omega^-1 sin(Omega t)],
               [-Omega sin(Omega t), cos(Omega t)        ]],

where Omega is the positive square root of the symbol.  Omega^-1 sin(Omega t)
is realized as t * sinc(Omega t), which is regular at zero frequency and gives
the free block [[1, t], [0, 1]] there.  A real-space Runge-Kutta integrator is
kept as an independent cross-check of the spectral route.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._lattice import forward_fft, inverse_fft, real_part_checked
from .kernel import InteractionKernel
from .spectral import (
    DELTA_CROSS,
    DELTA_HESS,
    DELTA_NULL,
    DispersionGrid,
    SpectralPoint,
    critical_set_scan,
    dispersion_grid,
)

__all__ = [
    "FieldState",
    "PropagatorBlocks",
    "propagator_blocks",
    "evolve",
    "evolve_ensemble",
    "reference_evolve_ode",
    "green_function",
    "truncated_green",
    "hamiltonian",
]

_IMAG_TOL = 1e-6


@dataclass(eq=False)
class FieldState:
    """Displacement u and velocity v on the periodic lattice, shape (L,)*d + (n,)."""

    u: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.u.shape != self.v.shape:
            raise ValueError("u and v must have identical shapes")
        if self.u.ndim < 2:
            raise ValueError("fields need grid axes plus one component axis")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise ValueError("field values must be finite")

    @property
    def L(self) -> int:
        return self.u.shape[0]

    @property
    def n(self) -> int:
        return self.u.shape[-1]

    @property
    def d(self) -> int:
        return self.u.ndim - 1

    def copy(self) -> "FieldState":
        return FieldState(self.u.copy(), self.v.copy(), self.t)


@dataclass(eq=False)
class PropagatorBlocks:
    """The four n x n blocks of Ghat(t) at one theta."""

    cos_block: np.ndarray
    sinc_block: np.ndarray       # Omega^-1 sin(Omega t) = t sinc(Omega t)
    neg_sin_block: np.ndarray    # -Omega sin(Omega t)
    t: float

    def matrix(self) -> np.ndarray:
        top = np.concatenate([self.cos_block, self.sinc_block], axis=-1)
        bot = np.concatenate([self.neg_sin_block, self.cos_block], axis=-1)
        return np.concatenate([top, bot], axis=-2)


def _rotation_factors(omega: np.ndarray, t: float):
    """cos, t*sinc and -omega*sin factors of the phase rotation, elementwise."""
    c = np.cos(omega * t)
    s = t * np.sinc(omega * t / np.pi)
    ns = -omega * np.sin(omega * t)
    return c, s, ns


def propagator_blocks(point: SpectralPoint, t: float) -> PropagatorBlocks:
    """Exact propagator blocks at one theta from its eigendata."""
    B = point.basis
    c, s, ns = _rotation_factors(point.omega, float(t))
    def conjugate(diag):
        return B @ (diag[:, None] * B.conj().T)
    return PropagatorBlocks(
        cos_block=conjugate(c),
        sinc_block=conjugate(s),
        neg_sin_block=conjugate(ns),
        t=float(t),
    )


def _grid_for(kernel: InteractionKernel, L: int, grid: DispersionGrid | None) -> DispersionGrid:
    if grid is not None:
        if grid.L != L or grid.kernel is not kernel and grid.kernel != kernel:
            raise ValueError("provided grid does not match kernel/resolution")
        return grid
    return dispersion_grid(kernel, L)


def _apply_rotation(grid: DispersionGrid, t: float, uhat: np.ndarray, vhat: np.ndarray):
    """Rotate stacked Fourier fields (..., *grid, n) by Ghat(t) nodewise."""
    B = grid.basis
    c, s, ns = _rotation_factors(grid.omega, t)
    a = np.einsum("...kj,...j->...k", np.conj(np.swapaxes(B, -1, -2)), uhat)
    b = np.einsum("...kj,...j->...k", np.conj(np.swapaxes(B, -1, -2)), vhat)
    a2 = c * a + s * b
    b2 = ns * a + c * b
    return (
        np.einsum("...jk,...k->...j", B, a2),
        np.einsum("...jk,...k->...j", B, b2),
    )


def evolve(state: FieldState, kernel: InteractionKernel, t: float,
           grid: DispersionGrid | None = None) -> FieldState:
    """Propagate a state by time t through the spectral solver.

    Passing a prebuilt dispersion grid of matching resolution avoids repeated
    diagonalization when evolving many states.
    """
    if state.n != kernel.n or state.d != kernel.d:
        raise ValueError("state and kernel dimensions disagree")
    grid = _grid_for(kernel, state.L, grid)
    d = kernel.d
    uhat = forward_fft(state.u, d)
    vhat = forward_fft(state.v, d)
    uhat2, vhat2 = _apply_rotation(grid, float(t), uhat, vhat)
    u2 = real_part_checked(inverse_fft(uhat2, d), _IMAG_TOL, "evolve")
    v2 = real_part_checked(inverse_fft(vhat2, d), _IMAG_TOL, "evolve")
    return FieldState(u2, v2, state.t + float(t))


def evolve_ensemble(states, kernel: InteractionKernel, t: float,
                    grid: DispersionGrid | None = None) -> list:
    """Evolve equal-shape states by t sharing one diagonalization and batched FFTs."""
    states = list(states)
    if not states:
        raise ValueError("empty ensemble")
    L, d = states[0].L, states[0].d
    if any(s.L != L or s.d != d or s.n != kernel.n for s in states):
        raise ValueError("ensemble states must share one lattice shape")
    grid = _grid_for(kernel, L, grid)
    axes = tuple(range(1, d + 1))
    scale = float(L) ** d
    U = np.stack([s.u for s in states])
    V = np.stack([s.v for s in states])
    uhat = np.fft.ifftn(U, axes=axes) * scale
    vhat = np.fft.ifftn(V, axes=axes) * scale
    uhat2, vhat2 = _apply_rotation(grid, float(t), uhat, vhat)
    U2 = real_part_checked(np.fft.fftn(uhat2, axes=axes) / scale, _IMAG_TOL, "evolve_ensemble")
    V2 = real_part_checked(np.fft.fftn(vhat2, axes=axes) / scale, _IMAG_TOL, "evolve_ensemble")
    return [
        FieldState(U2[i], V2[i], states[i].t + float(t)) for i in range(len(states))
    ]


def reference_evolve_ode(state: FieldState, kernel: InteractionKernel, t: float,
                         dt: float) -> FieldState:
    """Classical RK4 integration of u' = v, v' = -V * u in real space.

    Independent of the Fourier route: the force is evaluated by direct periodic
    convolution with the kernel stencil.  dt must satisfy dt <= 0.1 / omega_max.
    """
    if state.n != kernel.n or state.d != kernel.d:
        raise ValueError("state and kernel dimensions disagree")
    if dt <= 0:
        raise ValueError("dt must be positive")
    w = np.linalg.eigvalsh(kernel.symbol_grid(state.L))
    omega_max = float(np.sqrt(max(w.max(), 0.0)))
    if omega_max > 0 and dt > 0.1 / omega_max:
        raise ValueError(
            f"dt={dt} too large for max frequency {omega_max:.3f}; need dt <= {0.1 / omega_max:.3e}"
        )
    steps = max(1, int(math.ceil(abs(t) / dt)))
    h = float(t) / steps
    u = state.u.copy()
    v = state.v.copy()
    force = lambda uu: -kernel.convolve(uu)
    for _ in range(steps):
        k1u, k1v = v, force(u)
        k2u, k2v = v + 0.5 * h * k1v, force(u + 0.5 * h * k1u)
        k3u, k3v = v + 0.5 * h * k2v, force(u + 0.5 * h * k2u)
        k4u, k4v = v + h * k3v, force(u + h * k3u)
        u = u + (h / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
        v = v + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return FieldState(u, v, state.t + float(t))


def _propagator_grid_matrix(grid: DispersionGrid, t: float) -> np.ndarray:
    """Full Ghat(t) as (*grid, 2n, 2n) complex."""
    B = grid.basis
    n = grid.n
    c, s, ns = _rotation_factors(grid.omega, t)
    def conjugate(diag):
        return np.einsum("...ik,...k,...jk->...ij", B, diag, B.conj())
    C = conjugate(c)
    S = conjugate(s)
    N = conjugate(ns)
    shape = C.shape[:-2] + (2 * n, 2 * n)
    G = np.empty(shape, dtype=complex)
    G[..., :n, :n] = C
    G[..., :n, n:] = S
    G[..., n:, :n] = N
    G[..., n:, n:] = C
    return G


def _check_wraparound(grid: DispersionGrid, t: float) -> float:
    vmax = grid.max_group_velocity()
    if vmax * abs(t) >= grid.L / 2.0:
        raise ValueError(
            f"propagation cone v_max*|t| = {vmax * abs(t):.1f} reaches the periodic "
            f"boundary (L/2 = {grid.L / 2:.0f}); enlarge L or reduce t"
        )
    return vmax


def green_function(kernel: InteractionKernel, t: float, L: int,
                   grid: DispersionGrid | None = None) -> np.ndarray:
    """Real-space propagator kernel G(t, x), shape (L,)*d + (2n, 2n).

    Columns are the response to unit initial data; x is indexed modulo L with
    the propagation cone guarded against wraparound.
    """
    grid = _grid_for(kernel, L, grid)
    _check_wraparound(grid, t)
    Ghat = _propagator_grid_matrix(grid, float(t))
    G = inverse_fft(Ghat, kernel.d)
    return real_part_checked(G, _IMAG_TOL, "green_function")


def _chebyshev_distance_steps(mask: np.ndarray, max_steps: int) -> np.ndarray:
    """Grid Chebyshev distance (in steps, periodic) to the flagged set,
    saturated at max_steps + 1."""
    d = mask.ndim
    INF = np.iinfo(np.int32).max // 2
    dist = np.where(mask, 0, INF).astype(np.int32)
    shifts = [s for s in np.ndindex(*([3] * d))]
    for _ in range(max_steps):
        best = dist
        for s in shifts:
            shift = tuple(int(c) - 1 for c in s)
            if all(c == 0 for c in shift):
                continue
            best = np.minimum(best, np.roll(dist, shift, axis=tuple(range(d))) + 1)
        if np.array_equal(best, dist):
            break
        dist = best
    return np.minimum(dist, max_steps + 1)


def _smooth_ramp(x: np.ndarray) -> np.ndarray:
    """C-infinity ramp: 0 below 1/2, 1 above 1, strictly increasing between."""
    u = np.clip((x - 0.5) * 2.0, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(u > 0.0, np.exp(-1.0 / np.where(u > 0.0, u, 1.0)), 0.0)
        b = np.where(u < 1.0, np.exp(-1.0 / np.where(u < 1.0, 1.0 - u, 1.0)), 0.0)
    return a / (a + b)


def _quintic_ramp(x: np.ndarray) -> np.ndarray:
    """C^2 polynomial ramp: 0 below 1/2, 1 above 1."""
    u = np.clip((x - 0.5) * 2.0, 0.0, 1.0)
    return u**3 * (10.0 - 15.0 * u + 6.0 * u**2)


_RAMPS = {"smooth": _smooth_ramp, "quintic": _quintic_ramp}


def truncated_green(kernel: InteractionKernel, t: float, L: int, eps: float,
                    grid: DispersionGrid | None = None,
                    delta_cross: float = DELTA_CROSS,
                    delta_hess: float = DELTA_HESS,
                    delta_null: float = DELTA_NULL,
                    ramp: str = "smooth") -> np.ndarray:
    """Green's function with critical grid neighbourhoods cut out in theta.

    The multiplier g(theta) = ramp(dist(theta, flagged cells) / eps) vanishes
    within eps/2 of every flagged cell and equals one beyond eps (distances in
    the grid Chebyshev metric scaled to angle units).  Away from the cut the
    phase is stationary only on nondegenerate sets, so the sup norm decays at
    the dimensional rate t^{-d/2}.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if ramp not in _RAMPS:
        raise ValueError(f"unknown ramp {ramp!r}; choose from {sorted(_RAMPS)}")
    grid = _grid_for(kernel, L, grid)
    _check_wraparound(grid, t)
    Ghat = _propagator_grid_matrix(grid, float(t))
    scan = critical_set_scan(grid, delta_cross, delta_hess, delta_null)
    flagged = scan.combined
    if eps > 0 and np.any(flagged):
        h = 2.0 * np.pi / L
        max_steps = int(math.ceil(eps / h)) + 1
        dist = _chebyshev_distance_steps(flagged, max_steps).astype(float) * h
        g = _RAMPS[ramp](dist / eps)
        if not np.any(g > 0):
            raise ValueError("cutoff removes the entire grid; reduce eps")
        Ghat = Ghat * g[..., None, None]
    G = inverse_fft(Ghat, kernel.d)
    return real_part_checked(G, _IMAG_TOL, "truncated_green")


def hamiltonian(state: FieldState, kernel: InteractionKernel) -> float:
    """Energy 0.5 sum |v|^2 + 0.5 sum u . (V * u); conserved by evolve."""
    if state.n != kernel.n or state.d != kernel.d:
        raise ValueError("state and kernel dimensions disagree")
    kinetic = 0.5 * float(np.sum(state.v**2))
    potential = 0.5 * float(np.sum(state.u * kernel.convolve(state.u)))
    return kinetic + potential
