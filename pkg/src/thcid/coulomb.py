"""Periodic Coulomb interaction as a Fourier multiplier.

The kernel multiplies mode ``k`` by ``4 pi / |2 pi k|^2`` and kills the zero
mode, in 1D and 3D alike. With the FFT convention used throughout (forward
unnormalized, inverse carrying ``1/n``) :func:`apply_kernel` approximates the
continuum convolution ``int K(x - y) f(y) dy``, so a double integral is
``h * sum_x f(x) (K g)(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from thcid.errors import DegenerateInputError, NumericalError
from thcid.interpolative import InterpolativeBasis, pair_density_row
from thcid.model import OrbitalSet, PeriodicGrid, _frozen

__all__ = [
    "KernelSpec",
    "THCCore",
    "kernel_multiplier",
    "apply_kernel",
    "coulomb_inner",
    "coulomb_norm",
    "coulomb_norms",
    "thc_core_matrix",
    "eri_exact",
    "eri_exact_tensor",
    "NORM_FLOOR",
]

NORM_FLOOR = 1e-14
# largest N for which full N^4 ERI tensors are built
MAX_DENSE_N = 12
_INDEFINITE_TOL = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    grid: PeriodicGrid
    multiplier: np.ndarray

    def real_space(self) -> np.ndarray:
        """Continuum kernel values ``K(x_g)`` on the grid (``n * ifft(multiplier)``)."""
        return (self.grid.ifft(self.multiplier) * self.grid.n).real


@dataclass(frozen=True)
class THCCore:
    V: np.ndarray

    @property
    def N_aux(self) -> int:
        return self.V.shape[0]


def kernel_multiplier(grid: PeriodicGrid) -> KernelSpec:
    k = grid.wavevectors
    k2 = (2 * np.pi) ** 2 * (k**2).sum(axis=1).astype(float)
    mult = np.zeros(grid.n)
    nz = k2 > 0
    mult[nz] = 4 * np.pi / k2[nz]
    return KernelSpec(grid, _frozen(mult))


def apply_kernel(kernel: KernelSpec, f: np.ndarray) -> np.ndarray:
    """Convolve real ``f`` (last axis = grid) with the periodic kernel."""
    g = kernel.grid
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != g.n:
        raise ValueError(f"expected trailing dimension {g.n}, got {f.shape[-1]}")
    return g.ifft(kernel.multiplier * g.fft(f)).real


def coulomb_inner(kernel: KernelSpec, f: np.ndarray, g: np.ndarray) -> float:
    return float(kernel.grid.h * np.dot(f, apply_kernel(kernel, g)))


def _sqrt_checked(val: np.ndarray) -> np.ndarray:
    val = np.asarray(val, dtype=float)
    if np.any(val < -_INDEFINITE_TOL):
        raise NumericalError(f"negative Coulomb self-energy {val.min():.3e}")
    return np.sqrt(np.clip(val, 0.0, None))


def coulomb_norm(kernel: KernelSpec, f: np.ndarray) -> float:
    return float(_sqrt_checked(coulomb_inner(kernel, f, f)))


def coulomb_norms(kernel: KernelSpec, F: np.ndarray) -> np.ndarray:
    """Coulomb seminorms of the rows of ``F`` via Parseval: ``h^2 sum_k mult |F_k|^2``."""
    g = kernel.grid
    spec = g.fft(np.atleast_2d(F))
    energy = g.h**2 * (np.abs(spec) ** 2 @ kernel.multiplier)
    return _sqrt_checked(energy)


def thc_core_matrix(kernel: KernelSpec, basis: InterpolativeBasis) -> THCCore:
    """``V[mu, nu]`` = Coulomb inner product of auxiliary functions ``mu`` and ``nu``."""
    if basis.grid is not None and basis.grid != kernel.grid:
        raise ValueError("basis and kernel live on different grids")
    KP = apply_kernel(kernel, basis.P)
    V = kernel.grid.h * (basis.P @ KP.T)
    V = 0.5 * (V + V.T)
    return THCCore(V)


def eri_exact(kernel: KernelSpec, orbitals: OrbitalSet, i: int, j: int, k: int, l: int) -> float:
    """``<ij|kl>`` by direct quadrature of the pair densities (zero-based indices)."""
    rho_ij = pair_density_row(orbitals, i, j)
    rho_kl = pair_density_row(orbitals, k, l)
    return coulomb_inner(kernel, rho_ij, rho_kl)


def eri_exact_tensor(kernel: KernelSpec, orbitals: OrbitalSet) -> np.ndarray:
    """Full ``(N, N, N, N)`` reference tensor. Small ``N`` only."""
    N = orbitals.N
    if N > MAX_DENSE_N:
        raise ValueError(f"refusing to materialize the N^4 tensor for N={N} > {MAX_DENSE_N}")
    psi = orbitals.values
    rho = (psi[:, None, :] * psi[None, :, :]).reshape(N * N, -1)
    G = kernel.grid.h * (rho @ apply_kernel(kernel, rho).T)
    G = 0.5 * (G + G.T)
    return G.reshape(N, N, N, N)


def check_norm(value: float, what: str) -> float:
    if not value > NORM_FLOOR:
        raise DegenerateInputError(f"{what} = {value:.3e} is too small to divide by")
    return value
