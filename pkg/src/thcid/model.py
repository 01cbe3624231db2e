"""Synthetic orbital sets on periodic grids.

Orbitals are the lowest eigenfunctions of ``H = -1/2 Laplacian + V`` on the
unit torus in one or three dimensions, with ``V`` a random band-limited
potential. The Laplacian is Fourier-spectral and assembled densely.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from thcid.errors import NumericalError

__all__ = [
    "PeriodicGrid",
    "Potential",
    "OrbitalSet",
    "build_grid",
    "random_potential",
    "solve_orbitals",
    "laplacian_matrix",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform grid on the unit torus ``[0, 1)^dim`` with ``m`` points per axis.

    Grid points are flattened in C order, so in 3D the flat index of
    ``(a, b, c)`` is ``a*m*m + b*m + c``.
    """

    dim: int
    m: int

    @property
    def n(self) -> int:
        return self.m**self.dim

    @property
    def h(self) -> float:
        """Quadrature weight of a single grid point (cell volume / n)."""
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.m,) * self.dim

    def coordinates(self) -> np.ndarray:
        """Point coordinates, shape ``(n, dim)``, components in ``[0, 1)``."""
        axes = np.meshgrid(*([np.arange(self.m) / self.m] * self.dim), indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=1)

    @cached_property
    def wavevectors(self) -> np.ndarray:
        """Integer wave vectors of the FFT modes, shape ``(n, dim)``.

        Ordering follows ``np.fft.fftn`` on an array of shape ``self.shape``;
        each component lies in ``[-m/2, m/2)``.
        """
        k1 = np.fft.fftfreq(self.m, d=1.0 / self.m).astype(np.int64)
        axes = np.meshgrid(*([k1] * self.dim), indexing="ij")
        return _frozen(np.stack([a.ravel() for a in axes], axis=1))

    def fft(self, f: np.ndarray) -> np.ndarray:
        """Unnormalized forward FFT over the trailing grid axis of ``f``."""
        lead = f.shape[:-1]
        out = np.fft.fftn(f.reshape(lead + self.shape), axes=range(-self.dim, 0))
        return out.reshape(lead + (self.n,))

    def ifft(self, f: np.ndarray) -> np.ndarray:
        """Inverse FFT (carries the 1/n factor) over the trailing grid axis."""
        lead = f.shape[:-1]
        out = np.fft.ifftn(f.reshape(lead + self.shape), axes=range(-self.dim, 0))
        return out.reshape(lead + (self.n,))


@dataclass(frozen=True)
class Potential:
    grid: PeriodicGrid
    values: np.ndarray
    num_modes: int
    amplitude: float
    seed: int


@dataclass(frozen=True)
class OrbitalSet:
    """``N`` real orbitals on a grid; row ``i`` of ``values`` holds psi_i.

    Normalized so that ``h * values @ values.T`` is the identity.
    """

    grid: PeriodicGrid
    values: np.ndarray
    eigenvalues: np.ndarray

    @property
    def N(self) -> int:
        return self.values.shape[0]

    def subset(self, N: int) -> "OrbitalSet":
        """The lowest ``N`` orbitals of this set."""
        if not 1 <= N <= self.N:
            raise ValueError(f"N={N} out of range 1..{self.N}")
        return OrbitalSet(self.grid, _frozen(self.values[:N]), _frozen(self.eigenvalues[:N]))

    def gram(self) -> np.ndarray:
        return self.grid.h * (self.values @ self.values.T)


def build_grid(dim: int, points_per_axis: int) -> PeriodicGrid:
    if dim not in (1, 3):
        raise ValueError(f"dim must be 1 or 3, got {dim}")
    if points_per_axis < 2 or points_per_axis % 2:
        raise ValueError(f"points_per_axis must be even and >= 2, got {points_per_axis}")
    return PeriodicGrid(dim=dim, m=int(points_per_axis))


def _potential_modes(grid: PeriodicGrid) -> np.ndarray:
    """Canonical representatives of the conjugate pairs ``{k, -k}``.

    Excludes the zero mode and anything touching a Nyquist component (those
    are self-conjugate on the grid). A representative has its first nonzero
    component positive. Sorted by ``|k|``, ties broken lexicographically.
    """
    half = grid.m // 2
    rng1 = np.arange(-half + 1, half)
    axes = np.meshgrid(*([rng1] * grid.dim), indexing="ij")
    ks = np.stack([a.ravel() for a in axes], axis=1)
    nz = ks != 0
    first_nz = np.argmax(nz, axis=1)
    lead = ks[np.arange(len(ks)), first_nz]
    ks = ks[nz.any(axis=1) & (lead > 0)]
    norm2 = (ks**2).sum(axis=1)
    order = np.lexsort(tuple(ks[:, d] for d in reversed(range(grid.dim))) + (norm2,))
    return ks[order]


def random_potential(
    grid: PeriodicGrid, num_modes: int, amplitude: float = 100.0, seed: int = 0
) -> Potential:
    """Random real potential built from the ``num_modes`` lowest Fourier modes.

    Each retained conjugate pair ``(k, -k)`` gets the DFT coefficient
    ``amplitude * (a + ib)`` on ``k`` and its conjugate on ``-k``, with ``a, b``
    i.i.d. standard normal from a Philox stream keyed by ``seed``; the values
    are the inverse DFT (``numpy.fft.ifftn`` convention, so the RMS of the
    potential is ``2 * amplitude * sqrt(num_modes) / n``). The zero mode is
    left out so the potential has zero grid mean.
    """
    modes = _potential_modes(grid)
    if not 0 <= num_modes <= len(modes):
        raise ValueError(f"num_modes={num_modes} outside 0..{len(modes)} for this grid")
    rng = np.random.Generator(np.random.Philox(seed))
    coef = rng.standard_normal((num_modes, 2)) @ np.array([1.0, 1.0j]) * amplitude

    spectrum = np.zeros(grid.shape, dtype=complex)
    m = grid.m
    for k, c in zip(modes[:num_modes], coef):
        spectrum[tuple(k % m)] = c
        spectrum[tuple(-k % m)] = np.conj(c)
    values = np.fft.ifftn(spectrum).real.ravel()
    values -= values.mean()
    return Potential(grid, _frozen(values), num_modes, float(amplitude), int(seed))


def laplacian_matrix(grid: PeriodicGrid) -> np.ndarray:
    """Dense Fourier-spectral periodic Laplacian, eigenvalue ``-|2 pi k|^2`` on mode k."""
    k1 = np.fft.fftfreq(grid.m, d=1.0 / grid.m)
    col = np.fft.ifft(-((2 * np.pi * k1) ** 2)).real
    lap1 = scipy.linalg.circulant(col)
    if grid.dim == 1:
        return lap1
    eye = np.eye(grid.m)
    lap = np.zeros((grid.n, grid.n))
    for axis in range(grid.dim):
        factors = [eye] * grid.dim
        factors[axis] = lap1
        term = factors[0]
        for f in factors[1:]:
            term = np.kron(term, f)
        lap += term
    return lap


def hamiltonian_matrix(grid: PeriodicGrid, potential: Potential) -> np.ndarray:
    H = -0.5 * laplacian_matrix(grid)
    H[np.diag_indices_from(H)] += potential.values
    return H


def solve_orbitals(grid: PeriodicGrid, potential: Potential, N: int) -> OrbitalSet:
    """Lowest ``N`` eigenpairs of the dense Hamiltonian.

    Eigenvectors are scaled so ``h * sum(psi**2) == 1`` and signed so that the
    largest-magnitude entry (first one on ties) is positive.
    """
    if potential.grid != grid:
        raise ValueError("potential lives on a different grid")
    if not 1 <= N <= grid.n:
        raise ValueError(f"N={N} must be in 1..{grid.n}")
    H = hamiltonian_matrix(grid, potential)
    if not np.isfinite(potential.values).all():
        raise NumericalError("potential has non-finite values")
    try:
        w, v = scipy.linalg.eigh(H, subset_by_index=[0, N - 1], driver="evr")
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    psi = v.T / np.sqrt(grid.h)
    peak = psi[np.arange(N), np.argmax(np.abs(psi), axis=1)]
    psi *= np.where(peak < 0, -1.0, 1.0)[:, None]
    return OrbitalSet(grid, _frozen(psi), _frozen(w))
