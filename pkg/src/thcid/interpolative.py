"""Randomized column selection on the pair-density matrix.

The pair densities ``rho_ij(x) = psi_i(x) psi_j(x)`` form an ``N^2 x n``
matrix (row ``I = i*N + j``, zero-based). Its columns are compressed by a
random-phase FFT along the pair index followed by row subsampling, and a
greedy pivoted QR of the sketch picks the interpolation points.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.linalg

from thcid import _qr_kernel
from thcid.errors import DegenerateInputError, ThresholdTooSmallError
from thcid.model import OrbitalSet, PeriodicGrid
from thcid.parallel import fft_workers

__all__ = [
    "SketchMatrix",
    "PivotedQRResult",
    "InterpolativeBasis",
    "DEFAULT_OVERSAMPLING",
    "pair_density_row",
    "pair_density_matrix",
    "sketch",
    "pivoted_qr",
    "select_rank",
    "interpolation_basis",
    "compress",
]

logger = logging.getLogger(__name__)

DEFAULT_OVERSAMPLING = 20
IMAG_WARN_RATIO = 1e-8
# complex entries per streamed block of the N^2-long transform
_SKETCH_BLOCK_ENTRIES = 1 << 22


@dataclass(frozen=True)
class SketchMatrix:
    """Retained rows of the random Fourier projection.

    ``values`` has shape ``(rows, n)``. ``retained_rows`` are zero-based
    frequency indices into the ``N^2`` projected rows, sorted ascending.
    """

    values: np.ndarray
    r: int
    seed: int
    retained_rows: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class PivotedQRResult:
    """Output of :func:`pivoted_qr`.

    ``R`` has one row per Householder step taken (``min(rows, n)`` for a
    full factorization) and its columns are in pivot order. ``pivots[k]``
    is the original column placed at position ``k``. ``Q`` is only kept
    when requested.
    """

    R: np.ndarray
    pivots: np.ndarray
    Q: np.ndarray | None = None

    @property
    def diag(self) -> np.ndarray:
        k = self.R.shape[0]
        return np.abs(np.diagonal(self.R[:, :k]))


@dataclass(frozen=True)
class InterpolativeBasis:
    """Selected grid points and their interpolation functions.

    Row ``mu`` of ``P`` is the auxiliary function attached to grid point
    ``selected_points[mu]``; ``P[:, selected_points]`` is the identity.
    """

    selected_points: np.ndarray
    P: np.ndarray
    epsilon: float
    grid: PeriodicGrid | None = None
    imag_ratio: float = 0.0
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def N_aux(self) -> int:
        return len(self.selected_points)


def _check_index(orbitals: OrbitalSet, *idx: int) -> None:
    for i in idx:
        if not 0 <= i < orbitals.N:
            raise IndexError(f"orbital index {i} out of range for N={orbitals.N}")


def pair_density_row(orbitals: OrbitalSet, i: int, j: int) -> np.ndarray:
    """``rho_ij`` on the grid (zero-based orbital indices)."""
    _check_index(orbitals, i, j)
    return orbitals.values[i] * orbitals.values[j]


def pair_density_matrix(orbitals: OrbitalSet) -> np.ndarray:
    """The full ``N^2 x n`` pair matrix. Only for small tests and oracles."""
    psi = orbitals.values
    return (psi[:, None, :] * psi[None, :, :]).reshape(orbitals.N**2, -1)


def sketch(orbitals: OrbitalSet, r: int = DEFAULT_OVERSAMPLING, seed: int = 0) -> SketchMatrix:
    """Random Fourier projection of the pair matrix along the pair index.

    For every grid column ``x`` this computes
    ``M[xi, x] = sum_I exp(-2 pi i (I+1)(xi+1) / N^2) eta_I rho_I(x)``
    with ``eta_I = exp(2 pi i theta_I)``, keeping ``min(r N, N^2)`` rows drawn
    without replacement. All random numbers come from one Philox stream
    (phases first, then the row draw). The pair matrix is streamed over
    column blocks and never held in full.
    """
    if r < 1:
        raise ValueError(f"oversampling r must be >= 1, got {r}")
    psi = orbitals.values
    N, n = psi.shape
    L = N * N
    rng = np.random.Generator(np.random.Philox(seed))
    eta = np.exp(2j * np.pi * rng.random(L))
    rows = min(r * N, L)
    if rows == L:
        retained = np.arange(L)
    else:
        retained = np.sort(rng.choice(L, size=rows, replace=False))
    # one-based I and xi: exp(-2 pi i (t+1)(k+1)/L) = FFT phase * row and column twiddles
    twiddle_in = eta * np.exp(-2j * np.pi * np.arange(L) / L)
    twiddle_out = np.exp(-2j * np.pi * (retained + 1) / L)

    out = np.empty((n, rows), dtype=complex)
    block = max(1, _SKETCH_BLOCK_ENTRIES // L)
    psiT = np.ascontiguousarray(psi.T)
    workers = fft_workers()
    for start in range(0, n, block):
        cols = psiT[start : start + block]
        pairs = (cols[:, :, None] * cols[:, None, :]).reshape(len(cols), L)
        spec = scipy.fft.fft(pairs * twiddle_in, axis=1, workers=workers)
        out[start : start + block] = spec[:, retained] * twiddle_out
    return SketchMatrix(out.T, int(r), int(seed), retained)


def _as_matrix(M) -> np.ndarray:
    return M.values if isinstance(M, SketchMatrix) else np.asarray(M)


_DOWNDATE_FLOOR = _qr_kernel._DOWNDATE_FLOOR
_TIE_WINDOW = _qr_kernel._TIE_WINDOW
# collapsed norms refreshed in place per step before a panel is closed instead
_MAX_REFRESH = 64


def _pick_pivot(T, Vt, G, vn, perm, k, j):
    """Greedy pivot among rows ``k:`` of ``T``; near-ties are settled on exact norms."""
    tail = vn[k:]
    best = tail.max()
    if j == 0:
        cand = np.flatnonzero(tail == best) + k
        norms = tail[cand - k]
    else:
        cand = np.flatnonzero(tail >= best * (1.0 - _TIE_WINDOW)) + k
        cur = T[cand, k:] - G[cand, :j] @ Vt[:j, k:]
        norms = np.sqrt((cur.real**2 + cur.imag**2).sum(axis=1))
        best = norms.max()
    if len(cand) == 1:
        return int(cand[0]), float(best)
    top = cand[norms == best]
    return int(top[np.argmin(perm[top])]), float(best)


def _panel(T, perm, vn, vn0, taus, G, Vt, k0, nb, limit, rel_tol, r00):
    """Up to ``nb`` pivot steps from ``k0`` with the trailing update deferred.

    On return the block is ``T[c, i] - sum_l G[c, l] Vt[l, i]``; the per-step
    products over the trailing rows are single BLAS matrix-vector calls.
    """
    ncol = T.shape[0]
    j = 0
    stopped = False
    while j < nb and k0 + j < limit:
        k = k0 + j
        p, best = _pick_pivot(T, Vt, G, vn, perm, k, j)
        if k == 0:
            r00 = best
        if best == 0.0 or best < rel_tol * r00:
            stopped = True
            break
        if p != k:
            T[[k, p]] = T[[p, k]]
            G[[k, p], :j] = G[[p, k], :j]
            perm[[k, p]] = perm[[p, k]]
            vn[p], vn0[p] = vn[k], vn0[k]
        if j:
            T[k, k:] -= G[k, :j] @ Vt[:j, k:]
        x = T[k, k:]
        xn = float(np.sqrt((x.real**2 + x.imag**2).sum()))
        if xn == 0.0:
            stopped = True
            break
        alpha = x[0]
        aabs = abs(alpha)
        if not x[1:].any():
            tau = 0.0  # already reduced: H = I
        else:
            phase = alpha / aabs if aabs > 0.0 else 1.0
            beta = -phase * xn
            x[1:] *= 1.0 / (alpha - beta)
            tau = (aabs + xn) / xn
            x[0] = beta
        taus[k] = tau
        Vt[j, k] = 1.0
        Vt[j, k + 1 :] = x[1:]
        if k + 1 >= ncol:
            j += 1
            break
        # Vt[j, :k] is zero, so full rows keep the product contiguous
        vj = Vt[j].conj()
        z = T[k + 1 :] @ vj
        if j:
            z -= G[k + 1 :, :j] @ (Vt[:j, k:] @ vj[k:])
        g = tau * z
        G[k + 1 :, j] = g
        r = T[k + 1 :, k] - G[k + 1 :, :j] @ Vt[:j, k] - g
        T[k + 1 :, k] = r
        v = vn[k + 1 :]
        live = v > 0.0
        ratio = np.abs(r[live]) / v[live]
        v[live] *= np.sqrt(np.maximum(0.0, 1.0 - ratio * ratio))
        j += 1
        v0 = vn0[k + 1 :]
        flagged = np.flatnonzero((v0 > 0.0) & (v <= np.sqrt(_DOWNDATE_FLOOR) * v0)) + k + 1
        if len(flagged) > _MAX_REFRESH:
            break
        if len(flagged):
            # a few collapsed norms are cheaper to recompute than a new panel
            cur = T[flagged, k + 1 :] - G[flagged, :j] @ Vt[:j, k + 1 :]
            vn[flagged] = np.sqrt((cur.real**2 + cur.imag**2).sum(axis=1))
            vn0[flagged] = vn[flagged]
    return j, stopped, r00


def _blocked_factor(T: np.ndarray, perm: np.ndarray, rel_tol: float, limit: int, nb: int):
    ncol, m = T.shape
    taus = np.zeros(limit, dtype=complex)
    G = np.zeros((ncol, nb), dtype=complex)
    Vt = np.zeros((nb, m), dtype=complex)
    vn = np.zeros(ncol)
    chunk = max(1, _SKETCH_BLOCK_ENTRIES // m)
    k, r00 = 0, 0.0
    while k < limit:
        vn[k:] = _qr_kernel.column_norms(T[k:], k)
        vn0 = vn.copy()
        G.fill(0.0)
        Vt.fill(0.0)
        jb, stopped, r00 = _panel(T, perm, vn, vn0, taus, G, Vt, k, nb, limit, rel_tol, r00)
        k += jb
        if stopped or k >= limit:
            break
        for c0 in range(k, ncol, chunk):
            T[c0 : c0 + chunk, k:] -= G[c0 : c0 + chunk, :jb] @ Vt[:jb, k:]
    return k, taus


def pivoted_qr(
    M,
    *,
    rel_tol: float = 0.0,
    max_rank: int | None = None,
    return_q: bool = False,
    block_size: int = 32,
    overwrite: bool = False,
) -> PivotedQRResult:
    """Householder QR with greedy column pivoting, ``M[:, pivots] = Q R``.

    At each step the remaining column of largest 2-norm is moved forward;
    ties go to the smallest original column index. With ``rel_tol > 0``
    the factorization stops once every remaining column norm is below
    ``rel_tol * |R[0, 0]|``, which costs O(rows * n * rank) instead of a
    full factorization; the rank read off by :func:`select_rank` with
    ``epsilon = rel_tol`` is unaffected.

    ``block_size > 1`` uses delayed trailing updates (one matrix product per
    panel); ``block_size=1`` runs the plain one-reflector-at-a-time kernel.
    ``overwrite=True`` lets a sketch's buffer be reused as workspace.
    """
    A = _as_matrix(M)
    if A.ndim != 2 or A.size == 0:
        raise ValueError("pivoted_qr needs a nonempty 2-D matrix")
    m, n = A.shape
    T = A.T
    if not (overwrite and T.dtype == np.complex128 and T.flags.c_contiguous and T.flags.writeable):
        T = np.array(T, dtype=np.complex128, order="C")
    perm = np.arange(n, dtype=np.int64)
    limit = min(m, n) if max_rank is None else min(m, n, int(max_rank))
    if block_size > 1:
        steps, taus = _blocked_factor(T, perm, float(rel_tol), limit, int(block_size))
    else:
        steps, taus = _qr_kernel.pivoted_householder(T, perm, float(rel_tol), limit)
    R = np.triu(T[:, :steps].T)
    Q = None
    if return_q:
        Q = np.eye(m, steps, dtype=complex)
        for k in reversed(range(steps)):
            v = np.concatenate(([1.0], T[k, k + 1 :]))
            Q[k:] -= taus[k] * np.outer(v, v.conj() @ Q[k:])
    return PivotedQRResult(R, perm, Q)


def select_rank(qr: PivotedQRResult, epsilon: float) -> int:
    """Largest ``k`` with ``|R[k-1, k-1]| >= epsilon * |R[0, 0]|``."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    d = qr.diag
    if d.size == 0 or d[0] == 0.0:
        raise DegenerateInputError("R has no nonzero diagonal entry")
    return int(np.count_nonzero(d >= epsilon * d[0]))


def interpolation_basis(
    qr: PivotedQRResult,
    N_aux: int,
    grid: PeriodicGrid | None = None,
    epsilon: float = float("nan"),
) -> InterpolativeBasis:
    """Interpolation matrix ``P = R11^{-1} [R11 R12]`` with columns un-pivoted.

    The leading block is set to the exact identity and only ``R11^{-1} R12``
    is computed, by back substitution. The complex result is projected to
    its real part; the relative size of the discarded imaginary part is kept
    as ``imag_ratio``.
    """
    R, piv = qr.R, qr.pivots
    n = R.shape[1]
    if not 1 <= N_aux <= R.shape[0]:
        raise ValueError(f"N_aux={N_aux} outside 1..{R.shape[0]}")
    d = np.abs(np.diagonal(R[:N_aux, :N_aux]))
    if d[-1] < 1e3 * np.finfo(float).eps * d[0]:
        raise ThresholdTooSmallError(
            f"|R[{N_aux - 1},{N_aux - 1}]| / |R[0,0]| = {d[-1] / d[0]:.3e} is numerically singular"
        )
    coef = scipy.linalg.solve_triangular(R[:N_aux, :N_aux], R[:N_aux, N_aux:], lower=False)
    imag = np.linalg.norm(coef.imag)
    total = np.linalg.norm(coef)
    ratio = float(imag / total) if total > 0 else 0.0
    if ratio > IMAG_WARN_RATIO:
        logger.debug("interpolation matrix imaginary part ratio %.3e", ratio)

    P = np.zeros((N_aux, n))
    P[:, piv[N_aux:]] = coef.real
    selected = piv[:N_aux].copy()
    P[np.arange(N_aux), selected] = 1.0
    if grid is not None and grid.n != n:
        raise ValueError("grid size does not match the factored matrix")
    return InterpolativeBasis(selected, P, float(epsilon), grid, ratio)


def compress(
    orbitals: OrbitalSet,
    epsilon: float,
    r: int = DEFAULT_OVERSAMPLING,
    seed: int = 0,
) -> InterpolativeBasis:
    """Select interpolation points for the pair densities of ``orbitals``.

    Runs sketch, truncated pivoted QR, rank selection and the triangular
    solve; wall times per stage land in ``basis.timings``.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    t0 = time.perf_counter()
    M = sketch(orbitals, r=r, seed=seed)
    t1 = time.perf_counter()
    qr = pivoted_qr(M, rel_tol=epsilon, overwrite=True)
    del M
    t2 = time.perf_counter()
    N_aux = select_rank(qr, epsilon)
    basis = interpolation_basis(qr, N_aux, orbitals.grid, epsilon)
    t3 = time.perf_counter()
    basis.timings.update(sketch=t1 - t0, qr=t2 - t1, basis=t3 - t2, compress=t3 - t0)
    return basis
