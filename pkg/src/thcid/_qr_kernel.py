"""Compiled kernels for the greedy column-pivoted Householder QR.

Kernels work on ``T = M.T`` (C order): each column of ``M`` is a contiguous
row of ``T`` and a column swap is a row swap. Householder vectors end up
below the diagonal as in LAPACK (``T[k, k+1:]`` holds ``v[1:]``, ``v[0] = 1``)
and every reflector is ``H = I - tau v v^H`` with real ``tau``.

The blocked driver lives in :mod:`thcid.interpolative` and shares the
constants below.
"""

import numpy as np
from numba import njit, prange

# a panel closes once some column norm has dropped by this factor (squared)
# since the panel started; bounds the downdating error to ~1e-11 relative
_DOWNDATE_FLOOR = 1e-4
# downdated norms within this relative window of the max are re-measured
_TIE_WINDOW = 1e-8


@njit(cache=True, parallel=True, fastmath=True)
def column_norms(T, start):
    """Norms of ``T[c, start:]`` for every row ``c`` of ``T``."""
    ncol, m = T.shape
    out = np.zeros(ncol)
    for c in prange(ncol):
        s = 0.0
        for i in range(start, m):
            z = T[c, i]
            s += z.real * z.real + z.imag * z.imag
        out[c] = np.sqrt(s)
    return out


@njit(cache=True, parallel=True, fastmath=True)
def pivoted_householder(T, perm, rel_tol, max_steps):
    """Unblocked reference factorization ``T.T[:, perm] = Q R``, in place.

    Column norms are recomputed exactly after every reflection. Stops after
    ``max_steps`` reflections, or before step k when the largest remaining
    column norm is zero or below ``rel_tol * |R[0, 0]|``. Pivot ties go to
    the smallest original column index. Returns ``(steps, taus)``.
    """
    ncol, m = T.shape
    norms = column_norms(T, 0)
    taus = np.zeros(max_steps, dtype=np.complex128)
    r00 = 0.0
    steps = 0
    for k in range(max_steps):
        p = k
        best = norms[k]
        for j in range(k + 1, ncol):
            if norms[j] > best or (norms[j] == best and perm[j] < perm[p]):
                p = j
                best = norms[j]
        if k == 0:
            r00 = best
        if best == 0.0 or best < rel_tol * r00:
            break
        if p != k:
            for i in range(m):
                tmp = T[k, i]
                T[k, i] = T[p, i]
                T[p, i] = tmp
            tp = perm[k]
            perm[k] = perm[p]
            perm[p] = tp
            norms[p] = norms[k]
            norms[k] = best

        alpha = T[k, k]
        aabs = abs(alpha)
        reduced = True
        for i in range(k + 1, m):
            if T[k, i] != 0.0:
                reduced = False
                break
        if reduced:
            tau = 0.0  # already reduced: H = I
        else:
            phase = alpha / aabs if aabs > 0.0 else 1.0 + 0.0j
            beta = -phase * best
            scale = 1.0 / (alpha - beta)
            for i in range(k + 1, m):
                T[k, i] *= scale
            tau = (aabs + best) / best
            T[k, k] = beta
        taus[k] = tau

        for j in prange(k + 1, ncol):
            s = T[j, k]
            for i in range(k + 1, m):
                s += np.conj(T[k, i]) * T[j, i]
            s *= tau
            T[j, k] -= s
            acc = 0.0
            for i in range(k + 1, m):
                z = T[j, i] - T[k, i] * s
                T[j, i] = z
                acc += z.real * z.real + z.imag * z.imag
            norms[j] = np.sqrt(acc)
        steps = k + 1
    return steps, taus
