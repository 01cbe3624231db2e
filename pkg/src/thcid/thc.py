"""THC factors from an interpolative basis, fitting errors and the L2 baseline."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from thcid.coulomb import (
    MAX_DENSE_N,
    KernelSpec,
    THCCore,
    check_norm,
    coulomb_inner,
    coulomb_norms,
    thc_core_matrix,
)
from thcid.errors import NumericalError
from thcid.interpolative import InterpolativeBasis, _check_index, pair_density_row
from thcid.model import OrbitalSet

__all__ = [
    "THCFactor",
    "ErrorReport",
    "PairErrors",
    "BoundReport",
    "LeastSquaresFit",
    "assemble_thc",
    "eri_thc",
    "eri_thc_tensor",
    "fitted_pair_density",
    "pair_errors",
    "error_metrics",
    "error_bound_check",
    "df_least_squares",
]

# grid values held per batch when streaming over pairs
_PAIR_BLOCK_ENTRIES = 1 << 21
BOUND_SLACK = 1e-12


@dataclass(frozen=True)
class THCFactor:
    """``<ij|kl> ~ sum_{mu,nu} X[i,mu] X[j,mu] V[mu,nu] X[k,nu] X[l,nu]``."""

    X: np.ndarray
    core: THCCore
    selected_points: np.ndarray

    @property
    def N_aux(self) -> int:
        return self.X.shape[1]


@dataclass
class ErrorReport:
    N: int
    n: int
    N_aux: int
    epsilon: float
    max_e2: float
    max_ec: float
    rel_2_error: float
    rel_c_error: float
    pairs_evaluated: int
    stage_timings: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class PairErrors:
    """Per-pair fitting errors and norms for the pairs ``(i[p], j[p])``."""

    i: np.ndarray
    j: np.ndarray
    e2: np.ndarray
    ec: np.ndarray
    norm2: np.ndarray
    normc: np.ndarray
    fitted_normc: np.ndarray


@dataclass(frozen=True)
class BoundReport:
    quadruples: np.ndarray
    actual: np.ndarray
    bound: np.ndarray
    violations: list[tuple[int, int, int, int]]

    @property
    def slack(self) -> np.ndarray:
        return self.bound - self.actual

    @property
    def min_slack(self) -> float:
        return float(self.slack.min())

    @property
    def max_slack(self) -> float:
        return float(self.slack.max())


@dataclass(frozen=True)
class LeastSquaresFit:
    """Conventional L2 density-fitting coefficients, ``C`` is ``N^2 x N_aux``.

    ``C`` is ``None`` when the fit was run for timing only.
    """

    C: np.ndarray | None
    seconds: float
    regularized: bool = False


def assemble_thc(orbitals: OrbitalSet, basis: InterpolativeBasis, kernel: KernelSpec) -> THCFactor:
    if orbitals.grid != kernel.grid:
        raise ValueError("orbitals and kernel live on different grids")
    X = np.ascontiguousarray(orbitals.values[:, basis.selected_points])
    return THCFactor(X, thc_core_matrix(kernel, basis), basis.selected_points)


def eri_thc(factor: THCFactor, i: int, j: int, k: int, l: int) -> float:
    """Compressed ``<ij|kl>``, symmetric under the 8 index permutations bit for bit."""
    N = factor.X.shape[0]
    for idx in (i, j, k, l):
        if not 0 <= idx < N:
            raise IndexError(f"orbital index {idx} out of range for N={N}")
    X, V = factor.X, factor.core.V
    u = X[i] * X[j]
    w = X[k] * X[l]
    return 0.5 * (float(u @ (V @ w)) + float(w @ (V @ u)))


def eri_thc_tensor(factor: THCFactor) -> np.ndarray:
    N = factor.X.shape[0]
    if N > MAX_DENSE_N:
        raise ValueError(f"refusing to materialize the N^4 tensor for N={N} > {MAX_DENSE_N}")
    X = factor.X
    U = (X[:, None, :] * X[None, :, :]).reshape(N * N, -1)
    G = U @ factor.core.V @ U.T
    G = 0.5 * (G + G.T)
    return G.reshape(N, N, N, N)


def fitted_pair_density(basis: InterpolativeBasis, orbitals: OrbitalSet, i: int, j: int) -> np.ndarray:
    _check_index(orbitals, i, j)
    xs = orbitals.values[:, basis.selected_points]
    return (xs[i] * xs[j]) @ basis.P


def pair_errors(
    orbitals: OrbitalSet,
    basis: InterpolativeBasis,
    kernel: KernelSpec,
    i: np.ndarray,
    j: np.ndarray,
) -> PairErrors:
    """L2 and Coulomb residuals of the interpolative fit for the given pairs.

    Streams the pairs in blocks so only a few thousand grid vectors are held.
    """
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    psi = orbitals.values
    xs = psi[:, basis.selected_points]
    h = orbitals.grid.h
    out = {key: np.empty(len(i)) for key in ("e2", "ec", "norm2", "normc", "fitted_normc")}
    block = max(1, _PAIR_BLOCK_ENTRIES // orbitals.grid.n)
    for s in range(0, len(i), block):
        bi, bj = i[s : s + block], j[s : s + block]
        rho = psi[bi] * psi[bj]
        fitted = (xs[bi] * xs[bj]) @ basis.P
        resid = rho - fitted
        sl = slice(s, s + len(bi))
        out["e2"][sl] = np.sqrt(h) * np.linalg.norm(resid, axis=1)
        out["norm2"][sl] = np.sqrt(h) * np.linalg.norm(rho, axis=1)
        out["ec"][sl] = coulomb_norms(kernel, resid)
        out["normc"][sl] = coulomb_norms(kernel, rho)
        out["fitted_normc"][sl] = coulomb_norms(kernel, fitted)
    return PairErrors(i, j, **out)


def error_metrics(
    orbitals: OrbitalSet,
    basis: InterpolativeBasis,
    kernel: KernelSpec,
    mode: str = "full",
    samples: int = 100,
    sample_seed: int = 0,
) -> ErrorReport:
    """Max and mean-relative L2 / Coulomb fitting errors over orbital pairs.

    ``mode="full"`` averages over all ``N^2`` ordered pairs (evaluating each
    unordered pair once, since ``rho_ij == rho_ji``). ``mode="sampled"``
    averages over ``samples`` ordered pairs drawn without replacement.
    """
    t0 = time.perf_counter()
    N = orbitals.N
    if mode == "full":
        iu, ju = np.triu_indices(N)
        weight = np.where(iu == ju, 1.0, 2.0)
        evaluated = N * N
    elif mode == "sampled":
        if samples < 1:
            raise ValueError("samples must be positive")
        rng = np.random.Generator(np.random.Philox(sample_seed))
        flat = np.sort(rng.choice(N * N, size=min(samples, N * N), replace=False))
        iu, ju = np.divmod(flat, N)
        weight = np.ones(len(flat))
        evaluated = len(flat)
    else:
        raise ValueError(f"unknown error mode {mode!r}")

    pe = pair_errors(orbitals, basis, kernel, iu, ju)
    total = weight.sum()
    mean = lambda a: float(np.dot(weight, a) / total)  # noqa: E731
    rel2 = mean(pe.e2) / check_norm(mean(pe.norm2), "mean L2 norm of pair densities")
    relc = mean(pe.ec) / check_norm(mean(pe.normc), "mean Coulomb norm of pair densities")
    return ErrorReport(
        N=N,
        n=orbitals.grid.n,
        N_aux=basis.N_aux,
        epsilon=basis.epsilon,
        max_e2=float(pe.e2.max()),
        max_ec=float(pe.ec.max()),
        rel_2_error=rel2,
        rel_c_error=relc,
        pairs_evaluated=evaluated,
        stage_timings={"metrics": time.perf_counter() - t0},
    )


def error_bound_check(
    orbitals: OrbitalSet,
    basis: InterpolativeBasis,
    kernel: KernelSpec,
    quadruples,
    factor: THCFactor | None = None,
) -> BoundReport:
    """Compare ``|<ij|kl> - <ij|kl>_THC|`` with its Cauchy-Schwarz bound.

    The bound is ``|rho_ij|_C e_kl + e_ij |fitted rho_kl|_C`` plus a fixed
    ``1e-12`` allowance for rounding.
    """
    quads = np.atleast_2d(np.asarray(quadruples, dtype=np.int64))
    if quads.shape[1] != 4:
        raise ValueError("quadruples must have four indices each")
    if quads.min() < 0 or quads.max() >= orbitals.N:
        raise IndexError("quadruple index out of range")
    if factor is None:
        factor = assemble_thc(orbitals, basis, kernel)
    pe_ij = pair_errors(orbitals, basis, kernel, quads[:, 0], quads[:, 1])
    pe_kl = pair_errors(orbitals, basis, kernel, quads[:, 2], quads[:, 3])
    actual = np.empty(len(quads))
    for q, (i, j, k, l) in enumerate(quads):
        exact = coulomb_inner(kernel, pair_density_row(orbitals, i, j), pair_density_row(orbitals, k, l))
        actual[q] = abs(exact - eri_thc(factor, i, j, k, l))
    bound = pe_ij.normc * pe_kl.ec + pe_ij.ec * pe_kl.fitted_normc + BOUND_SLACK
    bad = [tuple(int(x) for x in quads[q]) for q in np.flatnonzero(actual > bound)]
    return BoundReport(quads, actual, bound, bad)


def df_least_squares(
    orbitals: OrbitalSet, basis: InterpolativeBasis, keep: bool = True
) -> LeastSquaresFit:
    """L2 least-squares coefficients of every pair density in the span of ``P``.

    Solves ``S C_ij = h P rho_ij`` with ``S = h P P^T`` for all ``N^2`` pairs,
    reusing one Cholesky factorization. ``keep=False`` runs the same work but
    drops the coefficients (for timing at sizes where ``N^2 x N_aux`` does
    not fit in memory).
    """
    t0 = time.perf_counter()
    h = orbitals.grid.h
    P = basis.P
    S = h * (P @ P.T)
    regularized = False
    try:
        chol = scipy.linalg.cho_factor(S)
    except np.linalg.LinAlgError:
        regularized = True
        shift = 1e-12 * np.trace(S) / S.shape[0]
        try:
            chol = scipy.linalg.cho_factor(S + shift * np.eye(S.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise NumericalError("overlap matrix of the auxiliary basis is singular") from exc

    psi = orbitals.values
    N = orbitals.N
    hPT = h * P.T
    C = np.empty((N * N, basis.N_aux)) if keep else None
    for i in range(N):
        rhs = (psi[i] * psi) @ hPT
        coef = scipy.linalg.cho_solve(chol, rhs.T).T
        if keep:
            C[i * N : (i + 1) * N] = coef
    return LeastSquaresFit(C, time.perf_counter() - t0, regularized)
