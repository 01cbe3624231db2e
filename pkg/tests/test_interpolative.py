import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thcid import build_grid, compress, random_potential, solve_orbitals
from thcid.errors import DegenerateInputError, ThresholdTooSmallError
from thcid.interpolative import (
    PivotedQRResult,
    interpolation_basis,
    pair_density_matrix,
    pair_density_row,
    pivoted_qr,
    select_rank,
    sketch,
)
from thcid.model import OrbitalSet, PeriodicGrid
from thcid.parallel import thread_limit

from conftest import make_orbitals


def _explicit_orbitals(values):
    values = np.asarray(values, dtype=float)
    return OrbitalSet(PeriodicGrid(1, values.shape[1]), values, np.zeros(len(values)))


def _complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# pair densities


def test_pair_density_row_hand_product():
    orb = _explicit_orbitals([[1.0, 2.0, -1.0, 0.5], [3.0, -1.0, 2.0, 4.0]])
    np.testing.assert_array_equal(pair_density_row(orb, 0, 1), [3.0, -2.0, -2.0, 2.0])
    np.testing.assert_array_equal(pair_density_row(orb, 1, 1), [9.0, 1.0, 4.0, 16.0])


def test_pair_density_row_symmetric(small_orbitals):
    for i in range(6):
        for j in range(6):
            assert np.array_equal(pair_density_row(small_orbitals, i, j), pair_density_row(small_orbitals, j, i))


def test_pair_density_free_ground_state():
    g = build_grid(1, 32)
    orb = solve_orbitals(g, random_potential(g, 0), 1)
    np.testing.assert_allclose(pair_density_row(orb, 0, 0), 1.0, atol=1e-12)


@pytest.mark.parametrize("i,j", [(-1, 0), (0, 6), (6, 6)])
def test_pair_density_row_index_errors(small_orbitals, i, j):
    with pytest.raises(IndexError):
        pair_density_row(small_orbitals, i, j)


def test_pair_matrix_row_order(small_orbitals):
    A = pair_density_matrix(small_orbitals)
    N = small_orbitals.N
    assert A.shape == (N * N, 64)
    for i, j in [(0, 0), (1, 4), (5, 2)]:
        np.testing.assert_array_equal(A[i * N + j], pair_density_row(small_orbitals, i, j))


# sketch


def _sketch_oracle(orb, r, seed):
    """Dense O(N^4 n) evaluation with one-based pair and frequency indices."""
    N = orb.N
    L = N * N
    rng = np.random.Generator(np.random.Philox(seed))
    eta = np.exp(2j * np.pi * rng.random(L))
    rows = min(r * N, L)
    kept = np.arange(L) if rows == L else np.sort(rng.choice(L, size=rows, replace=False))
    I = np.arange(1, L + 1)
    F = np.exp(-2j * np.pi * np.outer(kept + 1, I) / L)
    return F @ (eta[:, None] * pair_density_matrix(orb)), kept


@pytest.mark.parametrize("N,r", [(5, 2), (6, 3), (4, 20)])
def test_sketch_matches_dense_dft(N, r):
    orb = make_orbitals(m=32, N=N, num_modes=8)
    sk = sketch(orb, r=r, seed=9)
    ref, kept = _sketch_oracle(orb, r, 9)
    np.testing.assert_array_equal(sk.retained_rows, kept)
    np.testing.assert_allclose(sk.values, ref, atol=1e-11 * np.abs(ref).max())


def test_sketch_single_orbital_rows_are_unit_multiples():
    orb = make_orbitals(m=32, N=1, num_modes=8)
    sk = sketch(orb, r=20, seed=0)
    rho = pair_density_row(orb, 0, 0)
    assert sk.shape == (1, 32)
    scale = sk.values[0] / rho
    np.testing.assert_allclose(scale, scale[0], rtol=1e-12)
    assert abs(abs(scale[0]) - 1) < 1e-12


def test_sketch_deterministic(small_orbitals):
    a = sketch(small_orbitals, r=3, seed=5)
    b = sketch(small_orbitals, r=3, seed=5)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.retained_rows, b.retained_rows)
    c = sketch(small_orbitals, r=3, seed=6)
    assert not np.array_equal(a.values, c.values)


def test_sketch_caps_rows():
    orb = make_orbitals(m=32, N=4, num_modes=8)
    sk = sketch(orb, r=20, seed=0)
    assert sk.shape == (16, 32)
    np.testing.assert_array_equal(sk.retained_rows, np.arange(16))


def test_sketch_row_count_and_distinct(medium_orbitals):
    sk = sketch(medium_orbitals, r=5, seed=1)
    assert sk.shape == (5 * 32, 256)
    assert len(np.unique(sk.retained_rows)) == 160
    assert np.all(np.diff(sk.retained_rows) > 0)


def test_sketch_rejects_r(small_orbitals):
    with pytest.raises(ValueError):
        sketch(small_orbitals, r=0)


def test_sketch_streaming_block_independent(monkeypatch, small_orbitals):
    import thcid.interpolative as mod

    ref = sketch(small_orbitals, r=2, seed=3)
    monkeypatch.setattr(mod, "_SKETCH_BLOCK_ENTRIES", 36 * 5)
    alt = sketch(small_orbitals, r=2, seed=3)
    np.testing.assert_array_equal(ref.values, alt.values)


# pivoted QR


@pytest.mark.parametrize("bs", [1, 32])
def test_qr_identity(bs):
    qr = pivoted_qr(np.eye(3), block_size=bs)
    np.testing.assert_array_equal(qr.pivots, [0, 1, 2])
    np.testing.assert_array_equal(qr.R, np.eye(3))


@pytest.mark.parametrize("bs", [1, 32])
def test_qr_single_column(bs):
    M = np.zeros((4, 5))
    M[0, 2] = 2.0
    qr = pivoted_qr(M, block_size=bs)
    assert qr.pivots[0] == 2
    assert abs(qr.R[0, 0]) == 2.0


@pytest.mark.parametrize("bs", [1, 32])
def test_qr_tie_break_smallest_index(bs):
    M = np.diag([1.0, 2.0, 2.0, 0.5])
    qr = pivoted_qr(M, block_size=bs)
    np.testing.assert_array_equal(qr.pivots, [1, 2, 0, 3])


@pytest.mark.parametrize("bs", [1, 4, 32])
def test_qr_reconstruction_random_10x20(bs, rng):
    M = _complex(rng, (10, 20))
    qr = pivoted_qr(M, return_q=True, block_size=bs)
    err = np.linalg.norm(M[:, qr.pivots] - qr.Q @ qr.R) / np.linalg.norm(M)
    assert err <= 1e-12
    np.testing.assert_allclose(qr.Q.conj().T @ qr.Q, np.eye(10), atol=1e-12)
    assert np.all(np.diff(qr.diag) <= 0)


def test_qr_greedy_pivot_oracle(rng):
    # each pivot has the largest residual norm after projecting out earlier pivots
    M = _complex(rng, (15, 12))
    qr = pivoted_qr(M)
    chosen = []
    for p in qr.pivots[:12]:
        if chosen:
            Q, _ = np.linalg.qr(M[:, chosen])
            resid = M - Q @ (Q.conj().T @ M)
        else:
            resid = M
        norms = np.linalg.norm(resid, axis=0)
        norms[chosen] = -1
        assert p == np.argmax(norms)
        chosen.append(p)


def test_qr_blocked_matches_unblocked(medium_orbitals):
    M = sketch(medium_orbitals, r=4, seed=0).values
    a = pivoted_qr(M, block_size=1)
    b = pivoted_qr(M, block_size=8)
    np.testing.assert_array_equal(a.pivots, b.pivots)
    np.testing.assert_allclose(b.diag, a.diag, rtol=0, atol=1e-12 * a.diag[0])


def test_qr_truncation_keeps_rank(medium_orbitals):
    M = sketch(medium_orbitals, r=4, seed=0).values
    full = pivoted_qr(M)
    for eps in (1e-3, 1e-6):
        part = pivoted_qr(M, rel_tol=eps)
        k = select_rank(full, eps)
        assert select_rank(part, eps) == k
        assert part.R.shape[0] <= k + 1
        np.testing.assert_array_equal(part.pivots[:k], full.pivots[:k])


def test_qr_does_not_touch_input(rng):
    M = _complex(rng, (6, 8))
    keep = M.copy()
    pivoted_qr(M)
    assert np.array_equal(M, keep)


def test_qr_rejects_empty():
    with pytest.raises(ValueError):
        pivoted_qr(np.zeros((0, 3)))


@settings(max_examples=25, deadline=None)
@given(
    m=st.integers(1, 30),
    n=st.integers(1, 30),
    rank=st.integers(1, 30),
    seed=st.integers(0, 2**31),
    bs=st.sampled_from([1, 3, 32]),
)
def test_qr_properties(m, n, rank, seed, bs):
    r = np.random.default_rng(seed)
    rank = min(rank, m, n)
    M = _complex(r, (m, rank)) @ _complex(r, (rank, n))
    qr = pivoted_qr(M, return_q=True, block_size=bs)
    assert np.all(np.diff(qr.diag) <= 1e-12 * qr.diag[0])
    assert sorted(qr.pivots) == list(range(n))
    err = np.linalg.norm(M[:, qr.pivots] - qr.Q @ qr.R) / np.linalg.norm(M)
    assert err <= 1e-12


# rank selection


def _diag_result(d):
    return PivotedQRResult(np.diag(np.asarray(d, dtype=complex)), np.arange(len(d)))


@pytest.mark.parametrize(
    "d,eps,want",
    [([1, 0.5, 1e-6], 1e-5, 2), ([1], 0.3, 1), ([1, 0.9, 0.8], 1e-5, 3), ([4, 2, 1, 0.5], 0.25, 3)],
)
def test_select_rank(d, eps, want):
    assert select_rank(_diag_result(d), eps) == want


def test_select_rank_degenerate():
    with pytest.raises(DegenerateInputError):
        select_rank(_diag_result([0.0, 0.0]), 1e-3)


@pytest.mark.parametrize("eps", [0.0, 1.0, -1e-3])
def test_select_rank_bad_epsilon(eps):
    with pytest.raises(ValueError):
        select_rank(_diag_result([1.0]), eps)


# interpolation basis


def test_basis_identity_on_selected(medium_orbitals):
    qr = pivoted_qr(sketch(medium_orbitals, seed=0))
    k = select_rank(qr, 1e-5)
    b = interpolation_basis(qr, k, medium_orbitals.grid, 1e-5)
    assert b.N_aux == k
    np.testing.assert_array_equal(b.P[:, b.selected_points], np.eye(k))
    assert len(set(b.selected_points.tolist())) == k
    assert b.P.dtype == float


def test_basis_exact_rank_reconstruction(rng):
    M = rng.standard_normal((40, 6)) @ rng.standard_normal((6, 30))
    qr = pivoted_qr(M)
    b = interpolation_basis(qr, 6)
    resid = np.linalg.norm(M - M[:, b.selected_points] @ b.P)
    assert resid <= 1e-10 * np.linalg.norm(M)
    assert b.imag_ratio == 0.0


def test_basis_full_selection_is_permutation(rng):
    M = rng.standard_normal((8, 5))
    qr = pivoted_qr(M)
    b = interpolation_basis(qr, 5)
    assert np.allclose(b.P.sum(axis=0), 1.0) and np.allclose(b.P.sum(axis=1), 1.0)
    assert set(np.unique(b.P)) <= {0.0, 1.0}
    np.testing.assert_allclose(M[:, b.selected_points] @ b.P, M, atol=0)


def test_basis_threshold_too_small():
    qr = _diag_result([1.0, 1e-15])
    with pytest.raises(ThresholdTooSmallError):
        interpolation_basis(qr, 2)


def test_basis_bad_rank(rng):
    qr = pivoted_qr(rng.standard_normal((4, 4)))
    with pytest.raises(ValueError):
        interpolation_basis(qr, 0)
    with pytest.raises(ValueError):
        interpolation_basis(qr, 5)


# compress


def test_compress_single_orbital():
    orb = make_orbitals(m=64, N=1)
    b = compress(orb, 1e-10)
    assert b.N_aux == 1
    rho = pair_density_row(orb, 0, 0)
    fitted = rho[b.selected_points] @ b.P
    np.testing.assert_allclose(fitted, rho, rtol=0, atol=1e-12 * np.abs(rho).max())


def test_compress_timings(small_orbitals):
    b = compress(small_orbitals, 1e-6)
    assert set(b.timings) == {"sketch", "qr", "basis", "compress"}
    assert all(v >= 0 for v in b.timings.values())
    assert b.epsilon == 1e-6 and b.grid == small_orbitals.grid


@pytest.mark.parametrize("eps", [1e-3, 1e-5])
def test_compress_residual_control(eps):
    orb = make_orbitals(m=256, N=24, num_modes=64, seed=4)
    A = pair_density_matrix(orb)
    failures = 0
    for seed in range(5):
        b = compress(orb, eps, seed=seed)
        rel = np.linalg.norm(A - A[:, b.selected_points] @ b.P) / np.linalg.norm(A)
        failures += rel > 10 * eps
    assert failures <= 1


def test_compress_deterministic(medium_orbitals):
    a = compress(medium_orbitals, 1e-5, seed=3)
    b = compress(medium_orbitals, 1e-5, seed=3)
    assert np.array_equal(a.selected_points, b.selected_points)
    assert np.array_equal(a.P, b.P)


def test_compress_monotone_rank(medium_orbitals):
    sizes = [compress(medium_orbitals, eps, seed=1).N_aux for eps in (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-8)]
    assert sizes == sorted(sizes)


def test_compress_thread_count_invariant(medium_orbitals):
    with thread_limit(1):
        a = compress(medium_orbitals, 1e-6, seed=2)
    with thread_limit(4):
        b = compress(medium_orbitals, 1e-6, seed=2)
    assert np.array_equal(a.selected_points, b.selected_points)
    assert np.array_equal(a.P, b.P)


def test_compress_3d():
    orb = make_orbitals(dim=3, m=8, N=6, num_modes=13)
    b = compress(orb, 1e-6)
    A = pair_density_matrix(orb)
    rel = np.linalg.norm(A - A[:, b.selected_points] @ b.P) / np.linalg.norm(A)
    assert rel < 1e-5


def test_compress_rejects_epsilon(small_orbitals):
    with pytest.raises(ValueError):
        compress(small_orbitals, 0.0)
