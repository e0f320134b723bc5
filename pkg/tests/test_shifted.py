import numpy as np
import pytest
import scipy.sparse as sp

from spirk.errors import SingularShiftError
from spirk.problems import laplacian_1d
from spirk.shifted import THREADS_ENV, as_sparse, factor_all, is_identity, resolve_threads, solve_all
from spirk.tableaux import build_tableau
from spirk.transforms import centroskew_split, eigendecompose, w_transform


def test_identity_pencil_with_imaginary_shifts():
    I = sp.identity(5, format="csr")
    fs = factor_all(I, I, 1.0, eigendecompose(np.array([[0.0, 1.0], [-1.0, 0.0]])))
    assert fs.n_factorizations == 1
    b = np.arange(1.0, 6.0)
    Z = solve_all(fs, np.column_stack([b, b]))
    lam = fs.shifts
    for j in range(2):
        np.testing.assert_allclose(Z[:, j], b / (1 + lam[j]), atol=1e-15)
    assert sorted(np.round(lam.imag, 12)) == [-1.0, 1.0]


def test_real_negative_shift_against_dense():
    L = laplacian_1d(8, 1 / 9)
    fs = factor_all(None, L, 0.01, np.array([-0.3]))
    b = np.linspace(-1, 1, 8)
    x = solve_all(fs, b[:, None])[:, 0]
    ref = np.linalg.solve(np.eye(8) - 0.003 * L.toarray(), b)
    np.testing.assert_allclose(x, ref, rtol=1e-12, atol=1e-14)
    assert fs.probe_residual(0) <= 1e-10


def test_gauss_five_zero_shift_is_fine():
    # odd s: one eigenvalue of the skew part is zero, shifted matrix is M itself
    e = w_transform(build_tableau("gauss", 5)).eig
    assert np.min(np.abs(e.values)) < 1e-12
    L = laplacian_1d(16, 1 / 17)
    fs = factor_all(None, L, 0.1, e)
    assert fs.n_factorizations == 3
    for j in range(5):
        assert fs.probe_residual(j) <= 1e-10


def test_zero_rhs_and_scalar_shift():
    I = sp.identity(6, format="csr")
    fs = factor_all(I, I, 0.5, np.array([1.0]))
    np.testing.assert_array_equal(solve_all(fs, np.zeros((6, 1))), 0)
    b = np.random.default_rng(3).standard_normal((6, 1))
    np.testing.assert_allclose(solve_all(fs, b), b / 1.5, atol=1e-15)


def test_gauss_two_heat_against_kronecker():
    N, h = 16, 0.05
    L = laplacian_1d(N, 1 / (N + 1))
    M = sp.diags(np.full(N, 2.0)) + sp.diags(np.full(N - 1, 0.5), 1) + sp.diags(np.full(N - 1, 0.5), -1)
    e = centroskew_split(build_tableau("gauss", 2)).eig
    fs = factor_all(M, L, h, e)
    rng = np.random.default_rng(7)
    R = rng.standard_normal((N, 2)) + 1j * rng.standard_normal((N, 2))
    X = solve_all(fs, R)
    K = np.kron(np.eye(2), M.toarray()) + h * np.kron(np.diag(e.values), L.toarray())
    ref = np.linalg.solve(K, R.reshape(-1, order="F")).reshape(N, 2, order="F")
    np.testing.assert_allclose(X, ref, rtol=1e-12, atol=1e-13)


def test_conjugate_rhs_shortcut_and_symmetry():
    N = 20
    L = laplacian_1d(N, 1 / (N + 1))
    e = w_transform(build_tableau("radau-iia", 4)).eig
    fs = factor_all(None, L, 0.1, e)
    assert fs.n_factorizations == 2
    rng = np.random.default_rng(1)
    R = np.empty((N, 4), dtype=complex)
    for j, k in enumerate(e.partner):
        if k >= j:
            R[:, j] = rng.standard_normal(N) + 1j * rng.standard_normal(N)
            R[:, k] = np.conj(R[:, j])
    X = solve_all(fs, R)
    for j, k in enumerate(e.partner):
        np.testing.assert_allclose(X[:, k], np.conj(X[:, j]), atol=1e-13 * np.abs(X).max())
    # without the shortcut each partner solve agrees
    for j in range(4):
        x = fs.solve_one(j, R[:, j])
        assert np.linalg.norm(x - X[:, j]) <= 1e-13 * np.linalg.norm(x)


def test_thread_counts_agree(monkeypatch):
    N = 50
    L = laplacian_1d(N, 1 / (N + 1))
    e = w_transform(build_tableau("gauss", 6)).eig
    rng = np.random.default_rng(5)
    R = rng.standard_normal((N, 6)) + 1j * rng.standard_normal((N, 6))
    one = solve_all(factor_all(None, L, 0.2, e, threads=1), R, threads=1)
    many = solve_all(factor_all(None, L, 0.2, e, threads=6), R, threads=6)
    np.testing.assert_allclose(many, one, rtol=1e-13, atol=0)
    monkeypatch.setenv(THREADS_ENV, "3")
    assert resolve_threads() == 3
    assert resolve_threads(cap=2) == 2
    assert resolve_threads(8, cap=5) == 5
    monkeypatch.delenv(THREADS_ENV)
    assert resolve_threads() >= 1
    assert resolve_threads(0) == 1


def test_singular_shift_names_stage():
    # L = 0 and a singular M: every shifted matrix is singular
    M = sp.csr_matrix(np.diag([1.0, 0.0, 1.0]))
    with pytest.raises(SingularShiftError) as exc:
        factor_all(M, sp.csr_matrix((3, 3)), 1.0, np.array([2.0]))
    assert exc.value.index == 0


def test_input_checks():
    L = laplacian_1d(4, 0.2)
    with pytest.raises(ValueError):
        factor_all(None, L, 0.0, np.array([1.0]))
    with pytest.raises(ValueError):
        factor_all(sp.identity(3), L, 1.0, np.array([1.0]))
    fs = factor_all(None, L, 1.0, np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        solve_all(fs, np.ones((4, 3)))


def test_is_identity():
    assert is_identity(None)
    assert is_identity(sp.identity(4))
    assert is_identity(np.eye(3))
    assert not is_identity(2 * np.eye(3))
    assert not is_identity(np.ones((2, 2)))
    assert as_sparse(np.eye(2)).format == "csr"
