import numpy as np
import pytest

from spirk import sylvester as syl
from spirk.errors import ConvergenceError, SpectralClashError
from spirk.problems import laplacian_1d
from spirk.sylvester import (
    SylvesterProblem,
    kronecker_solve,
    projected_solve,
    rank_compress,
    solve,
    solve_arnoldi,
    solve_block,
    solve_extended,
    true_residual,
)
from spirk.tableaux import build_tableau
from spirk.transforms import centroskew_split


def _spd(rng, N):
    Q = rng.standard_normal((N, N))
    return Q @ Q.T / N + np.eye(N)


def _rel(E, ref):
    return np.linalg.norm(E - ref) / np.linalg.norm(ref)


def _stiff_heat(N=64, h=0.01):
    L = laplacian_1d(N, 1.0 / (N + 1)).toarray()
    return np.linalg.inv(h * L), h * L


# -- projected solve ---------------------------------------------------------------------


def test_projected_scalar():
    np.testing.assert_allclose(projected_solve([[2.0]], [[3.0]], [[10.0]]), [[2.0]])


def test_projected_random_residual(rng):
    H = rng.standard_normal((5, 5)) + 4 * np.eye(5)
    R = np.array([[0.0, 1.3], [-1.3, 0.0]])
    rhs = rng.standard_normal((5, 2))
    Y = projected_solve(H, R, rhs)
    assert np.linalg.norm(H @ Y + Y @ R - rhs) <= 1e-12 * np.linalg.norm(rhs)


def test_projected_clash_raises():
    R = np.array([[1.5]])
    H = np.diag([-1.5, 2.0])
    with pytest.raises(SpectralClashError):
        projected_solve(H, R, np.ones((2, 1)))


# -- rank compression --------------------------------------------------------------------


def test_rank_compress_single_dyad(rng):
    u, v = rng.standard_normal((9, 1)), rng.standard_normal((3, 1))
    U2, V2 = rank_compress(u, v)
    assert U2.shape[1] == 1
    np.testing.assert_allclose(U2 @ V2.T, u @ v.T, atol=1e-13)


def test_rank_compress_dependent_columns(rng):
    U = rng.standard_normal((12, 3))
    V = rng.standard_normal((4, 3))
    V[:, 2] = V[:, 0] + V[:, 1]
    U2, V2 = rank_compress(U, V)
    assert U2.shape[1] == 2
    np.testing.assert_allclose(U2 @ V2.T, U @ V.T, atol=1e-12)


def test_rank_compress_full_rank(rng):
    U, V = rng.standard_normal((20, 3)), rng.standard_normal((5, 3))
    U2, V2 = rank_compress(U, V)
    assert U2.shape[1] == 3
    assert np.linalg.norm(U2 @ V2.T - U @ V.T) <= 1e-13 * np.linalg.norm(U) * np.linalg.norm(V)


def test_rank_compress_zero():
    U2, V2 = rank_compress(np.zeros((4, 2)), np.ones((3, 2)))
    assert U2.shape == (4, 0) and V2.shape == (3, 0)


# -- Arnoldi -----------------------------------------------------------------------------


@pytest.mark.parametrize("variant", ["poly", "extended"])
def test_identity_operator(variant, rng):
    u = rng.standard_normal(8)
    p = SylvesterProblem(np.eye(8), np.zeros((1, 1)), u, np.ones(1), applyZinv=np.eye(8))
    sol = solve(p, variant)
    assert sol.converged
    np.testing.assert_allclose(sol.real_E()[:, 0], u, atol=1e-13)
    if variant == "poly":
        assert sol.iterations == 1


@pytest.mark.parametrize("variant", ["poly", "extended", "block"])
def test_diagonal_operator(variant):
    Z = np.diag([1.0, 2.0, 3.0, 4.0])
    p = SylvesterProblem(Z, np.eye(1), np.ones(4), np.ones(1), applyZinv=np.linalg.inv(Z))
    sol = solve(p, variant)
    np.testing.assert_allclose(sol.real_E()[:, 0], [1 / 2, 1 / 3, 1 / 4, 1 / 5], rtol=1e-10)
    np.testing.assert_allclose(kronecker_solve(Z, np.eye(1), np.ones(4), np.ones(1))[:, 0], [1 / 2, 1 / 3, 1 / 4, 1 / 5])


def test_random_spd_against_kronecker(rng):
    N = 50
    Z = _spd(rng, N)
    sp_ = centroskew_split(build_tableau("gauss", 2))
    R = build_tableau("gauss", 2).A.T
    u = rng.standard_normal(N)
    v = np.ones(2)
    p = SylvesterProblem(Z, R, u, v)
    sol = solve_arnoldi(p)
    assert sol.converged
    E = sol.real_E()
    assert true_residual(Z, R, u, v, E) <= p.tol * np.linalg.norm(u) * np.linalg.norm(v) * 10
    assert _rel(E, kronecker_solve(Z, R, u, v)) <= 1e-8
    assert sp_.S.shape == (2, 2)


def test_arnoldi_relation_and_galerkin(rng):
    N = 60
    Z = _spd(rng, N) + 0.3 * rng.standard_normal((N, N))
    R = build_tableau("gauss", 3).A.T
    u, v = rng.standard_normal(N), rng.standard_normal(3)
    p = SylvesterProblem(Z, R, u, v, tol=1e-8)
    sol = solve_arnoldi(p)
    Vj = sol.basis
    np.testing.assert_allclose(Vj.T @ Vj, np.eye(Vj.shape[1]), atol=1e-10)
    resid = Z @ sol.E + sol.E @ R - np.outer(u, v)
    assert np.linalg.norm(Vj.T @ resid) <= 1e-10 * np.linalg.norm(u) * np.linalg.norm(v)
    true = np.linalg.norm(resid)
    assert abs(true - sol.residual_estimate) <= 1e-8 * np.linalg.norm(u) * np.linalg.norm(v) + 1e-2 * true


def test_space_grows_monotonically(rng):
    N = 80
    Z, Zi = _stiff_heat(N)
    R = build_tableau("gauss", 4).A.T
    u = rng.standard_normal(N)
    p = SylvesterProblem(Z, R, u, np.ones(4), applyZinv=Zi)
    dims = []
    for k in range(1, 8):
        p.kmax = k
        dims.append(solve_arnoldi(p).space_dim)
    assert all(b > a for a, b in zip(dims, dims[1:]))


def test_breakdown_is_lucky():
    # u spans a two-dimensional invariant subspace of Z
    Z = np.diag([1.0, 1.0, 5.0, 5.0, 7.0])
    u = np.array([1.0, 2.0, 0.0, 3.0, 0.0])
    p = SylvesterProblem(Z, np.eye(1), u, np.ones(1))
    sol = solve_arnoldi(p)
    assert sol.converged and sol.space_dim == 2
    np.testing.assert_allclose(sol.E[:, 0], u / (np.diag(Z) + 1), atol=1e-14)


def test_kmax_reached_is_flagged(rng):
    Z, Zi = _stiff_heat(64)
    R = build_tableau("gauss", 4).A.T
    p = SylvesterProblem(Z, R, rng.standard_normal(64), np.ones(4), kmax=3)
    sol = solve(p)
    assert not sol.converged and sol.iterations == 3
    with pytest.raises(ConvergenceError) as exc:
        solve(p, strict=True)
    assert exc.value.iterations == 3


def test_arnoldi_rejects_zero_and_wide_rhs():
    with pytest.raises(ValueError):
        solve_arnoldi(SylvesterProblem(np.eye(3), np.eye(1), np.zeros(3), np.ones(1)))
    with pytest.raises(ValueError):
        solve_arnoldi(SylvesterProblem(np.eye(3), np.eye(2), np.ones((3, 2)), np.ones((2, 2))))
    sol = solve(SylvesterProblem(np.eye(3), np.eye(1), np.zeros(3), np.ones(1)))
    assert sol.converged and not np.any(sol.E)


def test_problem_validation():
    with pytest.raises(ValueError):
        SylvesterProblem(np.eye(3), np.ones((2, 3)), np.ones(3), np.ones(2))
    with pytest.raises(ValueError):
        SylvesterProblem(np.eye(3), np.eye(2), np.ones((3, 4)), np.ones((2, 4)))
    with pytest.raises(ValueError):
        SylvesterProblem(np.eye(3), np.eye(1), np.ones(3), np.ones(1), tol=0.0)
    with pytest.raises(ValueError):
        SylvesterProblem(np.eye(3), np.eye(1), np.ones(3), np.ones(1), kmax=0)
    with pytest.raises(ValueError):
        solve(SylvesterProblem(np.eye(3), np.eye(1), np.ones(3), np.ones(1)), "rational")


# -- extended Krylov ---------------------------------------------------------------------


def test_extended_halves_space_on_stiff_heat(rng):
    # the gain needs h*lambda_min(L) << 1, so that Z spans many decades
    Z, Zi = _stiff_heat(64, h=1e-5)
    R = build_tableau("gauss", 4).A.T
    u = rng.standard_normal(64)
    p = SylvesterProblem(Z, R, u, np.ones(4), applyZinv=Zi)
    poly = solve(p, "poly")
    ext = solve(p, "extended")
    assert poly.converged and ext.converged
    assert ext.space_dim <= poly.space_dim / 2
    ref = kronecker_solve(Z, R, u, np.ones(4))
    assert _rel(ext.real_E(), ref) <= 1e-8
    assert _rel(poly.real_E(), ref) <= 1e-8


def test_moderate_step_both_variants_converge(rng):
    # at h*lambda_min(L) ~ 1 the polynomial space is the smaller one
    Z, Zi = _stiff_heat(64, h=0.1)
    R = build_tableau("gauss", 4).A.T
    u = rng.standard_normal(64)
    p = SylvesterProblem(Z, R, u, np.ones(4), applyZinv=Zi)
    ref = kronecker_solve(Z, R, u, np.ones(4))
    for variant in ("poly", "extended"):
        assert _rel(solve(p, variant).real_E(), ref) <= 1e-8


def test_extended_needs_inverse():
    with pytest.raises(ValueError):
        solve_extended(SylvesterProblem(np.eye(3), np.eye(1), np.ones(3), np.ones(1)))


def test_extended_space_grows_by_two(rng):
    Z, Zi = _stiff_heat(40)
    R = build_tableau("gauss", 3).A.T
    p = SylvesterProblem(Z, R, rng.standard_normal(40), np.ones(3), applyZinv=Zi, kmax=4, tol=1e-30)
    sol = solve_extended(p)
    assert sol.space_dim == 1 + 2 * 4


# -- block Krylov ------------------------------------------------------------------------


def test_block_duplicate_columns_match_arnoldi(rng):
    N = 40
    Z = _spd(rng, N)
    R = build_tableau("gauss", 3).A.T
    u, v = rng.standard_normal(N), rng.standard_normal(3)
    a = solve_arnoldi(SylvesterProblem(Z, R, u, v))
    b = solve_block(SylvesterProblem(Z, R, np.column_stack([u, u]), np.column_stack([v, v]) / 2))
    assert b.converged
    np.testing.assert_allclose(b.real_E(), a.real_E(), atol=1e-9 * np.linalg.norm(a.E))


def test_block_rank_three_against_kronecker(rng):
    N = 32
    Z, Zi = _stiff_heat(N, h=0.05)
    R = build_tableau("radau-iia", 3).A.T
    U, V = rng.standard_normal((N, 3)), rng.standard_normal((3, 3))
    p = SylvesterProblem(Z, R, U, V)
    sol = solve(p, "block")
    assert sol.converged
    ref = kronecker_solve(Z, R, U, V)
    assert _rel(sol.real_E(), ref) <= 1e-8
    scale = np.linalg.norm(U) * np.linalg.norm(V)
    assert true_residual(Z, R, U, V, sol.real_E()) <= 1e-8 * scale


def test_block_with_diagonal_scaling(rng):
    N = 24
    Z = _spd(rng, N)
    R = build_tableau("gauss", 2).A.T
    D = np.array([1.0, 0.25])
    U, V = rng.standard_normal((N, 2)), rng.standard_normal((2, 2))
    sol = solve_block(SylvesterProblem(Z, R, U, V), D=D)
    E = sol.real_E()
    assert np.linalg.norm(Z @ E @ np.diag(D) + E @ R - U @ V.T) <= 1e-8 * np.linalg.norm(U @ V.T)
    ext = solve(SylvesterProblem(Z, R, U, V, applyZinv=np.linalg.inv(Z)), "extended", D=D)
    np.testing.assert_allclose(ext.real_E(), E, atol=1e-8 * np.linalg.norm(E))


def test_block_zero_rhs():
    sol = solve_block(SylvesterProblem(np.eye(4), np.eye(2), np.zeros((4, 2)), np.ones((2, 2))))
    assert sol.converged and sol.space_dim == 0 and sol.E.shape == (4, 2)


def test_callable_operator(rng):
    N = 30
    Z = _spd(rng, N)
    R = build_tableau("gauss", 2).A.T
    u = rng.standard_normal(N)
    sol = solve(SylvesterProblem(lambda x: Z @ x, R, u, np.ones(2)))
    assert _rel(sol.real_E(), kronecker_solve(Z, R, u, np.ones(2))) <= 1e-8
    assert syl.DEFAULT_TOL == 1e-10 and syl.DEFAULT_KMAX == 200
