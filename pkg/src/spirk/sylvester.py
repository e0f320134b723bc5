"""Galerkin projection solvers for ``Z E + E R = U V^T`` with low-rank ``U V^T``.

``Z`` is only available through its action (and, for the extended space,
the action of its inverse); ``R`` is a small dense matrix.  Three projection
spaces are offered: the polynomial Krylov space (Arnoldi), the extended
Krylov space in ``Z`` and ``Z^{-1}``, and the block Krylov space for
right-hand sides of rank two or three.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceError, SpectralClashError

__all__ = [
    "SylvesterProblem",
    "SylvesterSolution",
    "projected_solve",
    "rank_compress",
    "solve_arnoldi",
    "solve_extended",
    "solve_block",
    "solve",
    "kronecker_solve",
    "true_residual",
]

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_KMAX = 200
DEFAULT_KMAX_EXTENDED = 100

Operator = Callable[[np.ndarray], np.ndarray]


def as_operator(Z) -> Operator:
    if callable(Z):
        return Z
    return lambda x: Z @ x


@dataclass
class SylvesterProblem:
    """Data of ``Z E + E R = U V^T``.

    ``applyZ`` and ``applyZinv`` act on vectors (1-d) or column blocks (2-d).
    """

    applyZ: Operator
    R: np.ndarray
    U: np.ndarray
    V: np.ndarray
    applyZinv: Optional[Operator] = None
    tol: float = DEFAULT_TOL
    kmax: int = DEFAULT_KMAX

    def __post_init__(self):
        self.applyZ = as_operator(self.applyZ)
        if self.applyZinv is not None:
            self.applyZinv = as_operator(self.applyZinv)
        self.R = np.atleast_2d(np.asarray(self.R))
        U = np.asarray(self.U)
        V = np.asarray(self.V)
        self.U = U.reshape(-1, 1) if U.ndim == 1 else U
        self.V = V.reshape(-1, 1) if V.ndim == 1 else V
        k = self.R.shape[0]
        if self.R.shape != (k, k):
            raise ValueError("R must be square")
        if self.V.shape[0] != k or self.U.shape[1] != self.V.shape[1]:
            raise ValueError(f"factor shapes U{self.U.shape}, V{self.V.shape} do not match R{self.R.shape}")
        if self.U.shape[1] > 3:
            raise ValueError("right-hand side rank must be <= 3")
        if not self.tol > 0 or self.kmax < 1:
            raise ValueError("tol must be positive and kmax >= 1")

    @property
    def N(self) -> int:
        return self.U.shape[0]

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def rhs_norm(self) -> float:
        return float(np.linalg.norm(self.U) * np.linalg.norm(self.V))


@dataclass
class SylvesterSolution:
    basis: np.ndarray
    Y: np.ndarray
    iterations: int
    residual_estimate: float
    space_dim: int
    converged: bool
    variant: str
    residual_true: Optional[float] = None
    history: list = field(default_factory=list)

    @property
    def E(self) -> np.ndarray:
        E = self.basis @ self.Y
        return E

    def real_E(self) -> np.ndarray:
        E = self.E
        return E.real if np.iscomplexobj(E) else E


# -- small dense kernels --------------------------------------------------------------


def projected_solve(H, R, rhs, clash_tol=None):
    """Solve ``H Y + Y R = rhs`` for small dense ``H`` and ``R``.

    A complex Schur form of ``R`` is computed and ``Y`` is recovered one
    column at a time by shifted solves with ``H``.

    ``clash_tol`` bounds ``|lam_H + mu_R| / (|lam_H| + |mu_R|)`` from below.

    Raises
    ------
    SpectralClashError
        If an eigenvalue of ``H`` meets an eigenvalue of ``-R``.
    """
    H = np.atleast_2d(np.asarray(H))
    R = np.atleast_2d(np.asarray(R))
    rhs = np.asarray(rhs).reshape(H.shape[0], R.shape[0])
    T, Q = sla.schur(R.astype(complex), output="complex")
    if clash_tol is None:
        clash_tol = 1e3 * np.finfo(float).eps
    lam_H = np.linalg.eigvals(H)
    mu = np.diag(T)
    # pairwise relative test: ||H|| may be huge when Z is close to singular
    sep = np.abs(lam_H[:, None] + mu[None, :])
    size = np.abs(lam_H)[:, None] + np.abs(mu)[None, :]
    rel = sep / np.maximum(size, 1e-300)
    if np.any(rel <= clash_tol):
        gap = float(sep.ravel()[np.argmin(rel)])
        raise SpectralClashError(
            f"spectra of H and -R intersect (separation {gap:.3e}); projected equation is singular"
        )
    C = rhs @ Q
    Yt = np.empty(C.shape, dtype=complex)
    eye = np.eye(H.shape[0])
    for k in range(T.shape[0]):
        col = C[:, k] - Yt[:, :k] @ T[:k, k]
        Yt[:, k] = np.linalg.solve(H + T[k, k] * eye, col)
    Y = Yt @ Q.conj().T
    if not (np.iscomplexobj(H) or np.iscomplexobj(R) or np.iscomplexobj(rhs)):
        Y = Y.real
    return Y


def rank_compress(U, V, threshold=1e-12):
    """Reduce ``U V^T`` to a factorisation of numerical rank.

    Returns ``(U', V')`` with ``U' V'^T = U V^T`` up to
    ``threshold * ||U|| ||V||`` and ``U'`` having orthogonal columns.
    """
    U = np.asarray(U)
    V = np.asarray(V)
    U = U.reshape(-1, 1) if U.ndim == 1 else U
    V = V.reshape(-1, 1) if V.ndim == 1 else V
    scale = np.linalg.norm(U) * np.linalg.norm(V)
    if scale == 0:
        return U[:, :0], V[:, :0]
    Qu, Ru = np.linalg.qr(U)
    Qv, Rv = np.linalg.qr(V)
    P, sig, Qh = np.linalg.svd(Ru @ Rv.T)
    r = int(np.sum(sig > threshold * scale))
    return Qu @ (P[:, :r] * sig[:r]), Qv @ Qh[:r].T.conj()


def true_residual(applyZ, R, U, V, E):
    """Frobenius norm of ``Z E + E R - U V^T``."""
    applyZ = as_operator(applyZ)
    U = U.reshape(-1, 1) if U.ndim == 1 else U
    V = V.reshape(-1, 1) if V.ndim == 1 else V
    return float(np.linalg.norm(applyZ(E) + E @ R - U @ V.T))


def kronecker_solve(Z, R, U, V):
    """Dense oracle: solve ``(I (x) Z + R^T (x) I) vec(E) = vec(U V^T)``."""
    Z = np.asarray(Z)
    R = np.atleast_2d(R)
    U = U.reshape(-1, 1) if U.ndim == 1 else U
    V = V.reshape(-1, 1) if V.ndim == 1 else V
    N, k = Z.shape[0], R.shape[0]
    K = np.kron(np.eye(k), Z) + np.kron(R.T, np.eye(N))
    rhs = (U @ V.T).reshape(-1, order="F")
    return np.linalg.solve(K, rhs).reshape(N, k, order="F")


def _as_matrix_op(op):
    def apply(X):
        if X.ndim == 1:
            return op(X)
        return np.column_stack([op(X[:, j]) for j in range(X.shape[1])])

    return apply


# -- polynomial Krylov ----------------------------------------------------------------


def solve_arnoldi(p: SylvesterProblem) -> SylvesterSolution:
    """One-sided Galerkin projection onto ``K_k(Z, u)`` for a rank-one right-hand side.

    Modified Gram-Schmidt with one classical refinement pass.  The loop exits
    when ``|h_{j+1,j}| ||e_j^T Y_j|| < tol ||u|| ||v||``, on breakdown (the
    space is invariant and the projected solution exact), or at ``kmax``.
    """
    if p.rank != 1:
        raise ValueError("solve_arnoldi needs a rank-one right-hand side; use solve_block")
    u = p.U[:, 0]
    v = p.V[:, 0]
    beta = np.linalg.norm(u)
    if beta == 0:
        raise ValueError("u must be nonzero")
    dtype = np.result_type(u, v, p.R, 1.0)
    N, k = p.N, p.R.shape[0]
    kmax = p.kmax
    Vb = np.zeros((N, kmax + 1), dtype=np.result_type(dtype, u))
    H = np.zeros((kmax + 1, kmax), dtype=Vb.dtype)
    Vb[:, 0] = u / beta
    target = p.tol * beta * np.linalg.norm(v)
    history = []
    rho = np.inf
    Y = None
    for j in range(kmax):
        w = np.asarray(p.applyZ(Vb[:, j]), dtype=Vb.dtype)
        for i in range(j + 1):
            H[i, j] = np.vdot(Vb[:, i], w)
            w = w - H[i, j] * Vb[:, i]
        corr = Vb[:, : j + 1].conj().T @ w
        w = w - Vb[:, : j + 1] @ corr
        H[: j + 1, j] += corr
        hnext = np.linalg.norm(w)
        H[j + 1, j] = hnext
        rhs = np.zeros((j + 1, k), dtype=dtype)
        rhs[0] = beta * v
        Y = projected_solve(H[: j + 1, : j + 1], p.R, rhs)
        rho = abs(hnext) * np.linalg.norm(Y[j])
        history.append(float(rho))
        breakdown = hnext <= 1e-14 * max(np.abs(H[: j + 1, j]).max(), 1e-300)
        if breakdown or rho < target:
            return SylvesterSolution(
                Vb[:, : j + 1], Y, j + 1, float(rho), j + 1, True, "poly", history=history
            )
        Vb[:, j + 1] = w / hnext
    log.warning("Arnoldi Sylvester solver hit kmax=%d (residual %.3e)", kmax, rho)
    return SylvesterSolution(Vb[:, :kmax], Y, kmax, float(rho), kmax, False, "poly", history=history)


# -- extended Krylov ------------------------------------------------------------------


class _Basis:
    """Orthonormal basis ``V`` with the images ``W = Z V`` kept alongside."""

    def __init__(self, N, capacity, dtype):
        self.V = np.zeros((N, capacity), dtype=dtype)
        self.W = np.zeros((N, capacity), dtype=dtype)
        self.m = 0

    def orthogonalize(self, x):
        """Two passes of block Gram-Schmidt; returns (x_perp, coefficients)."""
        Vm = self.V[:, : self.m]
        coef = np.zeros((self.m,) + x.shape[1:], dtype=self.V.dtype)
        for _ in range(2):
            c = Vm.conj().T @ x
            x = x - Vm @ c
            coef = coef + c
        return x, coef

    def append(self, v, zv):
        if self.m >= self.V.shape[1]:
            grow = self.V.shape[1]
            self.V = np.hstack([self.V, np.zeros_like(self.V[:, :grow])])
            self.W = np.hstack([self.W, np.zeros_like(self.W[:, :grow])])
        self.V[:, self.m] = v
        self.W[:, self.m] = zv
        self.m += 1


def solve_extended(p: SylvesterProblem) -> SylvesterSolution:
    """Galerkin projection onto the extended Krylov space ``E_{2k}(Z, U)``.

    Each cycle appends the orthogonalised ``Z``-image of the newest
    positive-power vector and the ``Z^{-1}``-image of the newest
    negative-power vector, so the space grows by two vectors per rank-one
    column per cycle.  ``Z`` applied to a negative-power vector is recovered
    from the stored images without another application of ``Z``.
    """
    if p.applyZinv is None:
        raise ValueError("solve_extended requires applyZinv")
    U, Vr = p.U, p.V
    r = U.shape[1]
    dtype = np.result_type(U, Vr, p.R, 1.0)
    N, k = p.N, p.R.shape[0]
    applyZ = _as_matrix_op(p.applyZ)
    applyZinv = _as_matrix_op(p.applyZinv)
    basis = _Basis(N, 2 * r * (p.kmax + 1), dtype)
    target = p.tol * p.rhs_norm()
    history = []

    # starting block: orthonormal basis of range(U)
    Q, Rq = np.linalg.qr(U)
    keep = np.abs(np.diag(Rq)) > 1e-14 * max(np.abs(Rq).max(), 1e-300)
    Q = Q[:, keep]
    if Q.shape[1] == 0:
        raise ValueError("right-hand side is zero")
    ZQ = np.asarray(applyZ(Q), dtype=dtype)
    for j in range(Q.shape[1]):
        basis.append(Q[:, j], ZQ[:, j])
    last_plus = ZQ  # Z applied to the newest positive-power block
    last_minus = Q  # newest negative-power block
    Y, rho, H = None, np.inf, None

    def project():
        m = basis.m
        Vm, Wm = basis.V[:, :m], basis.W[:, :m]
        Hm = Vm.conj().T @ Wm
        rhs = (Vm.conj().T @ U) @ Vr.T
        Ym = projected_solve(Hm, p.R, rhs)
        resid = Wm - Vm @ Hm
        return Hm, Ym, float(np.linalg.norm(resid @ Ym))

    for cycle in range(1, p.kmax + 1):
        # negative-power direction from the newest negative block
        zi = np.asarray(applyZinv(last_minus), dtype=dtype)
        # positive-power direction: Z times newest positive block
        plus_cand = last_plus
        plus_perp, plus_coef = basis.orthogonalize(plus_cand)
        plus_new, plus_img = _append_block(basis, plus_perp, plus_coef, applyZ, image=None)
        minus_perp, minus_coef = basis.orthogonalize(zi)
        minus_new, _ = _append_block(basis, minus_perp, minus_coef, applyZ, image=last_minus)
        H, Y, rho = project()
        history.append(rho)
        grew = plus_new.shape[1] + minus_new.shape[1]
        if rho < target or grew == 0:
            return SylvesterSolution(
                basis.V[:, : basis.m].copy(), Y, cycle, rho, basis.m, True, "extended", history=history
            )
        if plus_new.shape[1]:
            last_plus = plus_img
        if minus_new.shape[1]:
            last_minus = minus_new
    log.warning("extended Krylov Sylvester solver hit kmax=%d (residual %.3e)", p.kmax, rho)
    return SylvesterSolution(
        basis.V[:, : basis.m].copy(), Y, p.kmax, rho, basis.m, False, "extended", history=history
    )


def _append_block(basis, x_perp, coef, applyZ, image):
    """Normalise the columns of ``x_perp`` into ``basis`` and record their Z-images.

    ``image`` is ``Z`` applied to the un-orthogonalised candidate when that is
    known (negative-power vectors); otherwise ``Z`` is applied to the new
    vectors.  Returns the appended columns and, for positive-power blocks,
    their ``Z``-images (the next positive candidate).
    """
    added, images = [], []
    for j in range(x_perp.shape[1]):
        x = x_perp[:, j]
        c = coef[:, j]
        # orthogonalise against vectors added earlier in this block
        for prev in added:
            d = np.vdot(prev, x)
            x = x - d * prev
            c = np.append(c, d)
        nrm = np.linalg.norm(x)
        ref = np.linalg.norm(c) + nrm
        if nrm <= 1e-12 * max(ref, 1e-300):
            continue
        v = x / nrm
        if image is not None:
            # Z v = (Z x_cand - sum_i c_i Z v_i) / nrm with Z x_cand known
            m0 = basis.m - len(added)
            Wprev = basis.W[:, : m0 + len(added)]
            zv = (image[:, j] - Wprev @ c[: Wprev.shape[1]]) / nrm
        else:
            zv = np.asarray(applyZ(v), dtype=basis.V.dtype)
            images.append(zv)
        basis.append(v, zv)
        added.append(v)
    new = np.column_stack(added) if added else np.zeros((x_perp.shape[0], 0), dtype=basis.V.dtype)
    imgs = np.column_stack(images) if images else None
    return new, imgs


# -- block Krylov ---------------------------------------------------------------------


def solve_block(p: SylvesterProblem, D=None, compress_tol=1e-12) -> SylvesterSolution:
    """Block-Arnoldi Galerkin projection for a right-hand side of rank up to three.

    If ``D`` (diagonal entries) is given the equation is read as
    ``Z E D + E R = U V^T`` and reduced to ``Z E + E (R D^{-1}) = U (D^{-1} V)^T``.
    The right-hand side is compressed to numerical rank first and the block
    size equals that rank; columns that become dependent are deflated.
    """
    R, V = p.R, p.V
    if D is not None:
        Dinv = 1.0 / np.asarray(D, dtype=float).ravel()
        R = R * Dinv[None, :]
        V = V * Dinv[:, None]
    U, V = rank_compress(p.U, V, compress_tol)
    N, k = p.N, R.shape[0]
    dtype = np.result_type(U, V, R, p.U, 1.0)
    if U.shape[1] == 0:
        return SylvesterSolution(np.zeros((N, 0), dtype), np.zeros((0, k), dtype), 0, 0.0, 0, True, "block")
    applyZ = _as_matrix_op(p.applyZ)
    target = p.tol * np.linalg.norm(U) * np.linalg.norm(V)
    Q, beta = np.linalg.qr(U)
    blocks = [Q]
    m = Q.shape[1]
    cap = m * (p.kmax + 1)
    Vb = np.zeros((N, cap), dtype=dtype)
    H = np.zeros((cap, cap), dtype=dtype)
    Vb[:, :m] = Q
    start = 0
    history = []
    rho, Y = np.inf, None
    rhs_small = None
    for it in range(1, p.kmax + 1):
        blk = blocks[-1]
        b = blk.shape[1]
        Wz = np.asarray(applyZ(blk), dtype=dtype)
        cols = slice(start, start + b)
        for _ in range(2):
            c = Vb[:, :m].conj().T @ Wz
            Wz = Wz - Vb[:, :m] @ c
            H[:m, cols] += c
        Qn, Rn = np.linalg.qr(Wz)
        rhs_small = np.zeros((m, k), dtype=dtype)
        rhs_small[: beta.shape[0]] = beta @ V.T
        Y = projected_solve(H[:m, :m], R, rhs_small)
        rho = float(np.linalg.norm(Rn @ Y[cols]))
        history.append(rho)
        # deflate directions that are numerically in the space already
        diag = np.abs(np.diag(Rn))
        keep = diag > 1e-12 * max(np.abs(H[:m, :m]).max(), 1e-300)
        if rho < target or not keep.any() or m + int(keep.sum()) > cap:
            converged = rho < target or not keep.any()
            return SylvesterSolution(Vb[:, :m].copy(), Y, it, rho, m, converged, "block", history=history)
        Qn, Rn = Qn[:, keep], Rn[keep]
        nb = Qn.shape[1]
        Vb[:, m : m + nb] = Qn
        H[m : m + nb, cols] = Rn
        blocks.append(Qn)
        start = m
        m += nb
    log.warning("block Krylov Sylvester solver hit kmax=%d (residual %.3e)", p.kmax, rho)
    return SylvesterSolution(Vb[:, :m].copy(), Y, p.kmax, rho, m, False, "block", history=history)


def solve(p: SylvesterProblem, variant="poly", D=None, strict=False) -> SylvesterSolution:
    """Dispatch to one of the projection variants.

    ``variant="poly"`` falls through to the block solver when the right-hand
    side has rank above one or ``D`` is given.  With ``strict=True`` a
    non-converged solve raises :class:`ConvergenceError`.
    """
    if variant == "extended":
        if D is not None:
            Dinv = 1.0 / np.asarray(D, dtype=float).ravel()
            p = SylvesterProblem(
                p.applyZ, p.R * Dinv[None, :], p.U, p.V * Dinv[:, None], p.applyZinv, p.tol, p.kmax
            )
        U, V = rank_compress(p.U, p.V)
        if U.shape[1] == 0:
            return SylvesterSolution(
                np.zeros((p.N, 0)), np.zeros((0, p.R.shape[0])), 0, 0.0, 0, True, "extended"
            )
        p = SylvesterProblem(p.applyZ, p.R, U, V, p.applyZinv, p.tol, p.kmax)
        sol = solve_extended(p)
    elif variant == "poly" and p.rank == 1 and D is None:
        if np.linalg.norm(p.U) == 0 or np.linalg.norm(p.V) == 0:
            return SylvesterSolution(np.zeros((p.N, 0)), np.zeros((0, p.R.shape[0])), 0, 0.0, 0, True, "poly")
        sol = solve_arnoldi(p)
    elif variant in ("poly", "block"):
        sol = solve_block(p, D=D)
    else:
        raise ValueError(f"unknown Sylvester variant {variant!r}")
    if strict and not sol.converged:
        raise ConvergenceError(
            f"{sol.variant} Sylvester solver did not converge in {sol.iterations} iterations",
            residual=sol.residual_estimate,
            iterations=sol.iterations,
        )
    return sol
