"""Per-stage shifted systems ``(M + h*lambda_j*L) z_j = r_j``, factorised and solved concurrently."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularShiftError

__all__ = [
    "ShiftedFactorSet",
    "factor_all",
    "solve_all",
    "resolve_threads",
    "as_sparse",
    "is_identity",
    "THREADS_ENV",
]

THREADS_ENV = "SPIRK_THREADS"


def resolve_threads(threads=None, cap=None) -> int:
    """Thread count from the argument, then ``$SPIRK_THREADS``, then the CPU count."""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else (os.cpu_count() or 1)
    threads = max(1, int(threads))
    if cap is not None:
        threads = min(threads, max(1, int(cap)))
    return threads


def as_sparse(A) -> sp.csr_matrix:
    if sp.issparse(A):
        return sp.csr_matrix(A)
    return sp.csr_matrix(np.atleast_2d(np.asarray(A)))


def is_identity(A) -> bool:
    """Structural identity check: exactly the diagonal pattern with unit values."""
    if A is None:
        return True
    A = as_sparse(A)
    n = A.shape[0]
    if A.shape != (n, n) or A.nnz != n:
        return False
    A = A.tocoo()
    return bool(np.all(A.row == A.col) and np.all(A.data == 1.0))


class _Factor:
    """LU factorisation of one shifted matrix, real when the shift is real."""

    def __init__(self, mat):
        self.real = not np.iscomplexobj(mat.data) or not np.any(mat.data.imag)
        if self.real and np.iscomplexobj(mat.data):
            mat = mat.real
        self.n = mat.shape[0]
        self.lu = spla.splu(sp.csc_matrix(mat))

    def solve(self, b):
        if self.real and np.iscomplexobj(b):
            return self.lu.solve(np.ascontiguousarray(b.real)) + 1j * self.lu.solve(
                np.ascontiguousarray(b.imag)
            )
        return self.lu.solve(np.ascontiguousarray(b))


@dataclass
class ShiftedFactorSet:
    """Factorisations of ``M + shift_j * L`` for the stage shifts ``shift_j = h*lambda_j``.

    Only one member of each complex-conjugate pair is factorised; the partner
    is solved by conjugating right-hand side and solution.
    """

    shifts: np.ndarray
    factors: dict  # representative index -> _Factor
    source: tuple  # source[j] = (representative index, conjugated?)
    h: float
    threads: int = 1
    n: int = 0
    matrices: dict = field(default_factory=dict, repr=False)

    @property
    def s(self) -> int:
        return self.shifts.size

    @property
    def n_factorizations(self) -> int:
        return len(self.factors)

    def solve_one(self, j, rhs):
        rep, conj = self.source[j]
        f = self.factors[rep]
        if conj:
            return np.conj(f.solve(np.conj(rhs)))
        return f.solve(rhs)

    def probe_residual(self, j, rng=None) -> float:
        """Relative residual of stage ``j`` on a random probe vector."""
        rng = np.random.default_rng(0) if rng is None else rng
        b = rng.standard_normal(self.n) + 1j * rng.standard_normal(self.n)
        x = self.solve_one(j, b)
        Mmat = self.matrices["M"]
        Lmat = self.matrices["L"]
        r = Mmat @ x + self.shifts[j] * (Lmat @ x) - b
        return float(np.linalg.norm(r) / np.linalg.norm(b))


def _conjugate_map(shifts, partner, tol):
    source = []
    reps = []
    for j, lam in enumerate(shifts):
        pj = partner[j] if partner is not None else j
        if pj != j and pj < j and abs(shifts[pj] - np.conj(lam)) <= tol:
            source.append((pj, True))
        else:
            source.append((j, False))
            reps.append(j)
    return reps, source


def factor_all(M, L, h, eig, threads=None) -> ShiftedFactorSet:
    """Factorise ``M + h*lambda_j*L`` for every eigenvalue ``lambda_j`` of ``eig``.

    Parameters
    ----------
    M, L : sparse or dense (N, N)
        Mass matrix (``None`` means identity) and operator.
    h : float
        Step size, ``h > 0``.
    eig : EigBundle or array_like
        Eigenvalues (and conjugate-pair map) of the stage matrix in use.
    threads : int, optional
        Worker cap; defaults to :func:`resolve_threads`.

    Raises
    ------
    SingularShiftError
        If a shifted matrix is exactly singular.
    """
    if not h > 0:
        raise ValueError("step size must be positive")
    L = as_sparse(L)
    n = L.shape[0]
    M = sp.identity(n, format="csr") if M is None else as_sparse(M)
    if M.shape != L.shape:
        raise ValueError(f"M{M.shape} and L{L.shape} differ in shape")
    values = np.asarray(getattr(eig, "values", eig), dtype=complex).ravel()
    partner = getattr(eig, "partner", None)
    shifts = h * values
    scale = max(np.max(np.abs(shifts)), 1.0)
    reps, source = _conjugate_map(shifts, partner, 1e-13 * scale)
    threads = resolve_threads(threads, cap=len(reps))

    Mc, Lc = M.tocsc(), L.tocsc()

    def work(j):
        lam = shifts[j]
        mat = Mc + (lam.real * Lc if lam.imag == 0 else lam * Lc)
        try:
            return j, _Factor(mat)
        except RuntimeError as exc:
            raise SingularShiftError(j, lam) from exc

    if threads == 1:
        results = [work(j) for j in reps]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, reps))
    return ShiftedFactorSet(
        shifts=shifts,
        factors=dict(results),
        source=tuple(source),
        h=float(h),
        threads=threads,
        n=n,
        matrices={"M": M, "L": L},
    )


def solve_all(fs: ShiftedFactorSet, rhs, threads=None) -> np.ndarray:
    """Solve column ``j`` of ``rhs`` with the ``j``-th shifted matrix.

    Columns belonging to a conjugate pair whose right-hand sides are also
    conjugate are recovered by conjugation instead of a second solve.
    """
    rhs = np.asarray(rhs)
    if rhs.ndim != 2 or rhs.shape[1] != fs.s or rhs.shape[0] != fs.n:
        raise ValueError(f"right-hand side shape {rhs.shape} does not match ({fs.n}, {fs.s})")
    out = np.empty(rhs.shape, dtype=complex)
    todo, mirrored = [], []
    for j in range(fs.s):
        rep, conj = fs.source[j]
        if conj and np.array_equal(rhs[:, j], np.conj(rhs[:, rep])):
            mirrored.append((j, rep))
        else:
            todo.append(j)
    threads = resolve_threads(fs.threads if threads is None else threads, cap=len(todo))

    def work(j):
        out[:, j] = fs.solve_one(j, rhs[:, j])

    if threads == 1 or len(todo) <= 1:
        for j in todo:
            work(j)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, todo))
    for j, rep in mirrored:
        out[:, j] = np.conj(out[:, rep])
    return out
